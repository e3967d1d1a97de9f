#include "coevo/config.hpp"

#include <algorithm>
#include <climits>
#include <fstream>
#include <set>
#include <sstream>

#include "coevo/error.hpp"

namespace coevo {

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error([&] {
          std::string msg = "invalid configuration:";
          for (const auto& p : problems) msg += "\n  " + p;
          return msg;
      }()),
      problems_(std::move(problems)) {}

namespace {

using nlohmann::json;

bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads one JSON object section, recording type problems and unknown keys.
class Section {
public:
    Section(const json& parent, const std::string& key, std::vector<std::string>& problems)
        : path_(key), problems_(problems) {
        if (!parent.contains(key)) return;
        if (!parent[key].is_object()) {
            problems_.push_back(path_ + ": must be an object");
            return;
        }
        obj_ = &parent[key];
    }

    bool present() const { return obj_ != nullptr; }

    void number(const char* key, double& out) {
        if (auto* v = take(key)) {
            if (v->is_number()) out = v->get<double>();
            else problems_.push_back(path_ + "." + key + ": must be a number");
        }
    }
    void integer(const char* key, int& out) {
        if (auto* v = take(key)) {
            if (v->is_number_integer() && v->get<std::int64_t>() >= INT32_MIN && v->get<std::int64_t>() <= INT32_MAX)
                out = v->get<int>();
            else problems_.push_back(path_ + "." + key + ": must be an integer");
        }
    }
    void size(const char* key, std::size_t& out) {
        if (auto* v = take(key)) {
            if (non_negative_integer(*v)) out = v->get<std::size_t>();
            else problems_.push_back(path_ + "." + key + ": must be a non-negative integer");
        }
    }
    void u64(const char* key, std::uint64_t& out) {
        if (auto* v = take(key)) {
            if (non_negative_integer(*v)) out = v->get<std::uint64_t>();
            else problems_.push_back(path_ + "." + key + ": must be a non-negative integer");
        }
    }
    void boolean(const char* key, bool& out) {
        if (auto* v = take(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else problems_.push_back(path_ + "." + key + ": must be true or false");
        }
    }
    void string(const char* key, std::string& out) {
        if (auto* v = take(key)) {
            if (v->is_string()) out = v->get<std::string>();
            else problems_.push_back(path_ + "." + key + ": must be a string");
        }
    }
    void numbers(const char* key, std::vector<double>& out) {
        if (auto* v = take(key)) {
            if (v->is_array() && !v->empty() && std::all_of(v->begin(), v->end(), [](const json& x) { return x.is_number(); }))
                out = v->get<std::vector<double>>();
            else problems_.push_back(path_ + "." + key + ": must be a non-empty array of numbers");
        }
    }
    const json* raw(const char* key) { return take(key); }

    void finish() {
        if (!obj_) return;
        for (auto it = obj_->begin(); it != obj_->end(); ++it)
            if (!seen_.count(it.key())) problems_.push_back(path_ + "." + it.key() + ": unknown key");
    }

    const std::string& path() const { return path_; }

private:
    const json* take(const char* key) {
        if (!obj_) return nullptr;
        seen_.insert(key);
        auto it = obj_->find(key);
        return it == obj_->end() ? nullptr : &*it;
    }

    const json* obj_ = nullptr;
    std::string path_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

}  // namespace

std::vector<std::string> validate(const RunConfig& c) {
    std::vector<std::string> out;
    if (c.population < 2) out.emplace_back("run.N: must be >= 2");
    if (c.generations < 1) out.emplace_back("run.T: must be >= 1");
    if (c.local_steps < 1) out.emplace_back("run.T_LS: must be >= 1");
    if (c.elites < 1) out.emplace_back("run.E: must be >= 1");
    if (c.budget < 1) out.emplace_back("run.budget: must be >= 1");
    if (c.tournament_k < 1) out.emplace_back("run.tournament_k: must be >= 1");
    if (c.eval_parallelism < 1) out.emplace_back("run.eval_parallelism: must be >= 1");
    for (auto& p : validate(c.spdi)) out.push_back("spdi: " + p);
    for (auto& p : validate(c.madts, "madts")) out.push_back(p);
    for (auto& p : validate(c.evaluator, "evaluator")) out.push_back(p);
    if (c.transport.workers < 0) out.emplace_back("transport.workers: must be >= 0");
    if (!(c.transport.accept_timeout_s > 0.0)) out.emplace_back("transport.accept_timeout_s: must be > 0");
    if (!(c.transport.worker_timeout_s > 0.0)) out.emplace_back("transport.worker_timeout_s: must be > 0");
    if (c.transport.bind.find(':') == std::string::npos) out.emplace_back("transport.bind: must be host:port");
    return out;
}

ExperimentConfig parse_config(const nlohmann::json& j) {
    std::vector<std::string> problems;
    if (!j.is_object()) throw ConfigError({"config root must be an object"});
    static const std::set<std::string> kSections{"space", "run", "spdi", "madts", "evaluator", "transport", "ablation"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!kSections.count(it.key())) problems.push_back(it.key() + ": unknown key");

    ExperimentConfig cfg;
    if (!j.contains("space")) {
        problems.emplace_back("space: required");
    } else {
        try {
            const auto& sj = j["space"];
            if (sj.is_string() && sj == "desk") cfg.space = presets::desk_space();
            else if (sj.is_string() && sj == "nas_k18") cfg.space = presets::nas_space();
            else if (sj.is_string()) problems.emplace_back("space: unknown preset \"" + sj.get<std::string>() + "\"");
            else cfg.space = space_from_json(sj);
        } catch (const InvalidSpaceError& e) {
            for (const auto& v : e.violations()) problems.push_back(v.rfind("space", 0) == 0 ? v : "space: " + v);
        }
    }

    auto& r = cfg.run;
    Section run(j, "run", problems);
    run.integer("N", r.population);
    run.integer("T", r.generations);
    run.integer("T_LS", r.local_steps);
    run.integer("E", r.elites);
    run.integer("budget", r.budget);
    run.u64("seed", r.seed);
    run.integer("tournament_k", r.tournament_k);
    run.integer("eval_parallelism", r.eval_parallelism);
    run.boolean("parallel_workers", r.parallel_workers);
    run.boolean("record_wallclock", r.record_wallclock);
    run.finish();

    Section spdi(j, "spdi", problems);
    spdi.number("p_cross_high", r.spdi.p_cross_high);
    spdi.number("p_cross_low", r.spdi.p_cross_low);
    spdi.number("p_mut_high", r.spdi.p_mut_high);
    spdi.number("p_mut_low", r.spdi.p_mut_low);
    spdi.number("rho", r.spdi.rho);
    spdi.number("epsilon", r.spdi.epsilon_guard);
    spdi.finish();

    if (j.contains("madts")) {
        try {
            r.madts = madts_from_json(j["madts"]);
        } catch (const ConfigError& e) {
            problems.insert(problems.end(), e.problems().begin(), e.problems().end());
        }
    }

    Section ev(j, "evaluator", problems);
    ev.string("kind", r.evaluator.kind);
    if (const auto* p = ev.raw("parameters")) r.evaluator.parameters = *p;
    ev.finish();

    Section tr(j, "transport", problems);
    std::string mode = "in_process";
    tr.string("mode", mode);
    if (mode == "in_process") r.transport.mode = TransportMode::in_process;
    else if (mode == "tcp") r.transport.mode = TransportMode::tcp;
    else problems.emplace_back("transport.mode: must be \"in_process\" or \"tcp\"");
    tr.string("bind", r.transport.bind);
    tr.integer("workers", r.transport.workers);
    tr.number("accept_timeout_s", r.transport.accept_timeout_s);
    tr.number("worker_timeout_s", r.transport.worker_timeout_s);
    tr.finish();

    Section ab(j, "ablation", problems);
    ab.boolean("disable_macc", r.ablation.disable_macc);
    ab.boolean("disable_madts", r.ablation.disable_madts);
    ab.boolean("disable_spdi", r.ablation.disable_spdi);
    ab.finish();

    for (auto& p : validate(r)) problems.push_back(std::move(p));
    if (problems.empty() && r.transport.mode == TransportMode::tcp && r.transport.workers != 0 &&
        static_cast<std::size_t>(r.transport.workers) != cfg.space.block_count())
        problems.emplace_back("transport.workers: must equal M + 1 (one worker per block)");
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file " + path});
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError({path + ": " + e.what()});
    }
    return parse_config(j);
}

nlohmann::json madts_to_json(const MadtsConfig& m) {
    return {{"window", m.window},
            {"epsilon", m.epsilon},
            {"beta", m.beta},
            {"archive_capacity", m.archive_capacity},
            {"local_pop", m.local_pop},
            {"local_crossover", m.local_crossover},
            {"local_mutation", m.local_mutation},
            {"tournament_k", m.tournament_k},
            {"surrogate_enabled", m.surrogate_enabled},
            {"grid",
             {{"lengthscales", m.grid.lengthscales},
              {"signal_variances", m.grid.signal_variances},
              {"noise_variances", m.grid.noise_variances}}}};
}

MadtsConfig madts_from_json(const nlohmann::json& j) {
    std::vector<std::string> problems;
    MadtsConfig m;
    const nlohmann::json root{{"madts", j}};
    Section s(root, "madts", problems);
    s.integer("window", m.window);
    s.number("epsilon", m.epsilon);
    s.number("beta", m.beta);
    s.size("archive_capacity", m.archive_capacity);
    s.integer("local_pop", m.local_pop);
    s.number("local_crossover", m.local_crossover);
    s.number("local_mutation", m.local_mutation);
    s.integer("tournament_k", m.tournament_k);
    s.boolean("surrogate_enabled", m.surrogate_enabled);
    if (const auto* gj = s.raw("grid")) {
        const nlohmann::json groot{{"madts.grid", *gj}};
        Section gs(groot, "madts.grid", problems);
        gs.numbers("lengthscales", m.grid.lengthscales);
        gs.numbers("signal_variances", m.grid.signal_variances);
        gs.numbers("noise_variances", m.grid.noise_variances);
        gs.finish();
        auto positive = [&](const std::vector<double>& v, const char* name, bool allow_zero) {
            for (double x : v)
                if (!(allow_zero ? x >= 0.0 : x > 0.0))
                    problems.push_back(std::string("madts.grid.") + name + (allow_zero ? ": values must be >= 0" : ": values must be > 0"));
        };
        positive(m.grid.lengthscales, "lengthscales", false);
        positive(m.grid.signal_variances, "signal_variances", false);
        positive(m.grid.noise_variances, "noise_variances", true);
    }
    s.finish();
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return m;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    const auto& r = cfg.run;
    return {
        {"space", space_to_json(cfg.space)},
        {"run",
         {{"N", r.population},
          {"T", r.generations},
          {"T_LS", r.local_steps},
          {"E", r.elites},
          {"budget", r.budget},
          {"seed", r.seed},
          {"tournament_k", r.tournament_k},
          {"eval_parallelism", r.eval_parallelism},
          {"parallel_workers", r.parallel_workers},
          {"record_wallclock", r.record_wallclock}}},
        {"spdi",
         {{"p_cross_high", r.spdi.p_cross_high},
          {"p_cross_low", r.spdi.p_cross_low},
          {"p_mut_high", r.spdi.p_mut_high},
          {"p_mut_low", r.spdi.p_mut_low},
          {"rho", r.spdi.rho},
          {"epsilon", r.spdi.epsilon_guard}}},
        {"madts", madts_to_json(r.madts)},
        {"evaluator", {{"kind", r.evaluator.kind}, {"parameters", r.evaluator.parameters}}},
        {"transport",
         {{"mode", r.transport.mode == TransportMode::tcp ? "tcp" : "in_process"},
          {"bind", r.transport.bind},
          {"workers", r.transport.workers},
          {"accept_timeout_s", r.transport.accept_timeout_s},
          {"worker_timeout_s", r.transport.worker_timeout_s}}},
        {"ablation",
         {{"disable_macc", r.ablation.disable_macc},
          {"disable_madts", r.ablation.disable_madts},
          {"disable_spdi", r.ablation.disable_spdi}}},
    };
}

ExperimentConfig desk_experiment() {
    ExperimentConfig cfg;
    cfg.space = presets::desk_space();
    cfg.run.evaluator.kind = "synthetic";
    cfg.run.evaluator.parameters = {{"lambda", 0.3}, {"interaction_pairs", 4}, {"noise", 0.0}, {"seed", 7}};
    return cfg;
}

}  // namespace coevo
