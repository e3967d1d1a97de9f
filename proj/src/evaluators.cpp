#include "coevo/evaluators.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "coevo/error.hpp"
#include "coevo/rng.hpp"

namespace coevo {

// ---------------------------------------------------------------------------
// Evaluator

Evaluator::Evaluator(SearchSpace space) : space_(std::move(space)) { require_valid(space_); }

double Evaluator::eval_global(const Chromosome& c) {
    check_chromosome(space_, c);
    counter_.fetch_add(1);
    const double s = score_global(c);
    if (!(s >= 0.0 && s <= 1.0))
        throw EvaluationError(EvaluationError::Kind::out_of_range,
                              "score " + std::to_string(s) + " out of [0, 1] for " + alleles_to_string(c.alleles));
    return s;
}

double Evaluator::eval_local(const Block& b) {
    check_block(space_, b);
    if (has_native_local()) return score_local(b);
    if (!context_) throw PreconditionError("frozen-context local evaluation needs a context chromosome");
    Chromosome c = *context_;
    const auto& ids = space_.genes_of(b.tag);
    for (std::size_t i = 0; i < ids.size(); ++i) c.alleles[static_cast<std::size_t>(ids[i])] = b.alleles[i];
    return eval_global(c);
}

double Evaluator::score_local(const Block&) {
    throw PreconditionError("evaluator has no native local score");
}

void Evaluator::set_context(const Chromosome& context) {
    check_chromosome(space_, context);
    context_ = context;
}

// ---------------------------------------------------------------------------
// SyntheticLandscape

SyntheticLandscape::SyntheticLandscape(SearchSpace space, std::vector<std::vector<double>> utilities,
                                       std::vector<InteractionPair> pairs, double lambda, double noise,
                                       std::uint64_t seed)
    : Evaluator(std::move(space)),
      utilities_(std::move(utilities)),
      pairs_(std::move(pairs)),
      lambda_(lambda),
      noise_(noise),
      seed_(seed) {
    if (lambda_ < 0.0) throw PreconditionError("interaction weight must be >= 0");
    if (noise_ < 0.0) throw PreconditionError("noise stdev must be >= 0");
    if (utilities_.size() != space_.gene_count()) throw PreconditionError("one utility table per gene required");
    for (std::size_t g = 0; g < utilities_.size(); ++g)
        if (utilities_[g].size() != space_.arity(static_cast<int>(g)))
            throw PreconditionError("utility table of gene " + std::to_string(g) + " has wrong length");

    auto minmax = [](const std::vector<double>& v) {
        auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return std::pair{*lo, *hi};
    };
    lo_ = hi_ = 0.0;
    for (const auto& u : utilities_) {
        auto [l, h] = minmax(u);
        lo_ += l;
        hi_ += h;
    }
    for (const auto& p : pairs_) {
        if (p.gene_a < 0 || p.gene_b < 0 || p.gene_a >= static_cast<int>(space_.gene_count()) ||
            p.gene_b >= static_cast<int>(space_.gene_count()))
            throw PreconditionError("interaction pair references unknown gene");
        if (p.coupling.size() != space_.arity(p.gene_a)) throw PreconditionError("coupling table has wrong shape");
        double l = std::numeric_limits<double>::infinity();
        double h = -l;
        for (const auto& row : p.coupling) {
            if (row.size() != space_.arity(p.gene_b)) throw PreconditionError("coupling table has wrong shape");
            auto [rl, rh] = minmax(row);
            l = std::min(l, rl);
            h = std::max(h, rh);
        }
        lo_ += lambda_ * l;
        hi_ += lambda_ * h;
    }
    for (BlockTag tag : space_.tags()) {
        double l = 0.0;
        double h = 0.0;
        for (int id : space_.genes_of(tag)) {
            auto [gl, gh] = minmax(utilities_[static_cast<std::size_t>(id)]);
            l += gl;
            h += gh;
        }
        block_bounds_[tag] = {l, h};
    }
}

std::unique_ptr<SyntheticLandscape> SyntheticLandscape::generate(const SearchSpace& space, const SyntheticParams& params) {
    require_valid(space);
    Rng rng = Rng::child(params.seed, "synthetic-landscape");
    std::vector<std::vector<double>> utilities;
    for (const auto& g : space.genes) {
        std::vector<double> u;
        for (std::size_t a = 0; a < g.candidates.size(); ++a) u.push_back(rng.uniform01());
        utilities.push_back(std::move(u));
    }

    std::vector<std::pair<int, int>> eligible;
    const int k = static_cast<int>(space.gene_count());
    for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b)
            if (space.genes[static_cast<std::size_t>(a)].block != space.genes[static_cast<std::size_t>(b)].block)
                eligible.emplace_back(a, b);
    if (params.interaction_pairs < 0 || static_cast<std::size_t>(params.interaction_pairs) > eligible.size())
        throw PreconditionError("cannot place " + std::to_string(params.interaction_pairs) +
                                " distinct cross-block interaction pairs");

    std::vector<InteractionPair> pairs;
    for (int i = 0; i < params.interaction_pairs; ++i) {
        const std::size_t pick = rng.uniform_index(eligible.size());
        auto [a, b] = eligible[pick];
        eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(pick));
        InteractionPair p{a, b, {}};
        for (std::size_t x = 0; x < space.arity(a); ++x) {
            std::vector<double> row;
            for (std::size_t y = 0; y < space.arity(b); ++y) row.push_back(rng.uniform01());
            p.coupling.push_back(std::move(row));
        }
        pairs.push_back(std::move(p));
    }
    return std::make_unique<SyntheticLandscape>(space, std::move(utilities), std::move(pairs), params.lambda,
                                                params.noise, params.seed);
}

std::unique_ptr<Evaluator> SyntheticLandscape::clone() const {
    return std::make_unique<SyntheticLandscape>(space_, utilities_, pairs_, lambda_, noise_, seed_);
}

double SyntheticLandscape::raw(const Chromosome& c) const {
    double s = 0.0;
    for (std::size_t g = 0; g < c.alleles.size(); ++g) s += utilities_[g][static_cast<std::size_t>(c.alleles[g])];
    for (const auto& p : pairs_)
        s += lambda_ * p.coupling[static_cast<std::size_t>(c.alleles[static_cast<std::size_t>(p.gene_a)])]
                                 [static_cast<std::size_t>(c.alleles[static_cast<std::size_t>(p.gene_b)])];
    return s;
}

double SyntheticLandscape::score(const Chromosome& c) const {
    check_chromosome(space_, c);
    double s = hi_ > lo_ ? (raw(c) - lo_) / (hi_ - lo_) : 0.5;
    if (noise_ > 0.0) {
        std::uint64_t h = mix64(seed_ ^ 0x6e6f697365ULL);
        for (int a : c.alleles) h = mix64(h ^ static_cast<std::uint64_t>(a));
        const double u1 = (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = static_cast<double>(mix64(h + 1) >> 11) * 0x1.0p-53;
        s += noise_ * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    return std::clamp(s, 0.0, 1.0);
}

double SyntheticLandscape::local_score(const Block& b) const {
    check_block(space_, b);
    const auto& ids = space_.genes_of(b.tag);
    double s = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i)
        s += utilities_[static_cast<std::size_t>(ids[i])][static_cast<std::size_t>(b.alleles[i])];
    auto [lo, hi] = block_bounds_.at(b.tag);
    return hi > lo ? std::clamp((s - lo) / (hi - lo), 0.0, 1.0) : 0.5;
}

// ---------------------------------------------------------------------------
// TabularBenchmark

TabularBenchmark::TabularBenchmark(SearchSpace space, std::map<std::vector<int>, double> table, std::string source)
    : Evaluator(std::move(space)), table_(std::move(table)), source_(std::move(source)) {
    for (const auto& [alleles, score] : table_) {
        if (!is_valid(space_, Chromosome{alleles}))
            throw ParseError("tabular entry " + alleles_to_string(alleles) + " does not fit the search space");
        if (!(score >= 0.0 && score <= 1.0))
            throw ParseError("tabular score " + std::to_string(score) + " for " + alleles_to_string(alleles) +
                             " out of [0, 1]");
    }
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}
}  // namespace

std::unique_ptr<TabularBenchmark> TabularBenchmark::load(const SearchSpace& space, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open tabular benchmark " + path);
    const std::size_t k = space.gene_count();
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() != k + 1) throw ParseError(path + ": header has " + std::to_string(header.size()) +
                                                 " columns, expected K+1=" + std::to_string(k + 1));
    for (std::size_t i = 0; i < k; ++i)
        if (header[i] != "allele_" + std::to_string(i)) throw ParseError(path + ": bad header column '" + header[i] + "'");
    if (header[k] != "score") throw ParseError(path + ": last header column must be 'score'");

    std::map<std::vector<int>, double> table;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (cells.size() != k + 1) throw ParseError(path + ":" + std::to_string(row) + ": wrong column count");
        std::vector<int> alleles;
        try {
            for (std::size_t i = 0; i < k; ++i) {
                std::size_t used = 0;
                alleles.push_back(std::stoi(cells[i], &used));
                if (used != cells[i].size()) throw std::invalid_argument("trailing");
            }
            std::size_t used = 0;
            const double score = std::stod(cells[k], &used);
            if (used != cells[k].size()) throw std::invalid_argument("trailing");
            if (!(score >= 0.0 && score <= 1.0))
                throw ParseError(path + ":" + std::to_string(row) + ": score " + cells[k] + " out of [0, 1]");
            if (!table.emplace(alleles, score).second)
                throw ParseError(path + ":" + std::to_string(row) + ": duplicate architecture " + alleles_to_string(alleles));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(row) + ": non-numeric cell");
        }
    }
    return std::make_unique<TabularBenchmark>(space, std::move(table), path);
}

std::unique_ptr<Evaluator> TabularBenchmark::clone() const {
    return std::make_unique<TabularBenchmark>(space_, table_, source_);
}

double TabularBenchmark::score_global(const Chromosome& c) {
    auto it = table_.find(c.alleles);
    if (it == table_.end())
        throw EvaluationError(EvaluationError::Kind::missing_architecture,
                              "architecture " + alleles_to_string(c.alleles) + " missing from tabular benchmark " + source_);
    return it->second;
}

// ---------------------------------------------------------------------------
// ExternalEvaluator

struct ExternalEvaluator::Child {
    std::mutex mutex;
    pid_t pid = -1;
    int to_child = -1;
    int from_child = -1;
    std::string buffer;

    ~Child() { terminate(); }

    bool alive() const { return pid > 0; }

    void terminate() {
        if (to_child >= 0) ::close(to_child);
        if (from_child >= 0) ::close(from_child);
        to_child = from_child = -1;
        if (pid > 0) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, nullptr, 0);
        }
        pid = -1;
        buffer.clear();
    }

    void spawn(const std::vector<std::string>& argv) {
        if (argv.empty()) throw EvaluationError(EvaluationError::Kind::process_failure, "empty evaluator command");
        std::signal(SIGPIPE, SIG_IGN);
        int in_pipe[2];
        int out_pipe[2];
        if (::pipe(in_pipe) != 0) throw EvaluationError(EvaluationError::Kind::process_failure, "pipe failed");
        if (::pipe(out_pipe) != 0) {
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            throw EvaluationError(EvaluationError::Kind::process_failure, "pipe failed");
        }
        const pid_t p = ::fork();
        if (p < 0) throw EvaluationError(EvaluationError::Kind::process_failure, "fork failed");
        if (p == 0) {
            ::dup2(in_pipe[0], STDIN_FILENO);
            ::dup2(out_pipe[1], STDOUT_FILENO);
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            ::close(out_pipe[0]);
            ::close(out_pipe[1]);
            std::vector<char*> args;
            for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
            args.push_back(nullptr);
            ::execvp(args[0], args.data());
            ::_exit(127);
        }
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        ::fcntl(in_pipe[1], F_SETFD, FD_CLOEXEC);
        ::fcntl(out_pipe[0], F_SETFD, FD_CLOEXEC);
        pid = p;
        to_child = in_pipe[1];
        from_child = out_pipe[0];
    }

    void write_line(const std::string& line) {
        std::string data = line + "\n";
        std::size_t off = 0;
        while (off < data.size()) {
            const ssize_t n = ::write(to_child, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw EvaluationError(EvaluationError::Kind::process_failure,
                                      std::string("write to evaluator failed: ") + std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string read_line(std::chrono::steady_clock::time_point deadline) {
        while (true) {
            auto nl = buffer.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer.substr(0, nl);
                buffer.erase(0, nl + 1);
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw EvaluationError(EvaluationError::Kind::timeout, "evaluator timed out");
            pollfd pfd{from_child, POLLIN, 0};
            const int r = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1'000'000)));
            if (r < 0) {
                if (errno == EINTR) continue;
                throw EvaluationError(EvaluationError::Kind::process_failure, "poll failed");
            }
            if (r == 0) continue;
            char chunk[4096];
            const ssize_t n = ::read(from_child, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw EvaluationError(EvaluationError::Kind::process_failure, "read from evaluator failed");
            }
            if (n == 0) throw EvaluationError(EvaluationError::Kind::process_failure, "evaluator closed its output");
            buffer.append(chunk, static_cast<std::size_t>(n));
        }
    }
};

ExternalEvaluator::ExternalEvaluator(SearchSpace space, ExternalBridgeConfig config)
    : Evaluator(std::move(space)), config_(std::move(config)) {
    if (config_.command.empty()) throw PreconditionError("external evaluator needs a command");
    if (config_.pool_size < 1) throw PreconditionError("external evaluator pool size must be >= 1");
    for (int i = 0; i < config_.pool_size; ++i) children_.push_back(std::make_unique<Child>());
}

ExternalEvaluator::~ExternalEvaluator() = default;

std::unique_ptr<Evaluator> ExternalEvaluator::clone() const {
    return std::make_unique<ExternalEvaluator>(space_, config_);
}

double ExternalEvaluator::request(Child& child, const Chromosome& c) {
    const auto deadline = std::chrono::steady_clock::now() + config_.timeout;
    if (!child.alive()) {
        child.spawn(config_.command);
        child.write_line(nlohmann::json{{"type", "hello"}, {"space", space_to_json(space_)}}.dump());
    }
    std::vector<std::string> gene_names;
    for (const auto& g : space_.genes) gene_names.push_back(g.name);
    nlohmann::json req{{"type", "eval_global"},
                       {"alleles", c.alleles},
                       {"gene_names", gene_names},
                       {"candidate_names", candidate_names(space_, c)}};
    child.write_line(req.dump());
    const std::string line = child.read_line(deadline);
    nlohmann::json resp;
    try {
        resp = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw EvaluationError(EvaluationError::Kind::malformed_response, "evaluator response is not JSON: " + line);
    }
    if (!resp.is_object() || !resp.contains("score") || !resp["score"].is_number())
        throw EvaluationError(EvaluationError::Kind::malformed_response, "evaluator response lacks a numeric score: " + line);
    const double s = resp["score"].get<double>();
    if (!(s >= 0.0 && s <= 1.0))
        throw EvaluationError(EvaluationError::Kind::out_of_range, "evaluator score " + std::to_string(s) + " out of [0, 1]");
    return s;
}

double ExternalEvaluator::score_global(const Chromosome& c) {
    Child& child = *children_[next_child_.fetch_add(1) % children_.size()];
    std::lock_guard lock(child.mutex);
    try {
        return request(child, c);
    } catch (const EvaluationError&) {
        // A child in an unknown protocol state is never reused.
        child.terminate();
        if (config_.assign_zero_on_error) return 0.0;
        throw;
    }
}

// ---------------------------------------------------------------------------
// Factory

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& path,
                std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) out.push_back(path + "." + it.key() + ": unknown key");
}

}  // namespace

std::vector<std::string> validate(const EvaluatorConfig& cfg, const std::string& path) {
    std::vector<std::string> out;
    const std::string pp = path + ".parameters";
    const auto& p = cfg.parameters;
    if (!p.is_object()) return {pp + ": must be an object"};
    if (cfg.kind == "synthetic") {
        check_keys(p, {"lambda", "interaction_pairs", "noise", "seed"}, pp, out);
        if (p.contains("lambda") && !(p["lambda"].is_number() && p["lambda"].get<double>() >= 0.0))
            out.push_back(pp + ".lambda: must be a number >= 0");
        if (p.contains("interaction_pairs") &&
            !(p["interaction_pairs"].is_number_integer() && p["interaction_pairs"].get<int>() >= 0))
            out.push_back(pp + ".interaction_pairs: must be an integer >= 0");
        if (p.contains("noise") && !(p["noise"].is_number() && p["noise"].get<double>() >= 0.0))
            out.push_back(pp + ".noise: must be a number >= 0");
        if (p.contains("seed") &&
            !(p["seed"].is_number_unsigned() || (p["seed"].is_number_integer() && p["seed"].get<std::int64_t>() >= 0)))
            out.push_back(pp + ".seed: must be an integer >= 0");
    } else if (cfg.kind == "tabular") {
        check_keys(p, {"path"}, pp, out);
        if (!p.contains("path") || !p["path"].is_string()) out.push_back(pp + ".path: required string");
    } else if (cfg.kind == "external") {
        check_keys(p, {"command", "timeout_s", "on_error", "pool_size"}, pp, out);
        if (!p.contains("command") || !(p["command"].is_string() || p["command"].is_array()))
            out.push_back(pp + ".command: required string or array of strings");
        if (p.contains("timeout_s") && !(p["timeout_s"].is_number() && p["timeout_s"].get<double>() > 0.0))
            out.push_back(pp + ".timeout_s: must be a number > 0");
        if (p.contains("on_error") && !(p["on_error"] == "abort" || p["on_error"] == "zero"))
            out.push_back(pp + ".on_error: must be \"abort\" or \"zero\"");
        if (p.contains("pool_size") && !(p["pool_size"].is_number_integer() && p["pool_size"].get<int>() >= 1))
            out.push_back(pp + ".pool_size: must be an integer >= 1");
    } else {
        out.push_back(path + ".kind: must be one of synthetic, tabular, external");
    }
    return out;
}

SyntheticParams synthetic_params_from_json(const nlohmann::json& j) {
    SyntheticParams p;
    if (j.contains("lambda")) p.lambda = j["lambda"].get<double>();
    if (j.contains("interaction_pairs")) p.interaction_pairs = j["interaction_pairs"].get<int>();
    if (j.contains("noise")) p.noise = j["noise"].get<double>();
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    return p;
}

std::unique_ptr<Evaluator> make_evaluator(const SearchSpace& space, const EvaluatorConfig& cfg) {
    if (auto problems = validate(cfg); !problems.empty()) throw ConfigError(std::move(problems));
    const auto& p = cfg.parameters;
    if (cfg.kind == "synthetic") return SyntheticLandscape::generate(space, synthetic_params_from_json(p));
    if (cfg.kind == "tabular") return TabularBenchmark::load(space, p["path"].get<std::string>());
    ExternalBridgeConfig bridge;
    if (p["command"].is_string()) bridge.command = {"/bin/sh", "-c", p["command"].get<std::string>()};
    else bridge.command = p["command"].get<std::vector<std::string>>();
    if (p.contains("timeout_s"))
        bridge.timeout = std::chrono::milliseconds(static_cast<long long>(p["timeout_s"].get<double>() * 1000.0));
    if (p.contains("on_error")) bridge.assign_zero_on_error = p["on_error"] == "zero";
    if (p.contains("pool_size")) bridge.pool_size = p["pool_size"].get<int>();
    return std::make_unique<ExternalEvaluator>(space, std::move(bridge));
}

// ---------------------------------------------------------------------------

std::pair<Chromosome, double> bruteforce_optimum(const SearchSpace& space, Evaluator& evaluator, std::uint64_t cap) {
    require_valid(space);
    const auto size = space_size(space);
    if (size > cap)
        throw PreconditionError("space has " + size.str() + " chromosomes, exceeding the enumeration cap of " +
                                std::to_string(cap));
    Chromosome cur{std::vector<int>(space.gene_count(), 0)};
    Chromosome best = cur;
    double best_score = -1.0;
    while (true) {
        const double s = evaluator.eval_global(cur);
        if (s > best_score) {
            best_score = s;
            best = cur;
        }
        std::size_t i = cur.alleles.size();
        bool done = true;
        while (i > 0) {
            --i;
            if (static_cast<std::size_t>(++cur.alleles[i]) < space.arity(static_cast<int>(i))) {
                done = false;
                break;
            }
            cur.alleles[i] = 0;
        }
        if (done) break;
    }
    return {best, best_score};
}

}  // namespace coevo
