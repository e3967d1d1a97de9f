#include "coevo/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "coevo/error.hpp"
#include "coevo/io.hpp"

namespace coevo {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "coevo-checkpoint";
constexpr int kCheckpointVersion = 1;

json individual_json(const Individual& ind) {
    return {{"alleles", ind.chromosome.alleles},
            {"fitness", ind.fitness ? json(*ind.fitness) : json(nullptr)},
            {"origin", to_string(ind.origin)},
            {"born", ind.born}};
}

Individual individual_from(const SearchSpace& space, const json& j) {
    Individual ind;
    ind.chromosome.alleles = j.at("alleles").get<std::vector<int>>();
    check_chromosome(space, ind.chromosome);
    if (!j.at("fitness").is_null()) ind.fitness = j.at("fitness").get<double>();
    ind.origin = origin_from_string(j.at("origin").get<std::string>());
    ind.born = j.at("born").get<int>();
    return ind;
}

json record_json(const GenerationRecord& r) {
    return {{"generation", r.generation},
            {"best_fitness", r.best_fitness},
            {"mean_fitness", r.mean_fitness},
            {"spdi", r.spdi},
            {"tau", r.tau},
            {"mode", to_string(r.mode)},
            {"p_cross", r.p_cross},
            {"p_mut", r.p_mut},
            {"true_evals_cum", r.true_evals_cum},
            {"merged_count", r.merged_count},
            {"wallclock_ms", r.wallclock_ms},
            {"distance_computations", r.distance_computations},
            {"proposals", r.proposals},
            {"fusion_fits", r.fusion_fits}};
}

GenerationRecord record_from(const json& j) {
    GenerationRecord r;
    r.generation = j.at("generation").get<int>();
    r.best_fitness = j.at("best_fitness").get<double>();
    r.mean_fitness = j.at("mean_fitness").get<double>();
    r.spdi = j.at("spdi").get<double>();
    r.tau = j.at("tau").get<double>();
    r.mode = mode_from_string(j.at("mode").get<std::string>());
    r.p_cross = j.at("p_cross").get<double>();
    r.p_mut = j.at("p_mut").get<double>();
    r.true_evals_cum = j.at("true_evals_cum").get<std::uint64_t>();
    r.merged_count = j.at("merged_count").get<std::size_t>();
    r.wallclock_ms = j.at("wallclock_ms").get<double>();
    r.distance_computations = j.at("distance_computations").get<std::uint64_t>();
    r.proposals = j.at("proposals").get<std::uint64_t>();
    r.fusion_fits = j.at("fusion_fits").get<std::uint64_t>();
    return r;
}

std::vector<std::vector<double>> encodings_of(const SearchSpace& space, const std::vector<Individual>& members) {
    std::vector<std::vector<double>> out;
    out.reserve(members.size());
    for (const auto& m : members) out.push_back(encode(space, m.chromosome));
    return out;
}

}  // namespace

std::optional<std::uint64_t> RunResult::evals_to_reach(double target) const {
    for (const auto& imp : improvements)
        if (imp.fitness >= target) return imp.true_evals;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Coordinator operations

std::vector<Candidate> merge_elites(const SearchSpace& space, const std::vector<std::vector<EliteBlock>>& elite_sets) {
    const auto tags = space.tags();
    if (elite_sets.size() != tags.size())
        throw MergeError("expected " + std::to_string(tags.size()) + " elite sets, got " +
                         std::to_string(elite_sets.size()));
    std::size_t total = 1;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (elite_sets[i].empty()) throw MergeError("elite set for tag " + tags[i].to_string() + " is empty");
        for (const auto& e : elite_sets[i])
            if (e.block.tag != tags[i])
                throw MergeError("elite set " + std::to_string(i) + " holds a block of tag " + e.block.tag.to_string());
        total *= elite_sets[i].size();
    }

    std::vector<Candidate> out;
    out.reserve(total);
    std::vector<std::size_t> idx(tags.size(), 0);
    std::vector<Block> parts(tags.size());
    for (std::size_t n = 0; n < total; ++n) {
        double estimate = 0.0;
        for (std::size_t i = 0; i < tags.size(); ++i) {
            parts[i] = elite_sets[i][idx[i]].block;
            estimate += elite_sets[i][idx[i]].estimate;
        }
        out.push_back({reassemble(space, parts), estimate});
        for (std::size_t i = tags.size(); i-- > 0;) {
            if (++idx[i] < elite_sets[i].size()) break;
            idx[i] = 0;
        }
    }
    return out;
}

std::vector<Candidate> dedup_candidates(std::vector<Candidate> candidates) {
    std::set<Chromosome> seen;
    std::vector<Candidate> out;
    out.reserve(candidates.size());
    for (auto& c : candidates)
        if (seen.insert(c.chromosome).second) out.push_back(std::move(c));
    return out;
}

std::vector<Candidate> rank_candidates(std::vector<Candidate> candidates, bool surrogate_ranking, Rng& rng) {
    if (surrogate_ranking) {
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) { return a.estimate > b.estimate; });
        return candidates;
    }
    for (std::size_t i = candidates.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(candidates[i - 1], candidates[j]);
    }
    return candidates;
}

std::vector<double> evaluate_batch(Evaluator& evaluator, const std::vector<Chromosome>& chromosomes, int parallelism) {
    std::vector<double> scores(chromosomes.size());
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, parallelism)), chromosomes.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < chromosomes.size(); ++i) scores[i] = evaluator.eval_global(chromosomes[i]);
        return scores;
    }
    std::vector<std::exception_ptr> errors(chromosomes.size());
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            for (std::size_t i = w; i < chromosomes.size(); i += workers) {
                try {
                    scores[i] = evaluator.eval_global(chromosomes[i]);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return scores;
}

std::vector<Individual> evaluate_candidates(const std::vector<Candidate>& candidates, Evaluator& evaluator,
                                            std::size_t budget, int generation, int parallelism) {
    if (candidates.empty()) throw PreconditionError("no candidates to evaluate");
    const std::size_t n = std::min(budget, candidates.size());
    std::vector<Chromosome> chosen;
    chosen.reserve(n);
    for (std::size_t i = 0; i < n; ++i) chosen.push_back(candidates[i].chromosome);
    const auto scores = evaluate_batch(evaluator, chosen, parallelism);
    std::vector<Individual> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({std::move(chosen[i]), scores[i], Origin::merged_elite, generation});
    return out;
}

bool survivor_before(const Individual& a, const Individual& b) {
    const double fa = a.fitness.value_or(-1.0);
    const double fb = b.fitness.value_or(-1.0);
    if (fa != fb) return fa > fb;
    if (a.born != b.born) return a.born < b.born;
    return a.chromosome.alleles < b.chromosome.alleles;
}

std::vector<Individual> select_survivors(const SearchSpace& space, const std::vector<Individual>& current,
                                         const std::vector<Individual>& candidates, std::size_t n, Rng& rng,
                                         Evaluator& evaluator, int generation,
                                         const std::function<void(const Individual&)>& on_fresh) {
    std::vector<Individual> pool;
    pool.reserve(current.size() + candidates.size());
    for (const auto* group : {&current, &candidates})
        for (const auto& ind : *group) {
            if (!ind.fitness) throw PreconditionError("survivor selection needs evaluated individuals");
            pool.push_back(ind);
        }
    std::stable_sort(pool.begin(), pool.end(), survivor_before);

    std::set<Chromosome> seen;
    std::vector<Individual> out;
    for (auto& ind : pool) {
        if (out.size() == n) break;
        if (seen.insert(ind.chromosome).second) out.push_back(std::move(ind));
    }
    for (const auto& ind : pool) seen.insert(ind.chromosome);

    if (out.size() < n) {
        const auto capacity = space_size(space);
        while (out.size() < n && capacity > seen.size()) {
            Chromosome c = random_chromosome(space, rng);
            if (!seen.insert(c).second) continue;
            Individual fresh{c, evaluator.eval_global(c), Origin::init, generation};
            if (on_fresh) on_fresh(fresh);
            out.push_back(std::move(fresh));
        }
        std::stable_sort(out.begin(), out.end(), survivor_before);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(ExperimentConfig cfg, Evaluator& evaluator, WorkerPool* pool)
    : cfg_(std::move(cfg)), evaluator_(evaluator), external_pool_(pool) {
    require_valid(cfg_.space);
    if (auto problems = validate(cfg_.run); !problems.empty()) throw ConfigError(std::move(problems));
    if (space_fingerprint(evaluator_.space()) != space_fingerprint(cfg_.space))
        throw PreconditionError("evaluator was built for a different search space");
    if (cfg_.run.ablation.disable_madts) cfg_.run.madts.surrogate_enabled = false;

    const auto seed = cfg_.run.seed;
    state_.rng = Rng::child(seed, "coordinator");
    for (BlockTag tag : cfg_.space.tags())
        state_.workers.emplace(tag, make_worker_state(tag, cfg_.run.madts, Rng::child(seed, "worker-" + tag.to_string())));
}

WorkerPool& Engine::pool() {
    if (external_pool_) return *external_pool_;
    if (!owned_pool_)
        owned_pool_ = std::make_unique<InProcessPool>(cfg_.space, cfg_.run.madts, evaluator_, cfg_.run.parallel_workers);
    return *owned_pool_;
}

RateDecision Engine::rates_for(double spdi_value) const {
    return cfg_.run.ablation.disable_spdi ? fixed_rates(spdi_value, state_.threshold, cfg_.run.spdi)
                                          : decide_rates(spdi_value, state_.threshold, cfg_.run.spdi);
}

void Engine::commit(const std::vector<Individual>& evaluated) {
    for (const auto& ind : evaluated) {
        ++state_.true_evals;
        if (*ind.fitness > state_.best_fitness) {
            state_.best_fitness = *ind.fitness;
            state_.best = ind.chromosome;
            state_.improvements.push_back({state_.true_evals, *ind.fitness});
        }
    }
}

std::vector<Individual> Engine::evaluate_fresh(std::vector<Individual> unevaluated) {
    std::vector<Chromosome> cs;
    cs.reserve(unevaluated.size());
    for (const auto& ind : unevaluated) cs.push_back(ind.chromosome);
    const auto scores = evaluate_batch(evaluator_, cs, cfg_.run.eval_parallelism);
    for (std::size_t i = 0; i < unevaluated.size(); ++i) unevaluated[i].fitness = scores[i];
    commit(unevaluated);
    return unevaluated;
}

std::size_t Engine::merge_budget_equivalent() const {
    std::uint64_t product = 1;
    for (BlockTag tag : cfg_.space.tags()) {
        product *= std::min<std::uint64_t>(static_cast<std::uint64_t>(cfg_.run.elites), block_space_size(cfg_.space, tag));
        if (product >= static_cast<std::uint64_t>(cfg_.run.budget)) break;
    }
    return static_cast<std::size_t>(std::min<std::uint64_t>(product, static_cast<std::uint64_t>(cfg_.run.budget)));
}

std::map<BlockTag, std::vector<FeedbackEntry>> Engine::build_feedback(const std::vector<Individual>& evaluated) const {
    std::map<BlockTag, std::vector<FeedbackEntry>> out;
    std::map<Block, std::size_t> index;
    for (const auto& ind : evaluated) {
        for (auto& block : decompose(cfg_.space, ind.chromosome)) {
            auto& list = out[block.tag];
            auto [it, inserted] = index.emplace(block, list.size());
            if (inserted) list.push_back({std::move(block), *ind.fitness});
            else list[it->second].global_score = std::max(list[it->second].global_score, *ind.fitness);
        }
    }
    return out;
}

void Engine::initialize() {
    if (state_.initialized) return;
    const auto& run = cfg_.run;
    std::vector<Individual> init;
    init.reserve(static_cast<std::size_t>(run.population));
    for (int i = 0; i < run.population; ++i) init.push_back({random_chromosome(cfg_.space, state_.rng), std::nullopt, Origin::init, 0});
    init = evaluate_fresh(std::move(init));
    state_.threshold = init_threshold(encodings_of(cfg_.space, init), run.spdi);
    state_.population = Population{std::move(init), 0};
    state_.generation = 0;
    state_.initialized = true;
}

GenerationRecord Engine::step() {
    initialize();
    if (done()) throw PreconditionError("run already finished");
    const auto started = std::chrono::steady_clock::now();
    const auto& run = cfg_.run;
    const auto& space = cfg_.space;
    const int t = state_.generation + 1;
    const bool macc = !run.ablation.disable_macc;
    const auto n = static_cast<std::size_t>(run.population);

    GenerationRecord rec;
    rec.generation = t;

    // (1) Diversity and rate decision on the current population.
    const double diversity = spdi(encodings_of(space, state_.population.members), &rec.distance_computations);
    const RateDecision rates = rates_for(diversity);

    // Merged candidates scored this generation; the only source of worker feedback.
    std::vector<Individual> merged_scored;
    std::vector<Individual> survivors = state_.population.members;
    auto track = [&](const Individual& ind) { commit({ind}); };

    if (macc) {
        if (!feedback_pushed_) {
            pool().push_feedback(state_.feedback_generation, state_.feedback);
            feedback_pushed_ = true;
        }
        // (2) Decompose and dispatch.
        std::map<BlockTag, std::vector<Block>> blocks;
        for (const auto& m : state_.population.members)
            for (auto& b : decompose(space, m.chromosome)) blocks[b.tag].push_back(std::move(b));
        std::vector<Dispatch> dispatches;
        for (BlockTag tag : space.tags()) {
            Dispatch d;
            d.tag = tag;
            d.generation = t;
            d.blocks = std::move(blocks[tag]);
            if (run.madts.local_pop > 0) {
                const auto want = static_cast<std::size_t>(run.madts.local_pop);
                if (d.blocks.size() > want) d.blocks.resize(want);
                while (d.blocks.size() < want) d.blocks.push_back(random_block(space, tag, state_.rng));
            }
            d.incumbent = state_.best;
            d.local_steps = run.local_steps;
            d.elite_count = static_cast<std::size_t>(run.elites);
            d.state = state_.workers.at(tag);
            if (state_.feedback_generation == t - 1) {
                if (auto it = state_.feedback.find(tag); it != state_.feedback.end()) d.feedback = it->second;
            }
            dispatches.push_back(std::move(d));
        }

        // (3) Local evolution behind the generation barrier.
        std::vector<WorkerResult> results;
        try {
            results = pool().run_generation(dispatches);
        } catch (const Error& e) {
            if (!abort_checkpoint_.empty()) {
                save_checkpoint(abort_checkpoint_);
                spdlog::error("generation {} aborted; state saved to {}", t, abort_checkpoint_);
            }
            throw;
        }

        std::vector<std::vector<EliteBlock>> elite_sets;
        std::uint64_t worker_evals = 0;
        for (auto& r : results) {
            const auto& before = state_.workers.at(r.tag).counters;
            if (r.tag.is_fusion()) rec.fusion_fits += r.state.counters.fits - before.fits;
            for (const auto& s : r.steps) {
                rec.proposals += s.proposals;
                worker_evals += s.true_evals;
            }
            elite_sets.push_back(std::move(r.elites));
            state_.workers.at(r.tag) = std::move(r.state);
        }
        state_.true_evals += worker_evals;

        // (4) Merge, evaluate within budget, select.
        auto merged = dedup_candidates(merge_elites(space, elite_sets));
        rec.merged_count = merged.size();
        merged = rank_candidates(std::move(merged), run.madts.surrogate_enabled, state_.rng);
        auto scored = evaluate_candidates(merged, evaluator_, static_cast<std::size_t>(run.budget), t,
                                          run.eval_parallelism);
        commit(scored);
        survivors = select_survivors(space, state_.population.members, scored, n, state_.rng, evaluator_, t, track);
        merged_scored = std::move(scored);
    }

    // (5) Variation under the decided rates.
    std::size_t offspring_count = n;
    if (!macc) offspring_count += merge_budget_equivalent();
    auto offspring = apply_variation(space, Population{survivors, t - 1}, rates, state_.rng, run.tournament_k, offspring_count);
    offspring = evaluate_fresh(std::move(offspring));
    auto next = select_survivors(space, survivors, offspring, n, state_.rng, evaluator_, t, track);
    state_.population = Population{std::move(next), t};

    // (6) Incumbent is tracked in commit(); feedback for the workers.
    if (macc) {
        state_.feedback = build_feedback(merged_scored);
        state_.feedback_generation = t;
        pool().push_feedback(t, state_.feedback);
    }
    state_.generation = t;

    rec.best_fitness = state_.best_fitness;
    double sum = 0.0;
    for (const auto& m : state_.population.members) sum += *m.fitness;
    rec.mean_fitness = sum / static_cast<double>(state_.population.members.size());
    rec.spdi = diversity;
    rec.tau = state_.threshold.tau;
    rec.mode = rates.mode;
    rec.p_cross = rates.p_cross;
    rec.p_mut = rates.p_mut;
    rec.true_evals_cum = state_.true_evals;
    if (run.record_wallclock)
        rec.wallclock_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    state_.trace.push_back(rec);
    spdlog::debug("generation {}: best {} mean {} spdi {} mode {} evals {}", t, rec.best_fitness, rec.mean_fitness,
                  rec.spdi, to_string(rec.mode), rec.true_evals_cum);
    return rec;
}

RunResult Engine::run() {
    initialize();
    while (!done()) step();
    return result();
}

RunResult Engine::result() const {
    RunResult r;
    r.seed = cfg_.run.seed;
    r.best = state_.best;
    r.best_fitness = state_.best_fitness;
    r.trace = state_.trace;
    r.improvements = state_.improvements;
    r.true_evals = state_.true_evals;
    return r;
}

json Engine::checkpoint_json() const {
    json pop = json::array();
    for (const auto& m : state_.population.members) pop.push_back(individual_json(m));
    json workers = json::object();
    for (const auto& [tag, w] : state_.workers) workers[tag.to_string()] = worker_state_to_json(w);
    json feedback = json::object();
    for (const auto& [tag, f] : state_.feedback) feedback[tag.to_string()] = feedback_to_json(f);
    json trace = json::array();
    for (const auto& r : state_.trace) trace.push_back(record_json(r));
    json improvements = json::array();
    for (const auto& i : state_.improvements) improvements.push_back({i.true_evals, i.fitness});
    return {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"space_fingerprint", space_fingerprint(cfg_.space)},
        {"config", config_to_json(cfg_)},
        {"state",
         {{"generation", state_.generation},
          {"initialized", state_.initialized},
          {"population", pop},
          {"best", {{"alleles", state_.best.alleles}, {"fitness", state_.best_fitness}}},
          {"threshold", {{"initial_diversity", state_.threshold.initial_diversity}, {"tau", state_.threshold.tau}}},
          {"rng", {{"key", state_.rng.key()}, {"counter", state_.rng.counter()}}},
          {"workers", workers},
          {"feedback", {{"generation", state_.feedback_generation}, {"entries", feedback}}},
          {"true_evals", state_.true_evals},
          {"trace", trace},
          {"improvements", improvements}}},
    };
}

void Engine::save_checkpoint(const std::string& path) const { write_file_atomic(path, checkpoint_json().dump()); }

void Engine::restore(const json& j) {
    EngineState s;
    try {
        if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat)
            throw CheckpointError("not a checkpoint file");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw CheckpointError("unsupported checkpoint version " + j.at("version").dump());
        const auto fp = j.at("space_fingerprint").get<std::string>();
        if (fp != space_fingerprint(cfg_.space))
            throw CheckpointError("checkpoint was written for a different search space (fingerprint " + fp + ", expected " +
                                  space_fingerprint(cfg_.space) + ")");
        const auto& st = j.at("state");
        s.generation = st.at("generation").get<int>();
        s.initialized = st.at("initialized").get<bool>();
        s.population.generation = s.generation;
        for (const auto& m : st.at("population")) s.population.members.push_back(individual_from(cfg_.space, m));
        s.best.alleles = st.at("best").at("alleles").get<std::vector<int>>();
        if (s.initialized) check_chromosome(cfg_.space, s.best);
        s.best_fitness = st.at("best").at("fitness").get<double>();
        s.threshold = {st.at("threshold").at("initial_diversity").get<double>(), st.at("threshold").at("tau").get<double>()};
        s.rng = Rng(st.at("rng").at("key").get<std::uint64_t>(), st.at("rng").at("counter").get<std::uint64_t>());
        for (const auto& [key, w] : st.at("workers").items()) {
            const BlockTag tag = BlockTag::parse(key);
            auto ws = worker_state_from_json(cfg_.space, w);
            if (ws.tag != tag) throw CheckpointError("worker state under " + key + " has tag " + ws.tag.to_string());
            s.workers.emplace(tag, std::move(ws));
        }
        for (BlockTag tag : cfg_.space.tags())
            if (!s.workers.count(tag)) throw CheckpointError("checkpoint lacks worker state for tag " + tag.to_string());
        s.feedback_generation = st.at("feedback").at("generation").get<int>();
        for (const auto& [key, f] : st.at("feedback").at("entries").items()) {
            const BlockTag tag = BlockTag::parse(key);
            s.feedback[tag] = feedback_from_json(cfg_.space, tag, f);
        }
        s.true_evals = st.at("true_evals").get<std::uint64_t>();
        for (const auto& r : st.at("trace")) s.trace.push_back(record_from(r));
        for (const auto& i : st.at("improvements"))
            s.improvements.push_back({i.at(0).get<std::uint64_t>(), i.at(1).get<double>()});
        if (static_cast<int>(s.trace.size()) != s.generation)
            throw CheckpointError("trace length does not match the generation index");
    } catch (const CheckpointError&) {
        throw;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    } catch (const Error& e) {
        throw CheckpointError(std::string("invalid checkpoint: ") + e.what());
    }
    state_ = std::move(s);
    feedback_pushed_ = false;
}

void Engine::load_checkpoint(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const ParseError& e) {
        throw CheckpointError(e.what());
    }
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw CheckpointError(path + ": not valid JSON");
    restore(j);
}

std::vector<GenerationRecord> checkpoint_trace(const json& checkpoint) {
    try {
        std::vector<GenerationRecord> out;
        for (const auto& r : checkpoint.at("state").at("trace")) out.push_back(record_from(r));
        return out;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint trace: ") + e.what());
    } catch (const Error& e) {
        throw CheckpointError(std::string("invalid checkpoint trace: ") + e.what());
    }
}

RunResult run_search(const ExperimentConfig& cfg, Evaluator& evaluator, WorkerPool* pool) {
    Engine engine(cfg, evaluator, pool);
    return engine.run();
}

// ---------------------------------------------------------------------------
// Exports

std::string trace_csv_header() {
    return "generation,best_fitness,mean_fitness,spdi,tau,mode,p_cross,p_mut,true_evals_cum,merged_count,wallclock_ms";
}

std::string trace_to_csv(const std::vector<GenerationRecord>& trace) {
    std::string out = trace_csv_header() + "\n";
    for (const auto& r : trace) {
        out += std::to_string(r.generation) + "," + format_double(r.best_fitness) + "," + format_double(r.mean_fitness) +
               "," + format_double(r.spdi) + "," + format_double(r.tau) + "," + to_string(r.mode) + "," +
               format_double(r.p_cross) + "," + format_double(r.p_mut) + "," + std::to_string(r.true_evals_cum) + "," +
               std::to_string(r.merged_count) + "," + format_double(r.wallclock_ms) + "\n";
    }
    return out;
}

std::vector<GenerationRecord> trace_from_csv(std::string_view text) {
    std::vector<GenerationRecord> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool header = true;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (header) {
            if (line != trace_csv_header()) throw ParseError("trace line 1: unexpected header");
            header = false;
            continue;
        }
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const std::string where = "trace line " + std::to_string(line_no);
        if (f.size() != 11) throw ParseError(where + ": expected 11 fields, got " + std::to_string(f.size()));
        GenerationRecord r;
        r.generation = static_cast<int>(parse_int(f[0], where));
        r.best_fitness = parse_double(f[1], where);
        r.mean_fitness = parse_double(f[2], where);
        r.spdi = parse_double(f[3], where);
        r.tau = parse_double(f[4], where);
        try {
            r.mode = mode_from_string(f[5]);
        } catch (const Error&) {
            throw ParseError(where + ": unknown mode '" + f[5] + "'");
        }
        r.p_cross = parse_double(f[6], where);
        r.p_mut = parse_double(f[7], where);
        const auto evals = parse_int(f[8], where);
        const auto merged = parse_int(f[9], where);
        if (evals < 0 || merged < 0) throw ParseError(where + ": negative count");
        r.true_evals_cum = static_cast<std::uint64_t>(evals);
        r.merged_count = static_cast<std::size_t>(merged);
        r.wallclock_ms = parse_double(f[10], where);
        out.push_back(r);
    }
    if (header) throw ParseError("trace is empty");
    return out;
}

std::string best_architectures_csv(const SearchSpace& space, const std::vector<RunResult>& runs) {
    std::string out = "seed,gene_name,chosen_candidate,best_fitness\n";
    for (const auto& r : runs) {
        const auto names = candidate_names(space, r.best);
        for (std::size_t g = 0; g < names.size(); ++g)
            out += std::to_string(r.seed) + "," + space.genes[g].name + "," + names[g] + "," +
                   format_double(r.best_fitness) + "\n";
    }
    return out;
}

json best_json(const SearchSpace& space, const RunResult& run) {
    json genes = json::array();
    const auto names = candidate_names(space, run.best);
    for (std::size_t g = 0; g < names.size(); ++g)
        genes.push_back({{"gene", space.genes[g].name}, {"candidate", names[g]}, {"allele", run.best.alleles[g]}});
    return {{"seed", run.seed},
            {"best_fitness", run.best_fitness},
            {"alleles", run.best.alleles},
            {"genes", genes},
            {"true_evals", run.true_evals}};
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<std::pair<std::string, AblationFlags>> ablation_variants() {
    return {{"full", {false, false, false}},
            {"w/o MACC", {true, false, false}},
            {"w/o MADTS", {false, true, false}},
            {"w/o SPDI", {false, false, true}}};
}

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& cfg, const EvaluatorFactory& make,
                                            const std::vector<std::uint64_t>& seeds) {
    if (seeds.size() < 2) throw PreconditionError("the ablation suite needs at least two seeds");
    std::vector<AblationRow> rows;
    for (const auto& [name, flags] : ablation_variants()) {
        AblationRow row;
        row.method = name;
        for (const auto seed : seeds) {
            ExperimentConfig c = cfg;
            c.run.seed = seed;
            c.run.ablation = flags;
            c.run.transport.mode = TransportMode::in_process;
            auto evaluator = make();
            row.runs.push_back(run_search(c, *evaluator));
            spdlog::info("{} seed {}: best {} after {} evaluations", name, seed, row.runs.back().best_fitness,
                         row.runs.back().true_evals);
        }
        const auto k = static_cast<double>(row.runs.size());
        double sum = 0.0, evals = 0.0;
        for (const auto& r : row.runs) {
            sum += r.best_fitness;
            evals += static_cast<double>(r.true_evals);
        }
        row.mean_best = sum / k;
        row.true_evals_mean = evals / k;
        double ss = 0.0;
        for (const auto& r : row.runs) ss += (r.best_fitness - row.mean_best) * (r.best_fitness - row.mean_best);
        row.std_best = std::sqrt(ss / (k - 1.0));
        if (!rows.empty()) row.delta_vs_full = row.mean_best - rows.front().mean_best;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "method,mean_best,std_best,true_evals_mean,delta_vs_full\n";
    for (const auto& r : rows)
        out += r.method + "," + format_double(r.mean_best) + "," + format_double(r.std_best) + "," +
               format_double(r.true_evals_mean) + "," + (r.delta_vs_full ? format_double(*r.delta_vs_full) : "") + "\n";
    return out;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
    std::vector<std::uint64_t> out;
    auto bad = [&] { return ConfigError({"seeds: cannot parse '" + std::string(text) + "'"}); };
    auto number = [&](std::string_view s) {
        try {
            const auto v = parse_int(s, "seed");
            if (v < 0) throw bad();
            return static_cast<std::uint64_t>(v);
        } catch (const ParseError&) {
            throw bad();
        }
    };
    for (const auto& token : split_csv_line(text)) {
        const std::string_view tk(token);
        if (const auto dots = tk.find(".."); dots != std::string_view::npos) {
            const auto lo = number(tk.substr(0, dots));
            const auto hi = number(tk.substr(dots + 2));
            if (hi < lo || hi - lo > 100000) throw bad();
            for (auto s = lo; s <= hi; ++s) out.push_back(s);
        } else {
            out.push_back(number(tk));
        }
    }
    if (out.empty()) throw bad();
    return out;
}

}  // namespace coevo
