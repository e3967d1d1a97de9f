#include "coevo/madts.hpp"

#include <algorithm>
#include <set>

#include "coevo/error.hpp"
#include "coevo/genetic_ops.hpp"

namespace coevo {

namespace {
constexpr std::size_t kRecentProposals = 8;
}

std::vector<std::string> validate(const MadtsConfig& cfg, const std::string& path) {
    std::vector<std::string> out;
    if (cfg.window < 2) out.push_back(path + ".window: must be >= 2");
    if (!(cfg.epsilon > 0.0)) out.push_back(path + ".epsilon: must be > 0");
    if (!(cfg.beta >= 0.0)) out.push_back(path + ".beta: must be >= 0");
    if (cfg.archive_capacity < 1) out.push_back(path + ".archive_capacity: must be >= 1");
    if (cfg.local_pop < 0 || cfg.local_pop == 1) out.push_back(path + ".local_pop: must be 0 (= N) or >= 2");
    if (!(cfg.local_crossover >= 0.0 && cfg.local_crossover <= 1.0))
        out.push_back(path + ".local_crossover: must lie in [0, 1]");
    if (!(cfg.local_mutation >= 0.0 && cfg.local_mutation <= 1.0))
        out.push_back(path + ".local_mutation: must lie in [0, 1]");
    if (cfg.tournament_k < 1) out.push_back(path + ".tournament_k: must be >= 1");
    return out;
}

double compute_alpha(double sigma2_local, double sigma2_global, double epsilon) {
    return sigma2_local / (sigma2_local + sigma2_global + epsilon);
}

double fused_score(double f_global, double f_local, double alpha) {
    return alpha * f_global + (1.0 - alpha) * f_local;
}

FusionState::FusionState(std::size_t window, double epsilon) : capacity_(window), epsilon_(epsilon) {
    if (capacity_ < 1) throw PreconditionError("fusion window must hold at least one pair");
    if (!(epsilon_ > 0.0)) throw PreconditionError("fusion epsilon must be > 0");
}

void FusionState::update(double local_score, double global_score) {
    window_.emplace_back(local_score, global_score);
    while (window_.size() > capacity_) window_.pop_front();
    recompute();
}

void FusionState::recompute() {
    const std::size_t n = window_.size();
    if (n < 2) {
        sigma2_local_ = sigma2_global_ = alpha_ = 0.0;
        return;
    }
    double ml = 0.0;
    double mg = 0.0;
    for (auto [l, g] : window_) {
        ml += l;
        mg += g;
    }
    ml /= static_cast<double>(n);
    mg /= static_cast<double>(n);
    double sl = 0.0;
    double sg = 0.0;
    for (auto [l, g] : window_) {
        sl += (l - ml) * (l - ml);
        sg += (g - mg) * (g - mg);
    }
    sigma2_local_ = sl / static_cast<double>(n - 1);
    sigma2_global_ = sg / static_cast<double>(n - 1);
    alpha_ = compute_alpha(sigma2_local_, sigma2_global_, epsilon_);
}

nlohmann::json FusionState::to_json() const {
    nlohmann::json w = nlohmann::json::array();
    for (auto [l, g] : window_) w.push_back({l, g});
    return {{"capacity", capacity_}, {"epsilon", epsilon_}, {"window", w}};
}

FusionState FusionState::from_json(const nlohmann::json& j) {
    FusionState s(j.at("capacity").get<std::size_t>(), j.at("epsilon").get<double>());
    for (const auto& p : j.at("window")) s.window_.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    while (s.window_.size() > s.capacity_) s.window_.pop_front();
    s.recompute();
    return s;
}

FusionState update_fusion_state(FusionState state, double local_score, double global_score) {
    state.update(local_score, global_score);
    return state;
}

WorkerState make_worker_state(BlockTag tag, const MadtsConfig& cfg, Rng rng) {
    WorkerState s;
    s.tag = tag;
    s.archive = Archive(cfg.archive_capacity);
    s.fusion = FusionState(static_cast<std::size_t>(cfg.window), cfg.epsilon);
    s.rng = rng;
    return s;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json blocks_json(const std::vector<Block>& blocks) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& b : blocks) a.push_back(b.alleles);
    return a;
}

std::vector<Block> blocks_from(const SearchSpace& space, BlockTag tag, const nlohmann::json& j) {
    std::vector<Block> out;
    for (const auto& a : j) {
        Block b{tag, a.get<std::vector<int>>()};
        check_block(space, b);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

nlohmann::json worker_state_to_json(const WorkerState& s) {
    nlohmann::json archive = nlohmann::json::array();
    for (const auto& e : s.archive.entries())
        archive.push_back({{"alleles", e.block.alleles}, {"score", e.score}, {"generation", e.generation_added}});
    nlohmann::json feedback = nlohmann::json::array();
    for (const auto& f : s.feedback) feedback.push_back({{"alleles", f.block.alleles}, {"score", f.global_score}});
    return {
        {"tag", s.tag.to_string()},
        {"generation", s.generation},
        {"population", blocks_json(s.population)},
        {"archive", {{"capacity", s.archive.capacity()}, {"entries", archive}}},
        {"fusion", s.fusion.to_json()},
        {"feedback", feedback},
        {"recent_proposals", blocks_json(s.recent_proposals)},
        {"rng", {{"key", s.rng.key()}, {"counter", s.rng.counter()}}},
        {"counters",
         {{"fits", s.counters.fits},
          {"proposals", s.counters.proposals},
          {"degenerate_fits", s.counters.degenerate_fits},
          {"local_evals", s.counters.local_evals},
          {"true_evals", s.counters.true_evals}}},
    };
}

WorkerState worker_state_from_json(const SearchSpace& space, const nlohmann::json& j) {
    WorkerState s;
    s.tag = BlockTag::parse(j.at("tag").get<std::string>());
    s.generation = j.at("generation").get<int>();
    s.population = blocks_from(space, s.tag, j.at("population"));
    s.archive = Archive(j.at("archive").at("capacity").get<std::size_t>());
    for (const auto& e : j.at("archive").at("entries")) {
        Block b{s.tag, e.at("alleles").get<std::vector<int>>()};
        auto enc = encode_block(space, b);
        s.archive.insert({std::move(b), std::move(enc), e.at("score").get<double>(), e.at("generation").get<int>()});
    }
    s.fusion = FusionState::from_json(j.at("fusion"));
    for (const auto& f : j.at("feedback")) {
        Block b{s.tag, f.at("alleles").get<std::vector<int>>()};
        check_block(space, b);
        s.feedback.push_back({std::move(b), f.at("score").get<double>()});
    }
    s.recent_proposals = blocks_from(space, s.tag, j.at("recent_proposals"));
    s.rng = Rng(j.at("rng").at("key").get<std::uint64_t>(), j.at("rng").at("counter").get<std::uint64_t>());
    const auto& c = j.at("counters");
    s.counters = {c.at("fits").get<std::uint64_t>(), c.at("proposals").get<std::uint64_t>(),
                  c.at("degenerate_fits").get<std::uint64_t>(), c.at("local_evals").get<std::uint64_t>(),
                  c.at("true_evals").get<std::uint64_t>()};
    return s;
}

// ---------------------------------------------------------------------------
// Worker steps

namespace {

double local_of(WorkerState& s, Evaluator& evaluator, const Block& b) {
    auto it = s.local_cache.find(b);
    if (it != s.local_cache.end()) return it->second;
    const double v = evaluator.eval_local(b);
    ++s.counters.local_evals;
    s.local_cache.emplace(b, v);
    return v;
}

const FeedbackEntry* feedback_for(const WorkerState& s, const Block& b) {
    for (const auto& f : s.feedback)
        if (f.block == b) return &f;
    return nullptr;
}

double worker_score(WorkerState& s, Evaluator& evaluator, const Block& b, const MadtsConfig& cfg) {
    const double local = local_of(s, evaluator, b);
    if (!cfg.surrogate_enabled) return local;
    if (const auto* f = feedback_for(s, b)) return fused_score(f->global_score, local, s.fusion.alpha());
    return local;
}

void remember_proposal(WorkerState& s, const Block& b) {
    s.recent_proposals.push_back(b);
    if (s.recent_proposals.size() > kRecentProposals)
        s.recent_proposals.erase(s.recent_proposals.begin());
    ++s.counters.proposals;
}

Block block_mutation(const SearchSpace& space, const Block& b, Rng& rng) {
    const auto& ids = space.genes_of(b.tag);
    Block out = b;
    const std::size_t j = rng.uniform_index(ids.size());
    const std::size_t arity = space.arity(ids[j]);
    auto pick = static_cast<int>(rng.uniform_index(arity - 1));
    if (pick >= b.alleles[j]) ++pick;
    out.alleles[j] = pick;
    return out;
}

std::vector<Individual> as_individuals(const std::vector<Block>& blocks, const std::vector<double>& scores) {
    std::vector<Individual> out;
    out.reserve(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) out.push_back({Chromosome{blocks[i].alleles}, scores[i], Origin::init, 0});
    return out;
}

// Every block of the sub-space not in `taken`, drawn uniformly without replacement.
std::vector<Block> distinct_random_blocks(const SearchSpace& space, BlockTag tag, std::size_t count,
                                          const std::set<Block>& taken, Rng& rng) {
    std::vector<Block> out;
    if (count == 0) return out;
    if (block_space_size(space, tag) <= kEnumerationLimit) {
        std::vector<Block> pool;
        for (auto& b : enumerate_blocks(space, tag))
            if (!taken.count(b)) pool.push_back(std::move(b));
        while (out.size() < count && !pool.empty()) {
            const std::size_t i = rng.uniform_index(pool.size());
            out.push_back(std::move(pool[i]));
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
        }
        return out;
    }
    std::set<Block> seen = taken;
    while (out.size() < count) {
        Block b = random_block(space, tag, rng);
        if (seen.insert(b).second) out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

void apply_global_feedback(WorkerState& state, const SearchSpace& space, const std::vector<FeedbackEntry>& feedback,
                           Evaluator* evaluator, const MadtsConfig& cfg) {
    for (const auto& f : feedback) {
        if (f.block.tag != state.tag) throw InvalidBlockError("feedback for block " + f.block.tag.to_string() +
                                                              " sent to worker " + state.tag.to_string());
        check_block(space, f.block);
    }
    state.feedback = feedback;
    if (state.is_fusion()) {
        // The fusion track has no local signal: its archive is the coordinator's verdict.
        for (const auto& f : feedback)
            state.archive.insert({f.block, encode_block(space, f.block), f.global_score, state.generation});
        return;
    }
    if (!cfg.surrogate_enabled) return;
    if (!evaluator) throw PreconditionError("modality worker needs an evaluator for local scores");
    for (const auto& f : feedback) state.fusion.update(local_of(state, *evaluator, f.block), f.global_score);
}

void modality_worker_step(WorkerState& state, const SearchSpace& space, Evaluator& evaluator, const MadtsConfig& cfg) {
    if (state.is_fusion()) throw PreconditionError("modality step invoked on the fusion worker");
    auto& pop = state.population;
    if (pop.empty()) throw PreconditionError("modality worker has an empty local population");

    std::vector<double> scores(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) scores[i] = worker_score(state, evaluator, pop[i], cfg);

    for (std::size_t i = 0; i < pop.size(); ++i)
        state.archive.insert({pop[i], encode_block(space, pop[i]), scores[i], state.generation});

    state.model.reset();
    if (cfg.surrogate_enabled && state.archive.size() >= 2) {
        try {
            state.model = GpModel::fit(state.archive, cfg.grid);
            ++state.counters.fits;
        } catch (const SurrogateDegenerateError&) {
            ++state.counters.degenerate_fits;
        }
    }

    Block proposal = state.model ? propose_next(*state.model, space, candidate_pool(space, state.tag, state.rng), cfg.beta)
                                 : random_block(space, state.tag, state.rng);
    remember_proposal(state, proposal);

    const auto worst = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
    pop[worst] = proposal;
    scores[worst] = worker_score(state, evaluator, proposal, cfg);

    // Steady-state refresh: keep the best member and the fresh proposal, breed the rest.
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    const auto parents = as_individuals(pop, scores);
    std::vector<Block> next = pop;
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < pop.size(); ++i)
        if (i != best && i != worst) slots.push_back(i);
    std::size_t filled = 0;
    while (filled < slots.size()) {
        Block a = pop[tournament_select(parents, cfg.tournament_k, state.rng)];
        Block b = pop[tournament_select(parents, cfg.tournament_k, state.rng)];
        if (state.rng.bernoulli(cfg.local_crossover)) {
            for (std::size_t g = 0; g < a.alleles.size(); ++g)
                if (state.rng.bernoulli(0.5)) std::swap(a.alleles[g], b.alleles[g]);
        }
        for (Block* child : {&a, &b})
            if (state.rng.bernoulli(cfg.local_mutation)) *child = block_mutation(space, *child, state.rng);
        next[slots[filled++]] = std::move(a);
        if (filled < slots.size()) next[slots[filled++]] = std::move(b);
    }
    pop = std::move(next);
}

void fusion_worker_step(WorkerState& state, const SearchSpace& space, const MadtsConfig&) {
    if (!state.is_fusion()) throw PreconditionError("fusion step invoked on a modality worker");
    Block sample = random_block(space, state.tag, state.rng);
    remember_proposal(state, sample);
    if (state.population.empty()) {
        state.population.push_back(std::move(sample));
        return;
    }
    // Replace the member with the weakest coordinator verdict (unseen counts lowest).
    std::size_t victim = 0;
    double victim_score = 2.0;
    for (std::size_t i = 0; i < state.population.size(); ++i) {
        const auto* e = state.archive.find(state.population[i]);
        const double s = e ? e->score : -1.0;
        if (s < victim_score) {
            victim_score = s;
            victim = i;
        }
    }
    state.population[victim] = std::move(sample);
}

std::vector<EliteBlock> extract_elites(WorkerState& state, const SearchSpace& space, std::size_t count,
                                       const MadtsConfig&) {
    count = static_cast<std::size_t>(std::min<std::uint64_t>(count, block_space_size(space, state.tag)));
    std::vector<EliteBlock> out;
    std::set<Block> taken;
    for (const auto& e : state.archive.top(count)) {
        double estimate = e.score;
        if (state.model) estimate = state.model->predict(e.encoding).mean;
        out.push_back({e.block, estimate});
        taken.insert(e.block);
    }
    if (state.is_fusion()) {
        // Fresh samples are the fusion track's exploration; they fill gaps first.
        for (auto it = state.recent_proposals.rbegin(); it != state.recent_proposals.rend() && out.size() < count; ++it) {
            if (taken.insert(*it).second) out.push_back({*it, 0.5});
        }
    }
    for (auto& b : distinct_random_blocks(space, state.tag, count - out.size(), taken, state.rng)) {
        const double estimate = state.model ? state.model->predict(encode_block(space, b)).mean : 0.5;
        out.push_back({std::move(b), estimate});
    }
    return out;
}

// ---------------------------------------------------------------------------
// WorkerRuntime

WorkerRuntime::WorkerRuntime(SearchSpace space, MadtsConfig cfg, std::unique_ptr<Evaluator> evaluator)
    : space_(std::move(space)), cfg_(std::move(cfg)), evaluator_(std::move(evaluator)) {}

void WorkerRuntime::begin(Dispatch d) {
    state_ = std::move(d.state);
    if (state_.tag != d.tag) throw PreconditionError("dispatch state belongs to another worker");
    state_.local_cache.clear();
    state_.model.reset();
    state_.generation = d.generation;
    elite_count_ = d.elite_count;
    steps_done_ = 0;
    steps_.clear();
    if (!state_.is_fusion()) {
        if (!evaluator_) throw PreconditionError("modality worker runtime needs an evaluator");
        if (!evaluator_->has_native_local()) evaluator_->set_context(d.incumbent);
    }
    eval_baseline_ = evaluator_ ? evaluator_->true_eval_count() : 0;
    apply_global_feedback(state_, space_, d.feedback, evaluator_.get(), cfg_);
    for (const auto& b : d.blocks) check_block(space_, b);
    // Evaluations spent on feedback are reported with the first step.
    state_.population = std::move(d.blocks);
}

StepReport WorkerRuntime::step() {
    const auto before = state_.counters;
    if (state_.is_fusion()) fusion_worker_step(state_, space_, cfg_);
    else modality_worker_step(state_, space_, *evaluator_, cfg_);
    const std::uint64_t now = evaluator_ ? evaluator_->true_eval_count() : 0;
    StepReport r{++steps_done_, state_.counters.proposals - before.proposals, state_.counters.fits - before.fits,
                 now - eval_baseline_};
    eval_baseline_ = now;
    state_.counters.true_evals += r.true_evals;
    steps_.push_back(r);
    return r;
}

WorkerResult WorkerRuntime::finish() {
    auto elites = extract_elites(state_, space_, elite_count_, cfg_);
    return WorkerResult{state_.tag, std::move(elites), state_, steps_};
}

WorkerResult WorkerRuntime::run(Dispatch d) {
    const int steps = d.local_steps;
    begin(std::move(d));
    for (int i = 0; i < steps; ++i) step();
    return finish();
}

}  // namespace coevo
