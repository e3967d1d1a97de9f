#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coevo/config.hpp"
#include "coevo/diversity.hpp"
#include "coevo/evaluators.hpp"
#include "coevo/genetic_ops.hpp"
#include "coevo/madts.hpp"
#include "coevo/search_space.hpp"
#include "coevo/transport.hpp"

namespace coevo {

struct GenerationRecord {
    int generation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    double spdi = 0.0;
    double tau = 0.0;
    Mode mode = Mode::exploit;
    double p_cross = 0.0;
    double p_mut = 0.0;
    std::uint64_t true_evals_cum = 0;
    std::size_t merged_count = 0;
    double wallclock_ms = 0.0;

    // Instrumentation; not part of the trace CSV.
    std::uint64_t distance_computations = 0;
    std::uint64_t proposals = 0;
    std::uint64_t fusion_fits = 0;

    friend bool operator==(const GenerationRecord&, const GenerationRecord&) = default;
};

/// The incumbent improved to `fitness` at the `true_evals`-th true evaluation.
struct Improvement {
    std::uint64_t true_evals = 0;
    double fitness = 0.0;
};

struct RunResult {
    std::uint64_t seed = 0;
    Chromosome best;
    double best_fitness = 0.0;
    std::vector<GenerationRecord> trace;
    std::vector<Improvement> improvements;
    std::uint64_t true_evals = 0;

    /// True evaluations spent when the incumbent first reached `target`.
    std::optional<std::uint64_t> evals_to_reach(double target) const;
};

/// A merged candidate with its surrogate ranking estimate.
struct Candidate {
    Chromosome chromosome;
    double estimate = 0.0;
};

/// Full Cartesian product of the elite sets (one per tag, canonical tag
/// order), before deduplication. The last tag varies fastest.
std::vector<Candidate> merge_elites(const SearchSpace& space, const std::vector<std::vector<EliteBlock>>& elite_sets);

/// Drops repeated chromosomes, keeping the first occurrence.
std::vector<Candidate> dedup_candidates(std::vector<Candidate> candidates);

/// Orders candidates for evaluation: by estimate descending when
/// `surrogate_ranking`, else by a seeded shuffle. Stable for ties.
std::vector<Candidate> rank_candidates(std::vector<Candidate> candidates, bool surrogate_ranking, Rng& rng);

/// Evaluates the first min(B, |candidates|) candidates in order.
std::vector<Individual> evaluate_candidates(const std::vector<Candidate>& candidates, Evaluator& evaluator,
                                            std::size_t budget, int generation, int parallelism = 1);

/// Scores chromosomes with up to `parallelism` concurrent calls; results keep input order.
std::vector<double> evaluate_batch(Evaluator& evaluator, const std::vector<Chromosome>& chromosomes, int parallelism);

/// Elitist truncation of current ∪ candidates. Pads with fresh random
/// evaluated chromosomes when the deduplicated union is short.
/// `on_fresh` sees each padding individual right after its evaluation.
std::vector<Individual> select_survivors(const SearchSpace& space, const std::vector<Individual>& current,
                                         const std::vector<Individual>& candidates, std::size_t n, Rng& rng,
                                         Evaluator& evaluator, int generation,
                                         const std::function<void(const Individual&)>& on_fresh = {});

/// Survivor order: fitness descending, then older first, then alleles.
bool survivor_before(const Individual& a, const Individual& b);

struct EngineState {
    /// Last completed generation; 0 after initialization.
    int generation = 0;
    bool initialized = false;
    Population population;
    Chromosome best;
    double best_fitness = -1.0;
    ThresholdState threshold;
    Rng rng;
    std::map<BlockTag, WorkerState> workers;
    int feedback_generation = -1;
    std::map<BlockTag, std::vector<FeedbackEntry>> feedback;
    std::uint64_t true_evals = 0;
    std::vector<GenerationRecord> trace;
    std::vector<Improvement> improvements;
};

/// Drives the coordinator loop for one seed.
class Engine {
public:
    /// Without a pool and with MACC enabled an in-process pool is created.
    Engine(ExperimentConfig cfg, Evaluator& evaluator, WorkerPool* pool = nullptr);

    /// Evaluates the initial population. No-op when already initialized.
    void initialize();
    /// Runs one generation; initializes first if needed.
    GenerationRecord step();
    bool done() const { return state_.generation >= cfg_.run.generations; }
    /// Steps until T generations are complete.
    RunResult run();

    const EngineState& state() const { return state_; }
    const ExperimentConfig& config() const { return cfg_; }
    RunResult result() const;

    nlohmann::json checkpoint_json() const;
    void save_checkpoint(const std::string& path) const;
    /// Replaces the state wholesale; nothing is applied when parsing fails.
    void restore(const nlohmann::json& checkpoint);
    void load_checkpoint(const std::string& path);

    /// Written when a generation fails for good. Empty disables it.
    void set_abort_checkpoint(std::string path) { abort_checkpoint_ = std::move(path); }

private:
    WorkerPool& pool();
    RateDecision rates_for(double spdi_value) const;
    void commit(const std::vector<Individual>& evaluated);
    std::vector<Individual> evaluate_fresh(std::vector<Individual> unevaluated);
    std::size_t merge_budget_equivalent() const;
    std::map<BlockTag, std::vector<FeedbackEntry>> build_feedback(const std::vector<Individual>& evaluated) const;

    ExperimentConfig cfg_;
    Evaluator& evaluator_;
    WorkerPool* external_pool_;
    std::unique_ptr<WorkerPool> owned_pool_;
    EngineState state_;
    std::string abort_checkpoint_;
    bool feedback_pushed_ = false;
};

/// Initializes, runs T generations and returns the result.
RunResult run_search(const ExperimentConfig& cfg, Evaluator& evaluator, WorkerPool* pool = nullptr);

std::string trace_csv_header();
std::string trace_to_csv(const std::vector<GenerationRecord>& trace);
/// Strict parse of a trace CSV; throws ParseError.
std::vector<GenerationRecord> trace_from_csv(std::string_view text);

/// Trace rows stored in a checkpoint document; throws CheckpointError.
std::vector<GenerationRecord> checkpoint_trace(const nlohmann::json& checkpoint);

/// Rows of (seed, gene_name, chosen_candidate, best_fitness).
std::string best_architectures_csv(const SearchSpace& space, const std::vector<RunResult>& runs);
nlohmann::json best_json(const SearchSpace& space, const RunResult& run);

struct AblationRow {
    std::string method;
    std::vector<RunResult> runs;
    double mean_best = 0.0;
    double std_best = 0.0;
    double true_evals_mean = 0.0;
    /// Empty for the full method.
    std::optional<double> delta_vs_full;
};

using EvaluatorFactory = std::function<std::unique_ptr<Evaluator>()>;

/// Variants in table order: full, w/o MACC, w/o MADTS, w/o SPDI.
std::vector<std::pair<std::string, AblationFlags>> ablation_variants();

/// Runs every variant over every seed, each with a fresh evaluator.
std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& cfg, const EvaluatorFactory& make,
                                            const std::vector<std::uint64_t>& seeds);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Parses "0..9", "1,4,7", or a mix such as "0..2,5".
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace coevo
