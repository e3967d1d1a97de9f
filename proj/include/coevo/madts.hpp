#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "coevo/evaluators.hpp"
#include "coevo/gp_surrogate.hpp"
#include "coevo/rng.hpp"
#include "coevo/search_space.hpp"

namespace coevo {

struct MadtsConfig {
    /// Pairs kept for the variance estimates.
    int window = 20;
    double epsilon = 1e-6;
    /// UCB exploration weight.
    double beta = 2.0;
    std::size_t archive_capacity = 256;
    /// Local population size; 0 means "same as the global population".
    int local_pop = 0;
    double local_crossover = 0.8;
    double local_mutation = 0.1;
    int tournament_k = 2;
    /// False for the surrogate-free ablation: random proposals, archives keep local scores.
    bool surrogate_enabled = true;
    HyperparamGrid grid;
};

std::vector<std::string> validate(const MadtsConfig& cfg, const std::string& path = "madts");

double compute_alpha(double sigma2_local, double sigma2_global, double epsilon);
double fused_score(double f_global, double f_local, double alpha);

/// Sliding window of (local, global) score pairs and the weight derived from
/// their unbiased sample variances.
class FusionState {
public:
    explicit FusionState(std::size_t window = 20, double epsilon = 1e-6);

    void update(double local_score, double global_score);

    double alpha() const { return alpha_; }
    double sigma2_local() const { return sigma2_local_; }
    double sigma2_global() const { return sigma2_global_; }
    double epsilon() const { return epsilon_; }
    std::size_t capacity() const { return capacity_; }
    const std::deque<std::pair<double, double>>& window() const { return window_; }

    nlohmann::json to_json() const;
    static FusionState from_json(const nlohmann::json& j);

private:
    void recompute();

    std::size_t capacity_;
    double epsilon_;
    std::deque<std::pair<double, double>> window_;
    double sigma2_local_ = 0.0;
    double sigma2_global_ = 0.0;
    double alpha_ = 0.0;
};

FusionState update_fusion_state(FusionState state, double local_score, double global_score);

struct FeedbackEntry {
    Block block;
    double global_score = 0.0;
};

struct WorkerCounters {
    std::uint64_t fits = 0;
    std::uint64_t proposals = 0;
    std::uint64_t degenerate_fits = 0;
    std::uint64_t local_evals = 0;
    std::uint64_t true_evals = 0;
};

/// Everything a worker needs to resume; serializable so that a worker process
/// can be stateless between generations.
struct WorkerState {
    BlockTag tag;
    std::vector<Block> population;
    Archive archive;
    /// Refit every step; never serialized.
    std::optional<GpModel> model;
    FusionState fusion;
    /// Global feedback of the latest evaluated generation.
    std::vector<FeedbackEntry> feedback;
    /// Most recent proposals, newest last.
    std::vector<Block> recent_proposals;
    /// Local scores under the current dispatch context; cleared on dispatch.
    std::map<Block, double> local_cache;
    Rng rng;
    WorkerCounters counters;
    int generation = 0;

    bool is_fusion() const { return tag.is_fusion(); }
};

WorkerState make_worker_state(BlockTag tag, const MadtsConfig& cfg, Rng rng);

nlohmann::json worker_state_to_json(const WorkerState& state);
WorkerState worker_state_from_json(const SearchSpace& space, const nlohmann::json& j);

/// Installs the coordinator's feedback for the last evaluated generation. Modality
/// workers feed (local, global) pairs into the fusion window; the fusion worker
/// archives the global scores directly.
void apply_global_feedback(WorkerState& state, const SearchSpace& space, const std::vector<FeedbackEntry>& feedback,
                           Evaluator* evaluator, const MadtsConfig& cfg);

/// Score, fuse, archive, refit, propose and inject, then evolve the local population.
void modality_worker_step(WorkerState& state, const SearchSpace& space, Evaluator& evaluator, const MadtsConfig& cfg);

/// Samples one random fusion block; the archive only changes through feedback.
void fusion_worker_step(WorkerState& state, const SearchSpace& space, const MadtsConfig& cfg);

struct EliteBlock {
    Block block;
    /// Surrogate estimate used for candidate ranking: GP mean for modality
    /// blocks, archived score (or 0.5) for fusion blocks.
    double estimate = 0.5;
};

/// Top `count` archive entries, padded with distinct random blocks when the
/// archive is short. Never returns more blocks than the tag's sub-space holds.
std::vector<EliteBlock> extract_elites(WorkerState& state, const SearchSpace& space, std::size_t count,
                                       const MadtsConfig& cfg);

/// What a coordinator hands a worker at the start of a generation.
struct Dispatch {
    BlockTag tag;
    int generation = 0;
    std::vector<Block> blocks;
    Chromosome incumbent;
    int local_steps = 1;
    std::size_t elite_count = 5;
    WorkerState state;
    std::vector<FeedbackEntry> feedback;
};

struct StepReport {
    int step = 0;
    std::uint64_t proposals = 0;
    std::uint64_t fits = 0;
    std::uint64_t true_evals = 0;
};

struct WorkerResult {
    BlockTag tag;
    std::vector<EliteBlock> elites;
    WorkerState state;
    std::vector<StepReport> steps;
};

/// Executes one generation of worker-side work, independent of transport.
class WorkerRuntime {
public:
    WorkerRuntime(SearchSpace space, MadtsConfig cfg, std::unique_ptr<Evaluator> evaluator);

    void begin(Dispatch dispatch);
    StepReport step();
    WorkerResult finish();

    /// begin + all steps + finish.
    WorkerResult run(Dispatch dispatch);

    const WorkerState& state() const { return state_; }

private:
    SearchSpace space_;
    MadtsConfig cfg_;
    std::unique_ptr<Evaluator> evaluator_;
    WorkerState state_;
    std::size_t elite_count_ = 5;
    int steps_done_ = 0;
    std::vector<StepReport> steps_;
    std::uint64_t eval_baseline_ = 0;
};

}  // namespace coevo
