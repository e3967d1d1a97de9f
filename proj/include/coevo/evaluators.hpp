#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "coevo/search_space.hpp"

namespace coevo {

/// Fitness oracle. eval_global is the unit of search budget and is counted;
/// eval_local is the auxiliary per-block signal.
class Evaluator {
public:
    explicit Evaluator(SearchSpace space);
    virtual ~Evaluator() = default;
    Evaluator(const Evaluator&) = delete;
    Evaluator& operator=(const Evaluator&) = delete;

    /// Score in [0, 1]; increments the true-evaluation counter by one.
    double eval_global(const Chromosome& c);

    /// Native block score when the evaluator has one, otherwise the global
    /// score of `b` spliced into the frozen context chromosome (counted).
    double eval_local(const Block& b);

    virtual bool has_native_local() const { return false; }

    /// Context for frozen-context local evaluation, normally the incumbent.
    void set_context(const Chromosome& context);
    const std::optional<Chromosome>& context() const { return context_; }

    std::uint64_t true_eval_count() const { return counter_.load(); }
    const SearchSpace& space() const { return space_; }

    /// Independent instance with the same scoring function and a fresh counter.
    virtual std::unique_ptr<Evaluator> clone() const = 0;

protected:
    virtual double score_global(const Chromosome& c) = 0;
    virtual double score_local(const Block& b);

    SearchSpace space_;

private:
    std::atomic<std::uint64_t> counter_{0};
    std::optional<Chromosome> context_;
};

struct InteractionPair {
    int gene_a = 0;
    int gene_b = 0;
    /// coupling[allele_a][allele_b]
    std::vector<std::vector<double>> coupling;
};

struct SyntheticParams {
    double lambda = 0.3;
    int interaction_pairs = 4;
    double noise = 0.0;
    std::uint64_t seed = 7;
};

/// Block-separable utilities plus weighted cross-block pair couplings,
/// affinely normalized to [0, 1]. Optional noise is a pure hash of
/// (seed, alleles), so repeated evaluations agree.
class SyntheticLandscape final : public Evaluator {
public:
    SyntheticLandscape(SearchSpace space, std::vector<std::vector<double>> utilities, std::vector<InteractionPair> pairs,
                       double lambda, double noise = 0.0, std::uint64_t seed = 0);

    static std::unique_ptr<SyntheticLandscape> generate(const SearchSpace& space, const SyntheticParams& params);

    bool has_native_local() const override { return true; }
    std::unique_ptr<Evaluator> clone() const override;

    /// Uncounted scoring, for oracles and analysis.
    double score(const Chromosome& c) const;
    double local_score(const Block& b) const;
    double raw(const Chromosome& c) const;

    const std::vector<std::vector<double>>& utilities() const { return utilities_; }
    const std::vector<InteractionPair>& pairs() const { return pairs_; }
    double lambda() const { return lambda_; }

protected:
    double score_global(const Chromosome& c) override { return score(c); }
    double score_local(const Block& b) override { return local_score(b); }

private:
    std::vector<std::vector<double>> utilities_;
    std::vector<InteractionPair> pairs_;
    double lambda_;
    double noise_;
    std::uint64_t seed_;
    double lo_ = 0.0;
    double hi_ = 1.0;
    std::map<BlockTag, std::pair<double, double>> block_bounds_;
};

/// Exact lookup table loaded from CSV `allele_0,...,allele_{K-1},score`.
class TabularBenchmark final : public Evaluator {
public:
    TabularBenchmark(SearchSpace space, std::map<std::vector<int>, double> table, std::string source = {});
    static std::unique_ptr<TabularBenchmark> load(const SearchSpace& space, const std::string& path);

    std::unique_ptr<Evaluator> clone() const override;
    std::size_t size() const { return table_.size(); }

protected:
    double score_global(const Chromosome& c) override;

private:
    std::map<std::vector<int>, double> table_;
    std::string source_;
};

struct ExternalBridgeConfig {
    /// argv of the child; argv[0] is resolved through PATH.
    std::vector<std::string> command;
    std::chrono::milliseconds timeout{600'000};
    /// When true, a failed evaluation scores 0 instead of aborting the run.
    bool assign_zero_on_error = false;
    int pool_size = 1;
};

/// Line-delimited JSON bridge to a child process. The child receives
/// {"type":"hello","space":{...}} once, then one eval_global request per line,
/// and answers each with {"score": s}.
class ExternalEvaluator final : public Evaluator {
public:
    ExternalEvaluator(SearchSpace space, ExternalBridgeConfig config);
    ~ExternalEvaluator() override;

    std::unique_ptr<Evaluator> clone() const override;

protected:
    double score_global(const Chromosome& c) override;

private:
    struct Child;
    double request(Child& child, const Chromosome& c);

    ExternalBridgeConfig config_;
    std::vector<std::unique_ptr<Child>> children_;
    std::atomic<std::size_t> next_child_{0};
};

struct EvaluatorConfig {
    std::string kind = "synthetic";
    nlohmann::json parameters = nlohmann::json::object();
};

/// Empty when the parameters are well-formed for the evaluator kind; each
/// problem is reported with its JSON path.
std::vector<std::string> validate(const EvaluatorConfig& cfg, const std::string& path = "evaluator");
std::unique_ptr<Evaluator> make_evaluator(const SearchSpace& space, const EvaluatorConfig& cfg);

SyntheticParams synthetic_params_from_json(const nlohmann::json& j);

/// Exhaustive argmax; ties go to the lexicographically smallest alleles.
std::pair<Chromosome, double> bruteforce_optimum(const SearchSpace& space, Evaluator& evaluator,
                                                 std::uint64_t cap = 1'000'000);

}  // namespace coevo
