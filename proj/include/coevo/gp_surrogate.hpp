#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "coevo/rng.hpp"
#include "coevo/search_space.hpp"

namespace coevo {

struct GpHyperparams {
    double lengthscale = 1.0;
    double signal_variance = 1.0;
    double noise_variance = 1e-6;
    friend bool operator==(const GpHyperparams&, const GpHyperparams&) = default;
};

/// Candidate hyperparameters; fit picks the cell with the highest log marginal
/// likelihood, first cell winning ties. Cells iterate lengthscale-major.
struct HyperparamGrid {
    std::vector<double> lengthscales{0.5, 1.0, 2.0, 4.0};
    std::vector<double> signal_variances{0.25, 1.0};
    std::vector<double> noise_variances{1e-6, 1e-4, 1e-2};

    std::vector<GpHyperparams> cells() const;
    static HyperparamGrid single(const GpHyperparams& h);
};

/// Jitter ladder tried in order when the kernel matrix fails to factorize.
inline constexpr double kJitterLadder[] = {1e-8, 1e-7, 1e-6, 1e-5, 1e-4};

struct ArchiveEntry {
    Block block;
    std::vector<double> encoding;
    double score = 0.0;
    int generation_added = 0;
};

/// Bounded, deduplicated store of scored blocks. Entries keep insertion order.
class Archive {
public:
    explicit Archive(std::size_t capacity = 256);

    /// Dedupes by encoding keeping the higher score; evicts the lowest score
    /// (oldest first on ties) beyond capacity. Returns true if the archive changed.
    bool insert(ArchiveEntry entry);

    const std::vector<ArchiveEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t capacity() const { return capacity_; }
    const ArchiveEntry* find(const Block& b) const;

    /// Best `count` entries by score, older generation first on ties.
    std::vector<ArchiveEntry> top(std::size_t count) const;

private:
    std::size_t capacity_;
    std::vector<ArchiveEntry> entries_;
};

Archive archive_insert(Archive archive, ArchiveEntry entry);

double rbf_kernel(std::span<const double> u, std::span<const double> v, const GpHyperparams& theta);

struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
};

/// Zero-mean GP on centered targets with an RBF kernel and a cached Cholesky factor.
class GpModel {
public:
    /// Selects hyperparameters from the grid. Needs >= 2 points.
    static GpModel fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets,
                       const HyperparamGrid& grid = {});
    static GpModel fit(const Archive& archive, const HyperparamGrid& grid = {});

    Prediction predict(std::span<const double> x) const;

    const GpHyperparams& hyperparams() const { return theta_; }
    double jitter() const { return jitter_; }
    double log_marginal_likelihood() const { return lml_; }
    double target_mean() const { return mean_; }
    std::size_t size() const { return static_cast<std::size_t>(inputs_.rows()); }

private:
    Eigen::MatrixXd inputs_;
    Eigen::MatrixXd chol_;  // lower triangular
    Eigen::VectorXd alpha_;
    GpHyperparams theta_;
    double jitter_ = 0.0;
    double lml_ = 0.0;
    double mean_ = 0.0;
};

double acquisition(double mean, double variance, double beta);

/// Index of the candidate with the highest UCB; lowest index wins ties.
std::size_t propose_next(const GpModel& model, const std::vector<std::vector<double>>& candidate_encodings,
                         double beta);
Block propose_next(const GpModel& model, const SearchSpace& space, const std::vector<Block>& candidates, double beta);

inline constexpr std::uint64_t kEnumerationLimit = 10'000;
inline constexpr std::size_t kSampledPoolSize = 1'000;

/// Full enumeration of the tag's sub-space when it has at most 10,000 blocks,
/// otherwise 1,000 uniform samples.
std::vector<Block> candidate_pool(const SearchSpace& space, BlockTag tag, Rng& rng);

}  // namespace coevo
