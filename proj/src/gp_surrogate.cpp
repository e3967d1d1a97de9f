#include "coevo/gp_surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "coevo/error.hpp"

namespace coevo {

std::vector<GpHyperparams> HyperparamGrid::cells() const {
    std::vector<GpHyperparams> out;
    for (double l : lengthscales)
        for (double sf : signal_variances)
            for (double sn : noise_variances) out.push_back({l, sf, sn});
    return out;
}

HyperparamGrid HyperparamGrid::single(const GpHyperparams& h) {
    return HyperparamGrid{{h.lengthscale}, {h.signal_variance}, {h.noise_variance}};
}

Archive::Archive(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ < 1) throw PreconditionError("archive capacity must be >= 1");
}

bool Archive::insert(ArchiveEntry entry) {
    if (!(entry.score >= 0.0 && entry.score <= 1.0))
        throw PreconditionError("archive score out of [0, 1]: " + std::to_string(entry.score));
    for (auto& e : entries_) {
        if (e.encoding == entry.encoding) {
            if (entry.score > e.score) {
                e.score = entry.score;
                return true;
            }
            return false;
        }
    }
    entries_.push_back(std::move(entry));
    if (entries_.size() > capacity_) {
        auto worst = entries_.begin();
        for (auto it = entries_.begin() + 1; it != entries_.end(); ++it) {
            if (it->score < worst->score ||
                (it->score == worst->score && it->generation_added < worst->generation_added))
                worst = it;
        }
        entries_.erase(worst);
    }
    return true;
}

const ArchiveEntry* Archive::find(const Block& b) const {
    for (const auto& e : entries_)
        if (e.block == b) return &e;
    return nullptr;
}

std::vector<ArchiveEntry> Archive::top(std::size_t count) const {
    std::vector<ArchiveEntry> sorted = entries_;
    std::stable_sort(sorted.begin(), sorted.end(), [](const ArchiveEntry& a, const ArchiveEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.generation_added < b.generation_added;
    });
    if (sorted.size() > count) sorted.resize(count);
    return sorted;
}

Archive archive_insert(Archive archive, ArchiveEntry entry) {
    archive.insert(std::move(entry));
    return archive;
}

double rbf_kernel(std::span<const double> u, std::span<const double> v, const GpHyperparams& theta) {
    if (u.size() != v.size()) throw InvalidOperandError("kernel inputs differ in dimension");
    double sq = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        sq += d * d;
    }
    return theta.signal_variance * std::exp(-sq / (2.0 * theta.lengthscale * theta.lengthscale));
}

namespace {

Eigen::MatrixXd gram(const Eigen::MatrixXd& x, const GpHyperparams& theta) {
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd k(n, n);
    const double inv = 1.0 / (2.0 * theta.lengthscale * theta.lengthscale);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = theta.signal_variance;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = theta.signal_variance * std::exp(-(x.row(i) - x.row(j)).squaredNorm() * inv);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

struct Factorized {
    Eigen::MatrixXd chol;
    Eigen::VectorXd alpha;
    double jitter = 0.0;
    double lml = -std::numeric_limits<double>::infinity();
    bool ok = false;
};

Factorized factorize(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GpHyperparams& theta) {
    const Eigen::MatrixXd k = gram(x, theta);
    const Eigen::Index n = x.rows();
    for (double jitter : kJitterLadder) {
        Eigen::MatrixXd a = k;
        a.diagonal().array() += theta.noise_variance + jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() != Eigen::Success) continue;
        Eigen::MatrixXd l = llt.matrixL();
        if (!l.allFinite() || (l.diagonal().array() <= 0.0).any()) continue;
        Factorized f;
        f.chol = std::move(l);
        f.alpha = llt.solve(y);
        f.jitter = jitter;
        f.lml = -0.5 * y.dot(f.alpha) - f.chol.diagonal().array().log().sum() -
                0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
        f.ok = std::isfinite(f.lml);
        if (f.ok) return f;
    }
    return {};
}

}  // namespace

GpModel GpModel::fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets,
                     const HyperparamGrid& grid) {
    if (inputs.size() < 2) throw PreconditionError("GP fit needs at least 2 points, got " + std::to_string(inputs.size()));
    if (inputs.size() != targets.size()) throw PreconditionError("GP inputs and targets differ in length");
    const auto n = static_cast<Eigen::Index>(inputs.size());
    const auto d = static_cast<Eigen::Index>(inputs.front().size());
    GpModel model;
    model.inputs_.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(inputs[static_cast<std::size_t>(i)].size()) != d)
            throw PreconditionError("GP inputs differ in dimension");
        for (Eigen::Index j = 0; j < d; ++j) model.inputs_(i, j) = inputs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    Eigen::VectorXd y(n);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) sum += targets[static_cast<std::size_t>(i)];
    model.mean_ = sum / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = targets[static_cast<std::size_t>(i)] - model.mean_;

    Factorized best;
    GpHyperparams best_theta;
    for (const auto& theta : grid.cells()) {
        auto f = factorize(model.inputs_, y, theta);
        if (f.ok && (!best.ok || f.lml > best.lml)) {
            best = std::move(f);
            best_theta = theta;
        }
    }
    if (!best.ok) throw SurrogateDegenerateError("kernel matrix not positive definite after maximal jitter");
    model.chol_ = std::move(best.chol);
    model.alpha_ = std::move(best.alpha);
    model.theta_ = best_theta;
    model.jitter_ = best.jitter;
    model.lml_ = best.lml;
    return model;
}

GpModel GpModel::fit(const Archive& archive, const HyperparamGrid& grid) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto& e : archive.entries()) {
        x.push_back(e.encoding);
        y.push_back(e.score);
    }
    return fit(x, y, grid);
}

Prediction GpModel::predict(std::span<const double> x) const {
    if (static_cast<Eigen::Index>(x.size()) != inputs_.cols()) throw PreconditionError("query dimension mismatch");
    const Eigen::Index n = inputs_.rows();
    Eigen::VectorXd kstar(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double sq = 0.0;
        for (Eigen::Index j = 0; j < inputs_.cols(); ++j) {
            const double d = inputs_(i, j) - x[static_cast<std::size_t>(j)];
            sq += d * d;
        }
        kstar(i) = theta_.signal_variance * std::exp(-sq / (2.0 * theta_.lengthscale * theta_.lengthscale));
    }
    Prediction p;
    p.mean = mean_ + kstar.dot(alpha_);
    const Eigen::VectorXd v = chol_.triangularView<Eigen::Lower>().solve(kstar);
    p.variance = std::max(0.0, theta_.signal_variance - v.squaredNorm());
    return p;
}

double acquisition(double mean, double variance, double beta) {
    if (variance < 0.0) throw PreconditionError("negative variance in acquisition");
    return mean + beta * std::sqrt(variance);
}

std::size_t propose_next(const GpModel& model, const std::vector<std::vector<double>>& candidate_encodings,
                         double beta) {
    if (candidate_encodings.empty()) throw PreconditionError("empty candidate list");
    std::size_t best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidate_encodings.size(); ++i) {
        const auto p = model.predict(candidate_encodings[i]);
        const double u = acquisition(p.mean, p.variance, beta);
        if (u > best_value) {
            best_value = u;
            best = i;
        }
    }
    return best;
}

Block propose_next(const GpModel& model, const SearchSpace& space, const std::vector<Block>& candidates, double beta) {
    if (candidates.empty()) throw PreconditionError("empty candidate list");
    std::vector<std::vector<double>> enc;
    enc.reserve(candidates.size());
    for (const auto& b : candidates) enc.push_back(encode_block(space, b));
    return candidates[propose_next(model, enc, beta)];
}

std::vector<Block> candidate_pool(const SearchSpace& space, BlockTag tag, Rng& rng) {
    if (block_space_size(space, tag) <= kEnumerationLimit) return enumerate_blocks(space, tag);
    std::vector<Block> out;
    out.reserve(kSampledPoolSize);
    for (std::size_t i = 0; i < kSampledPoolSize; ++i) out.push_back(random_block(space, tag, rng));
    return out;
}

}  // namespace coevo
