#pragma once

// Slow reference implementations used only by tests. None of them share code
// with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

inline double euclid(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

/// Mean over ordered pairs i != j, which equals the unordered-pair mean.
inline double spdi(const std::vector<Vec>& enc) {
    const std::size_t n = enc.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) total += euclid(enc[i], enc[j]);
    return total / static_cast<double>(n * (n - 1));
}

/// Two-pass unbiased sample variance.
inline double sample_variance(const Vec& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(xs.size() - 1);
}

/// Gauss-Jordan inverse with partial pivoting.
inline Mat invert(Mat a) {
    const std::size_t n = a.size();
    Mat inv(n, Vec(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (a[pivot][col] == 0.0) throw std::runtime_error("singular matrix");
        std::swap(a[pivot], a[col]);
        std::swap(inv[pivot], inv[col]);
        const double d = a[col][col];
        for (std::size_t k = 0; k < n; ++k) {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (std::size_t k = 0; k < n; ++k) {
                a[r][k] -= f * a[col][k];
                inv[r][k] -= f * inv[col][k];
            }
        }
    }
    return inv;
}

/// log det via the same elimination, for symmetric positive definite input.
inline double log_det(Mat a) {
    const std::size_t n = a.size();
    double acc = 0.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[pivot], a[col]);
        acc += std::log(std::abs(a[col][col]));
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t k = col; k < n; ++k) a[r][k] -= f * a[col][k];
        }
    }
    return acc;
}

inline double rbf(const Vec& u, const Vec& v, double lengthscale, double signal_variance) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) d2 += (u[k] - v[k]) * (u[k] - v[k]);
    return signal_variance * std::exp(-d2 / (2.0 * lengthscale * lengthscale));
}

/// GP posterior by explicit inversion of K + (noise + jitter) I on centered targets.
struct DenseGp {
    std::vector<Vec> x;
    Vec y_centered;
    double mean = 0.0;
    double lengthscale = 1.0;
    double signal_variance = 1.0;
    double noise_plus_jitter = 0.0;
    Mat k_inv;

    DenseGp(std::vector<Vec> inputs, const Vec& targets, double ls, double sf2, double noise_plus_jitter_)
        : x(std::move(inputs)), lengthscale(ls), signal_variance(sf2), noise_plus_jitter(noise_plus_jitter_) {
        for (double t : targets) mean += t;
        mean /= static_cast<double>(targets.size());
        for (double t : targets) y_centered.push_back(t - mean);
        k_inv = invert(gram());
    }

    Mat gram() const {
        const std::size_t n = x.size();
        Mat k(n, Vec(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                k[i][j] = rbf(x[i], x[j], lengthscale, signal_variance) + (i == j ? noise_plus_jitter : 0.0);
        return k;
    }

    std::pair<double, double> predict(const Vec& q) const {
        const std::size_t n = x.size();
        Vec ks(n);
        for (std::size_t i = 0; i < n; ++i) ks[i] = rbf(q, x[i], lengthscale, signal_variance);
        double mu = mean;
        double var = signal_variance;
        for (std::size_t i = 0; i < n; ++i) {
            double row_y = 0.0;
            double row_k = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row_y += k_inv[i][j] * y_centered[j];
                row_k += k_inv[i][j] * ks[j];
            }
            mu += ks[i] * row_y;
            var -= ks[i] * row_k;
        }
        return {mu, std::max(0.0, var)};
    }

    double log_marginal_likelihood() const {
        const std::size_t n = x.size();
        double quad = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) quad += y_centered[i] * k_inv[i][j] * y_centered[j];
        return -0.5 * quad - 0.5 * log_det(gram()) - 0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
    }
};

/// Exhaustive argmax over a mixed-radix index space; ties keep the
/// lexicographically smallest digit vector.
inline std::pair<std::vector<int>, double> exhaustive_argmax(const std::vector<int>& radices,
                                                             const std::function<double(const std::vector<int>&)>& f) {
    std::vector<int> digits(radices.size(), 0);
    std::vector<int> best;
    double best_value = -std::numeric_limits<double>::infinity();
    for (;;) {
        const double v = f(digits);
        if (v > best_value) {
            best_value = v;
            best = digits;
        }
        std::size_t pos = radices.size();
        while (pos > 0) {
            --pos;
            if (++digits[pos] < radices[pos]) break;
            digits[pos] = 0;
            if (pos == 0) return {best, best_value};
        }
        if (radices.empty()) return {best, best_value};
    }
}

}  // namespace oracle
