#include "coevo/diversity.hpp"

#include <cmath>

#include "coevo/error.hpp"

namespace coevo {

std::vector<std::string> validate(const DiversityConfig& cfg) {
    std::vector<std::string> out;
    auto prob = [&](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) out.push_back(std::string(name) + " must lie in [0, 1]");
    };
    prob(cfg.p_cross_high, "p_cross_high");
    prob(cfg.p_cross_low, "p_cross_low");
    prob(cfg.p_mut_high, "p_mut_high");
    prob(cfg.p_mut_low, "p_mut_low");
    if (cfg.p_cross_low > cfg.p_cross_high) out.emplace_back("p_cross_low must not exceed p_cross_high");
    if (cfg.p_mut_low > cfg.p_mut_high) out.emplace_back("p_mut_low must not exceed p_mut_high");
    if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) out.emplace_back("rho must lie in (0, 1)");
    if (!(cfg.epsilon_guard >= 0.0)) out.emplace_back("epsilon must be >= 0");
    return out;
}

std::string to_string(Mode mode) { return mode == Mode::exploit ? "exploit" : "explore"; }

Mode mode_from_string(const std::string& s) {
    if (s == "exploit") return Mode::exploit;
    if (s == "explore") return Mode::explore;
    throw ParseError("unknown mode '" + s + "'");
}

double pairwise_distance(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw InvalidOperandError("distance between vectors of size " + std::to_string(u.size()) + " and " +
                                  std::to_string(v.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double spdi(std::span<const std::vector<double>> encodings, std::uint64_t* distance_count) {
    const std::size_t n = encodings.size();
    if (n < 2) throw UndefinedDiversityError("diversity needs at least 2 members, got " + std::to_string(n));
    double total = 0.0;
    std::uint64_t computed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            total += pairwise_distance(encodings[i], encodings[j]);
            ++computed;
        }
    }
    if (distance_count) *distance_count += computed;
    return 2.0 * total / (static_cast<double>(n) * static_cast<double>(n - 1));
}

ThresholdState init_threshold(std::span<const std::vector<double>> initial_encodings, const DiversityConfig& cfg) {
    const double d0 = spdi(initial_encodings);
    return ThresholdState{d0, cfg.rho * d0};
}

RateDecision decide_rates(double spdi_value, const ThresholdState& threshold, const DiversityConfig& cfg) {
    if (spdi_value < 0.0) throw PreconditionError("negative diversity value");
    if (spdi_value >= threshold.tau)
        return RateDecision{cfg.p_cross_high, cfg.p_mut_low, Mode::exploit, spdi_value, threshold.tau};
    return RateDecision{cfg.p_cross_low, cfg.p_mut_high, Mode::explore, spdi_value, threshold.tau};
}

RateDecision fixed_rates(double spdi_value, const ThresholdState& threshold, const DiversityConfig& cfg) {
    return RateDecision{cfg.p_cross_high, cfg.p_mut_low, Mode::exploit, spdi_value, threshold.tau};
}

}  // namespace coevo
