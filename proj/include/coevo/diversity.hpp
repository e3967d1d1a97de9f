#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace coevo {

struct DiversityConfig {
    double p_cross_high = 0.9;
    double p_cross_low = 0.6;
    double p_mut_high = 0.3;
    double p_mut_low = 0.05;
    /// tau = rho * D0.
    double rho = 0.5;
    double epsilon_guard = 1e-12;
};

/// Empty when the config is consistent.
std::vector<std::string> validate(const DiversityConfig& cfg);

enum class Mode { exploit, explore };
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct RateDecision {
    double p_cross = 0.0;
    double p_mut = 0.0;
    Mode mode = Mode::exploit;
    double spdi_value = 0.0;
    double tau = 0.0;
};

struct ThresholdState {
    double initial_diversity = 0.0;
    double tau = 0.0;
};

double pairwise_distance(std::span<const double> u, std::span<const double> v);

/// Mean pairwise Euclidean distance over all unordered pairs. Summation runs in
/// fixed (i, j) order so results are bit-reproducible. When `distance_count` is
/// given it is incremented once per distance evaluated.
double spdi(std::span<const std::vector<double>> encodings, std::uint64_t* distance_count = nullptr);

ThresholdState init_threshold(std::span<const std::vector<double>> initial_encodings, const DiversityConfig& cfg);

RateDecision decide_rates(double spdi_value, const ThresholdState& threshold, const DiversityConfig& cfg);

/// Fixed exploit-mode rates, used when adaptive control is disabled.
RateDecision fixed_rates(double spdi_value, const ThresholdState& threshold, const DiversityConfig& cfg);

}  // namespace coevo
