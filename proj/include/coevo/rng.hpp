#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace coevo {

/// Counter-based random stream. Output i is a pure function of (key, i), so a
/// stream can be saved as two integers and resumed anywhere, in any process.
class Rng {
public:
    using result_type = std::uint64_t;

    Rng() = default;
    Rng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

    /// Child stream derived from a master seed and a stable name.
    static Rng child(std::uint64_t master_seed, std::string_view name);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next(); }

    std::uint64_t next();

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01();

    bool bernoulli(double p) { return uniform01() < p; }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a over bytes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace coevo
