#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "coevo/diversity.hpp"
#include "coevo/error.hpp"
#include "coevo/search_space.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace coevo;

TEST_CASE("pairwise distance basics") {
    std::vector<double> u{1, 0, 0, 1};
    CHECK(pairwise_distance(u, u) == 0.0);
    CHECK(pairwise_distance(u, std::vector<double>{0, 1, 0, 1}) == doctest::Approx(1.4142135624));
    auto space = presets::nas_space();
    Chromosome a{std::vector<int>(18, 0)};
    Chromosome b = a;
    for (int i = 0; i < 8; ++i) b.alleles[static_cast<std::size_t>(i)] = 2;
    CHECK(pairwise_distance(encode(space, a), encode(space, b)) == doctest::Approx(4.0));
    CHECK_THROWS_AS(pairwise_distance(u, std::vector<double>{1}), InvalidOperandError);
}

TEST_CASE("spdi of known configurations") {
    // Points on a line at 0, 1, 3: pairwise distances 1, 2, 3.
    std::vector<std::vector<double>> line{{0.0}, {1.0}, {3.0}};
    CHECK(spdi(line) == doctest::Approx(2.0));
    std::vector<std::vector<double>> same(5, std::vector<double>{1, 0, 1});
    CHECK(spdi(same) == 0.0);
    std::vector<std::vector<double>> one{{1.0}};
    CHECK_THROWS_AS(spdi(one), UndefinedDiversityError);
}

TEST_CASE("spdi matches the double-loop oracle, with duplicates and permutations") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 3 + static_cast<int>(rng.uniform_index(16));
        const int n = 2 + static_cast<int>(rng.uniform_index(49));
        auto space = testing_support::blocked_space({k - 1, 1}, 2 + static_cast<int>(rng.uniform_index(3)));
        std::vector<std::vector<double>> enc;
        for (int i = 0; i < n; ++i) enc.push_back(encode(space, random_chromosome(space, rng)));
        if (n > 3) enc[1] = enc[0];
        std::uint64_t count = 0;
        const double fast = spdi(enc, &count);
        CHECK(std::abs(fast - oracle::spdi(enc)) <= 1e-9);
        CHECK(count == static_cast<std::uint64_t>(n * (n - 1) / 2));
        std::reverse(enc.begin(), enc.end());
        CHECK(std::abs(spdi(enc) - fast) <= 1e-9);
        CHECK(fast >= 0.0);
    }
}

TEST_CASE("spdi scales linearly with the encodings") {
    Rng rng(2);
    auto space = presets::nas_space();
    std::vector<std::vector<double>> enc, scaled;
    for (int i = 0; i < 12; ++i) {
        enc.push_back(encode(space, random_chromosome(space, rng)));
        scaled.push_back(enc.back());
        for (double& x : scaled.back()) x *= 3.0;
    }
    CHECK(spdi(scaled) == doctest::Approx(3.0 * spdi(enc)).epsilon(1e-12));
    DiversityConfig cfg;
    auto t1 = init_threshold(enc, cfg);
    auto t3 = init_threshold(scaled, cfg);
    CHECK(decide_rates(spdi(enc), t1, cfg).mode == decide_rates(spdi(scaled), t3, cfg).mode);
}

TEST_CASE("threshold is a fixed fraction of the initial diversity") {
    DiversityConfig cfg;
    std::vector<std::vector<double>> pair{{0.0}, {4.0}};
    auto t = init_threshold(pair, cfg);
    CHECK(t.initial_diversity == 4.0);
    CHECK(t.tau == 2.0);
    cfg.rho = 0.9;
    std::vector<std::vector<double>> unit{{0.0}, {1.0}};
    CHECK(init_threshold(unit, cfg).tau == doctest::Approx(0.9));

    std::vector<std::vector<double>> same{{1.0}, {1.0}};
    auto zero = init_threshold(same, DiversityConfig{});
    CHECK(zero.tau == 0.0);
    CHECK(decide_rates(0.0, zero, DiversityConfig{}).mode == Mode::exploit);
}

TEST_CASE("rate decision is a step at tau") {
    DiversityConfig cfg;
    ThresholdState t{4.0, 2.0};
    auto at = decide_rates(2.0, t, cfg);
    CHECK(at.mode == Mode::exploit);
    auto above = decide_rates(3.0, t, cfg);
    CHECK(above.p_cross == 0.9);
    CHECK(above.p_mut == 0.05);
    auto below = decide_rates(0.0, t, cfg);
    CHECK(below.mode == Mode::explore);
    CHECK(below.p_cross == 0.6);
    CHECK(below.p_mut == 0.3);
    CHECK(decide_rates(std::nextafter(2.0, 0.0), t, cfg).mode == Mode::explore);
    CHECK(fixed_rates(0.0, t, cfg).mode == Mode::exploit);
}

TEST_CASE("diversity config validation") {
    DiversityConfig cfg;
    CHECK(validate(cfg).empty());
    cfg.p_cross_low = 0.95;
    cfg.rho = 1.0;
    CHECK(validate(cfg).size() == 2);
}
