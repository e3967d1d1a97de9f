#include <doctest.h>

#include <cmath>
#include <limits>

#include "coevo/error.hpp"
#include "coevo/gp_surrogate.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace coevo;

namespace {

std::vector<std::vector<double>> random_points(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<std::vector<double>> x(n, std::vector<double>(dim));
    for (auto& row : x)
        for (double& v : row) v = rng.uniform01() * 3.0;
    return x;
}

std::vector<double> random_targets(Rng& rng, std::size_t n) {
    std::vector<double> y(n);
    for (double& v : y) v = rng.uniform01();
    return y;
}

}  // namespace

TEST_CASE("rbf kernel values") {
    GpHyperparams theta{1.5, 0.25, 0.0};
    std::vector<double> u{1, 2}, v{1, 2};
    CHECK(rbf_kernel(u, v, theta) == 0.25);
    // Squared distance 2 * l^2 = 4.5 -> exp(-1).
    std::vector<double> w{1 + std::sqrt(4.5), 2};
    CHECK(rbf_kernel(u, w, theta) == doctest::Approx(0.25 * std::exp(-1.0)).epsilon(1e-12));
    std::vector<double> far{1e6, 0};
    CHECK(rbf_kernel(u, far, theta) <= 1e-12);
}

TEST_CASE("noiseless GP interpolates its training data") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_points(rng, 12, 4);
        auto y = random_targets(rng, 12);
        auto model = GpModel::fit(x, y, HyperparamGrid::single({0.7, 1.0, 0.0}));
        for (std::size_t i = 0; i < x.size(); ++i) {
            auto p = model.predict(x[i]);
            CHECK(std::abs(p.mean - y[i]) <= 1e-6);
            CHECK(p.variance <= 1e-6);
        }
    }
}

TEST_CASE("GP matches the dense-inverse oracle and picks the best grid cell") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(24);
        auto x = random_points(rng, n, 5);
        auto y = random_targets(rng, n);
        auto model = GpModel::fit(x, y);
        const auto theta = model.hyperparams();

        double best_lml = -std::numeric_limits<double>::infinity();
        for (const auto& cell : HyperparamGrid{}.cells()) {
            oracle::DenseGp ref(x, y, cell.lengthscale, cell.signal_variance, cell.noise_variance + model.jitter());
            best_lml = std::max(best_lml, ref.log_marginal_likelihood());
        }
        CHECK(model.log_marginal_likelihood() == doctest::Approx(best_lml).epsilon(1e-8));

        oracle::DenseGp ref(x, y, theta.lengthscale, theta.signal_variance, theta.noise_variance + model.jitter());
        for (int q = 0; q < 10; ++q) {
            auto query = random_points(rng, 1, 5)[0];
            auto p = model.predict(query);
            auto [mu, var] = ref.predict(query);
            CHECK(std::abs(p.mean - mu) <= 1e-8);
            CHECK(std::abs(p.variance - var) <= 1e-8);
            CHECK(p.variance >= 0.0);
            CHECK(p.variance <= theta.signal_variance + theta.noise_variance);
        }
    }
}

TEST_CASE("far from the data the GP reverts to the centered prior") {
    Rng rng(5);
    auto x = random_points(rng, 10, 3);
    auto y = random_targets(rng, 10);
    auto model = GpModel::fit(x, y);
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= 10.0;
    auto p = model.predict(std::vector<double>{1e4, -1e4, 1e4});
    CHECK(std::abs(p.mean - mean) <= 1e-9);
    CHECK(std::abs(p.variance - model.hyperparams().signal_variance) <= 1e-9);
}

TEST_CASE("constant targets give a constant posterior mean") {
    Rng rng(6);
    auto x = random_points(rng, 8, 2);
    std::vector<double> y(8, 0.4);
    auto model = GpModel::fit(x, y);
    for (int q = 0; q < 5; ++q) CHECK(model.predict(random_points(rng, 1, 2)[0]).mean == doctest::Approx(0.4));
}

TEST_CASE("fit needs two points") {
    std::vector<std::vector<double>> x{{0.0}};
    std::vector<double> y{0.5};
    CHECK_THROWS_AS(GpModel::fit(x, y), PreconditionError);
}

TEST_CASE("acquisition is upper confidence bound") {
    CHECK(acquisition(0.5, 0.04, 2.0) == doctest::Approx(0.9));
    CHECK(acquisition(0.3, 0.0, 7.0) == 0.3);
    CHECK(acquisition(0.3, 0.5, 0.0) == 0.3);
    CHECK(acquisition(0.3, 0.5, 1.0) < acquisition(0.3, 0.6, 1.0));
    CHECK_THROWS_AS(acquisition(0.0, -1.0, 1.0), PreconditionError);
}

TEST_CASE("propose_next is the exhaustive acquisition argmax over a 64-block sub-space") {
    auto space = testing_support::blocked_space({3, 1, 1}, 4);
    const auto tag = BlockTag::modality(1);
    Rng rng(10);
    Archive archive;
    for (int i = 0; i < 12; ++i) {
        Block b = random_block(space, tag, rng);
        archive.insert({b, encode_block(space, b), rng.uniform01(), 0});
    }
    auto model = GpModel::fit(archive);
    auto pool = candidate_pool(space, tag, rng);
    REQUIRE(pool.size() == 64);
    for (double beta : {0.0, 0.5, 2.0}) {
        auto chosen = propose_next(model, space, pool, beta);
        auto [digits, best] = oracle::exhaustive_argmax({4, 4, 4}, [&](const std::vector<int>& a) {
            auto p = model.predict(encode_block(space, Block{tag, a}));
            return p.mean + beta * std::sqrt(p.variance);
        });
        CHECK(chosen.alleles == digits);
    }
    CHECK(propose_next(model, space, std::vector<Block>{pool[5]}, 2.0) == pool[5]);
    CHECK_THROWS_AS(propose_next(model, space, std::vector<Block>{}, 2.0), PreconditionError);
}

TEST_CASE("pure exploitation picks the best training point when noiseless") {
    auto space = testing_support::blocked_space({2, 1, 1}, 3);
    const auto tag = BlockTag::modality(1);
    Archive archive;
    double s = 0.1;
    for (auto& b : enumerate_blocks(space, tag)) {
        archive.insert({b, encode_block(space, b), s, 0});
        s = std::fmod(s + 0.37, 0.9);
    }
    auto best = archive.top(1)[0].block;
    auto model = GpModel::fit(archive, HyperparamGrid::single({1.0, 1.0, 0.0}));
    CHECK(propose_next(model, space, enumerate_blocks(space, tag), 0.0) == best);
}

TEST_CASE("candidate pool enumerates small sub-spaces and samples large ones") {
    Rng rng(1);
    auto desk = presets::desk_space();
    CHECK(candidate_pool(desk, BlockTag::modality(1), rng).size() == 81);
    auto big = testing_support::blocked_space({8, 8, 2}, 4);
    CHECK(candidate_pool(big, BlockTag::modality(1), rng).size() == kSampledPoolSize);
}

TEST_CASE("archive deduplicates, keeps the higher score and evicts the weakest") {
    auto space = testing_support::blocked_space({2, 1, 1}, 3);
    const auto tag = BlockTag::modality(1);
    auto entry = [&](std::vector<int> a, double score, int gen) {
        Block b{tag, std::move(a)};
        return ArchiveEntry{b, encode_block(space, b), score, gen};
    };
    Archive archive(3);
    archive.insert(entry({0, 0}, 0.5, 0));
    CHECK_FALSE(archive.insert(entry({0, 0}, 0.2, 1)));
    CHECK(archive.entries()[0].score == 0.5);
    CHECK(archive.insert(entry({0, 0}, 0.8, 1)));
    CHECK(archive.size() == 1);
    CHECK(archive.entries()[0].score == 0.8);

    archive.insert(entry({1, 0}, 0.3, 0));
    archive.insert(entry({2, 0}, 0.3, 1));
    archive.insert(entry({2, 2}, 0.6, 2));
    CHECK(archive.size() == 3);
    // Tie on the lowest score: the older entry goes.
    CHECK(archive.find(Block{tag, {1, 0}}) == nullptr);
    CHECK(archive.find(Block{tag, {2, 0}}) != nullptr);

    auto top = archive.top(2);
    CHECK(top[0].score == 0.8);
    CHECK(top[1].score == 0.6);
    CHECK_THROWS_AS(archive.insert(entry({1, 1}, 1.5, 0)), PreconditionError);
}

TEST_CASE("archive never exceeds capacity and keeps encodings unique") {
    auto space = testing_support::blocked_space({3, 1, 1}, 3);
    Rng rng(13);
    Archive archive(10);
    for (int i = 0; i < 500; ++i) {
        Block b = random_block(space, BlockTag::modality(1), rng);
        archive.insert({b, encode_block(space, b), rng.uniform01(), i});
        REQUIRE(archive.size() <= 10);
    }
    for (std::size_t i = 0; i < archive.size(); ++i)
        for (std::size_t j = i + 1; j < archive.size(); ++j)
            CHECK(archive.entries()[i].encoding != archive.entries()[j].encoding);
}
