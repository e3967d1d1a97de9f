#include <doctest.h>

#include <cmath>
#include <set>

#include "coevo/error.hpp"
#include "coevo/genetic_ops.hpp"
#include "support.hpp"

using namespace coevo;
using testing_support::blocked_space;
using testing_support::hamming;

namespace {

Individual scored(std::vector<int> alleles, double f) { return Individual{Chromosome{std::move(alleles)}, f}; }

std::set<int> genes_of(const SearchSpace& space, BlockTag tag) {
    const auto& ids = space.genes_of(tag);
    return {ids.begin(), ids.end()};
}

}  // namespace

TEST_CASE("tournament picks the best with k = N and breaks ties by index") {
    std::vector<Individual> members{scored({0}, 0.1), scored({1}, 0.7), scored({0}, 0.3)};
    Rng rng(1);
    // With replacement, k = N may miss the best; many draws make that vanishingly rare.
    for (int i = 0; i < 50; ++i) CHECK(tournament_select(members, 64, rng) == 1);

    std::vector<Individual> tied{scored({0}, 0.2), scored({1}, 0.9), scored({0}, 0.9)};
    for (int i = 0; i < 50; ++i) CHECK(tournament_select(tied, 64, rng) == 1);

    std::vector<Individual> unevaluated{scored({0}, 0.2), Individual{Chromosome{{1}}}};
    Rng r2(2);
    CHECK_THROWS_AS(
        [&] {
            for (int i = 0; i < 100; ++i) tournament_select(unevaluated, 2, r2);
        }(),
        PreconditionError);
}

TEST_CASE("k = 1 tournament is uniform") {
    std::vector<Individual> members{scored({0}, 0.1), scored({1}, 0.5), scored({0}, 0.9), scored({1}, 0.3)};
    Rng rng(4);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 8000; ++i) ++counts[tournament_select(members, 1, rng)];
    for (int c : counts) CHECK(std::abs(c / 8000.0 - 0.25) < 0.03);
}

TEST_CASE("raising a member's fitness never lowers its selection rate at k = 2") {
    std::vector<Individual> low{scored({0}, 0.1), scored({1}, 0.5), scored({0}, 0.9)};
    auto high = low;
    high[0].fitness = 0.7;
    Rng a(8), b(8);
    int picked_low = 0, picked_high = 0;
    for (int i = 0; i < 20000; ++i) {
        picked_low += tournament_select(low, 2, a) == 0;
        picked_high += tournament_select(high, 2, b) == 0;
    }
    CHECK(picked_high >= picked_low);
}

TEST_CASE("crossover swaps exactly the named modality blocks") {
    auto space = blocked_space({3, 3, 2}, 3);
    Chromosome a{std::vector<int>(8, 0)};
    Chromosome b{std::vector<int>(8, 1)};
    auto [a2, b2] = cross_modality_crossover(space, a, b, BlockTag::modality(1), BlockTag::modality(2));
    CHECK(a2.alleles == std::vector<int>{0, 0, 0, 1, 1, 1, 0, 0});
    CHECK(b2.alleles == std::vector<int>{0, 0, 0, 1, 1, 1, 1, 1});

    auto [s1, s2] = cross_modality_crossover(space, a, a, BlockTag::modality(1), BlockTag::modality(2));
    CHECK(s1 == a);
    CHECK(s2 == a);

    CHECK_THROWS_AS(cross_modality_crossover(space, a, b, BlockTag::modality(1), BlockTag::modality(1)),
                    InvalidOperandError);
    CHECK_THROWS_AS(cross_modality_crossover(space, a, b, BlockTag::modality(1), BlockTag::fusion()),
                    InvalidOperandError);
}

TEST_CASE("crossover differences stay inside the swapped block for random parents") {
    auto space = blocked_space({4, 3, 5, 2}, 4);
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        auto a = random_chromosome(space, rng);
        auto b = random_chromosome(space, rng);
        const int m = static_cast<int>(rng.uniform_index(3)) + 1;
        int mp = static_cast<int>(rng.uniform_index(2)) + 1;
        if (mp >= m) ++mp;
        auto [a2, b2] = cross_modality_crossover(space, a, b, BlockTag::modality(m), BlockTag::modality(mp));
        const auto in_mp = genes_of(space, BlockTag::modality(mp));
        const auto in_m = genes_of(space, BlockTag::modality(m));
        CHECK(hamming(a.alleles, a2.alleles) <= static_cast<int>(in_mp.size()));
        for (std::size_t i = 0; i < a.alleles.size(); ++i) {
            if (a.alleles[i] != a2.alleles[i]) CHECK(in_mp.count(static_cast<int>(i)) == 1);
            if (b.alleles[i] != b2.alleles[i]) CHECK(in_m.count(static_cast<int>(i)) == 1);
        }
        CHECK(is_valid(space, a2));
        CHECK(is_valid(space, b2));
    }
}

TEST_CASE("mutation flips exactly one gene") {
    auto forced = blocked_space({0, 1}, 2);
    Rng rng(2);
    for (int i = 0; i < 20; ++i) CHECK(global_mutation(forced, Chromosome{{0}}, rng).alleles == std::vector<int>{1});

    auto space = blocked_space({1, 1, 1}, 4);
    std::vector<int> per_position(3, 0);
    for (int i = 0; i < 12000; ++i) {
        auto c = random_chromosome(space, rng);
        auto m = global_mutation(space, c, rng);
        REQUIRE(hamming(c.alleles, m.alleles) == 1);
        CHECK(is_valid(space, m));
        for (std::size_t j = 0; j < 3; ++j)
            if (c.alleles[j] != m.alleles[j]) ++per_position[j];
    }
    for (int n : per_position) CHECK(std::abs(n - 4000) <= 200);
}

TEST_CASE("variation with zero rates clones parents") {
    auto space = blocked_space({2, 2, 1}, 3);
    Rng rng(6);
    Population pop;
    for (int i = 0; i < 10; ++i) pop.members.push_back({random_chromosome(space, rng), 0.1 * i});
    auto kids = apply_variation(space, pop, RateDecision{0.0, 0.0}, rng);
    CHECK(kids.size() == 10);
    std::set<Chromosome> parents;
    for (const auto& m : pop.members) parents.insert(m.chromosome);
    for (const auto& k : kids) {
        CHECK(parents.count(k.chromosome) == 1);
        CHECK_FALSE(k.fitness.has_value());
    }
}

TEST_CASE("full-rate variation changes one modality block plus at most one gene") {
    auto space = blocked_space({3, 3, 2}, 3);
    Rng rng(12);
    Population pop;
    for (int i = 0; i < 20; ++i) pop.members.push_back({random_chromosome(space, rng), rng.uniform01()});
    for (int round = 0; round < 200; ++round) {
        auto kids = apply_variation(space, pop, RateDecision{1.0, 1.0}, rng, 2, 21);
        CHECK(kids.size() == 21);
        for (const auto& k : kids) {
            CHECK(is_valid(space, k.chromosome));
            // Some parent pair explains the child: closest parent differs in at most
            // one modality block plus one mutated gene outside it.
            bool explained = false;
            for (const auto& p : pop.members) {
                for (BlockTag tag : {BlockTag::modality(1), BlockTag::modality(2)}) {
                    const auto block = genes_of(space, tag);
                    int outside = 0;
                    for (std::size_t i = 0; i < k.chromosome.alleles.size(); ++i)
                        if (!block.count(static_cast<int>(i)) && k.chromosome.alleles[i] != p.chromosome.alleles[i])
                            ++outside;
                    if (outside <= 1) explained = true;
                }
            }
            CHECK(explained);
        }
    }
}

TEST_CASE("single-modality variation still mutates") {
    auto space = blocked_space({4, 1}, 3);
    Rng rng(3);
    Population pop;
    for (int i = 0; i < 6; ++i) pop.members.push_back({random_chromosome(space, rng), 0.5});
    auto kids = apply_variation(space, pop, RateDecision{1.0, 1.0}, rng);
    CHECK(kids.size() == 6);
    for (const auto& k : kids) CHECK(k.origin == Origin::mutation);
}
