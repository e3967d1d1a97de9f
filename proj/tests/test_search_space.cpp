#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "coevo/error.hpp"
#include "coevo/search_space.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace coevo;
using testing_support::blocked_space;
using testing_support::hamming;

TEST_CASE("well-formed presets validate") {
    CHECK(validate_space(presets::nas_space()).empty());
    CHECK(validate_space(presets::desk_space()).empty());
    CHECK(presets::nas_space().gene_count() == 18);
    CHECK(presets::desk_space().gene_count() == 9);
}

TEST_CASE("validate_space reports duplicate ownership and degenerate genes") {
    auto space = blocked_space({2, 2, 1}, 3);
    space.partition[BlockTag::fusion()].push_back(1);
    auto v = validate_space(space);
    CHECK(std::find(v.begin(), v.end(), "duplicate ownership: gene 1") != v.end());

    auto degenerate = blocked_space({2, 2, 1}, 3);
    degenerate.genes[3].candidates = {"only"};
    v = validate_space(degenerate);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("< 2 candidates") != std::string::npos);
    CHECK_THROWS_AS(require_valid(degenerate), InvalidSpaceError);
}

TEST_CASE("validate_space reports a gene missing from the partition") {
    auto space = blocked_space({2, 2, 1}, 3);
    space.partition[BlockTag::modality(2)].pop_back();
    auto v = validate_space(space);
    CHECK(std::find(v.begin(), v.end(), "missing gene in partition: gene 3") != v.end());
}

TEST_CASE("random_chromosome is seeded and uniform") {
    auto space = blocked_space({1, 1, 1}, 4);
    Rng a(11), b(11);
    CHECK(random_chromosome(space, a) == random_chromosome(space, b));

    Rng rng(3);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(random_chromosome(space, rng).alleles[0])];
    for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);
}

TEST_CASE("decompose and reassemble are inverse") {
    auto space = presets::nas_space();
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        auto c = random_chromosome(space, rng);
        auto blocks = decompose(space, c);
        REQUIRE(blocks.size() == 3);
        CHECK(blocks[0].alleles.size() == 8);
        CHECK(blocks[1].alleles.size() == 8);
        CHECK(blocks[2].alleles.size() == 2);
        CHECK(blocks[2].tag.is_fusion());
        CHECK(reassemble(space, blocks) == c);
    }
}

TEST_CASE("decompose with a single modality yields two blocks") {
    auto space = blocked_space({3, 1}, 2);
    Chromosome c{{1, 0, 1, 1}};
    CHECK(decompose(space, c).size() == 2);
}

TEST_CASE("reassemble mixes parents at block boundaries and rejects bad block sets") {
    auto space = blocked_space({2, 2, 1}, 3);
    Chromosome a{{0, 0, 0, 0, 0}};
    Chromosome b{{2, 2, 2, 2, 2}};
    auto ba = decompose(space, a);
    auto bb = decompose(space, b);
    std::vector<Block> mix{ba[0], bb[1], bb[2]};
    CHECK(reassemble(space, mix).alleles == std::vector<int>{0, 0, 2, 2, 2});

    std::vector<Block> dup{ba[0], ba[0], bb[2]};
    CHECK_THROWS_AS(reassemble(space, dup), MergeError);
    std::vector<Block> short_block{ba[0], Block{BlockTag::modality(2), {1}}, bb[2]};
    CHECK_THROWS_AS(reassemble(space, short_block), InvalidBlockError);
    CHECK_THROWS_AS(decompose(space, Chromosome{{0, 0}}), InvalidChromosomeError);
}

TEST_CASE("one-hot encoding geometry") {
    auto binary = blocked_space({1, 1, 1}, 2);
    CHECK(encode(binary, Chromosome{{0, 1, 0}}) == std::vector<double>{1, 0, 0, 1, 1, 0});

    auto space = presets::nas_space();
    Rng rng(9);
    for (int i = 0; i < 500; ++i) {
        auto a = random_chromosome(space, rng);
        auto b = random_chromosome(space, rng);
        const double d = oracle::euclid(encode(space, a), encode(space, b));
        CHECK(d == doctest::Approx(std::sqrt(2.0 * hamming(a.alleles, b.alleles))).epsilon(1e-12));

        // Block encodings are slices of the full encoding, in block order.
        std::vector<double> joined;
        for (const auto& blk : decompose(space, a)) {
            auto e = encode_block(space, blk);
            joined.insert(joined.end(), e.begin(), e.end());
        }
        auto full = encode(space, a);
        std::vector<double> by_partition;
        std::size_t offset = 0;
        std::vector<std::size_t> offsets;
        for (const auto& g : space.genes) {
            offsets.push_back(offset);
            offset += g.candidates.size();
        }
        for (BlockTag tag : space.tags())
            for (int id : space.genes_of(tag))
                for (std::size_t k = 0; k < space.arity(id); ++k)
                    by_partition.push_back(full[offsets[static_cast<std::size_t>(id)] + k]);
        CHECK(joined == by_partition);
    }
}

TEST_CASE("fusion block encoding of two quaternary genes") {
    auto space = presets::nas_space();
    Block f{BlockTag::fusion(), {3, 1}};
    auto e = encode_block(space, f);
    CHECK(e.size() == 8);
    CHECK(std::count(e.begin(), e.end(), 1.0) == 2);
    Block g{BlockTag::fusion(), {3, 2}};
    CHECK(oracle::euclid(e, encode_block(space, g)) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("space sizes") {
    CHECK(space_size(presets::nas_space()) == boost::multiprecision::cpp_int("68719476736"));
    CHECK(space_size(presets::desk_space()) == 19683);
    auto one = blocked_space({0, 1}, 2);
    CHECK(space_size(one) == 2);
    CHECK(block_space_size(presets::desk_space(), BlockTag::modality(1)) == 81);
    CHECK(block_space_size(presets::desk_space(), BlockTag::fusion()) == 3);
    CHECK(enumerate_blocks(presets::desk_space(), BlockTag::modality(2)).size() == 81);
}

TEST_CASE("space json round trip and strict parsing") {
    auto space = presets::nas_space();
    auto back = space_from_json(space_to_json(space));
    CHECK(space_fingerprint(back) == space_fingerprint(space));
    CHECK(space_fingerprint(presets::desk_space()) != space_fingerprint(space));

    auto j = space_to_json(space);
    j["genes"][0]["extra"] = 1;
    CHECK_THROWS_AS(space_from_json(j), InvalidSpaceError);
}

TEST_CASE("block tags parse and order") {
    CHECK(BlockTag::parse("fusion").is_fusion());
    CHECK(BlockTag::parse("2") == BlockTag::modality(2));
    CHECK(BlockTag::modality(7) < BlockTag::fusion());
    CHECK_THROWS_AS(BlockTag::parse("0"), InvalidOperandError);
    CHECK_THROWS_AS(BlockTag::parse("x"), InvalidOperandError);
}
