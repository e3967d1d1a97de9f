#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "coevo/rng.hpp"

namespace coevo {

/// Owner of a gene subsequence: a modality index in [1, M] or the fusion block.
/// Orders modalities ascending, fusion last.
class BlockTag {
public:
    constexpr BlockTag() = default;
    static constexpr BlockTag modality(int m) { return BlockTag(m); }
    static constexpr BlockTag fusion() { return BlockTag(kFusion); }

    constexpr bool is_fusion() const { return value_ == kFusion; }
    /// 1-based modality index; meaningless for the fusion tag.
    constexpr int modality_index() const { return value_; }

    std::string to_string() const;
    /// Accepts "fusion" (case-insensitive) or a positive integer.
    static BlockTag parse(std::string_view text);

    friend constexpr auto operator<=>(BlockTag, BlockTag) = default;

private:
    static constexpr int kFusion = std::numeric_limits<int>::max();
    constexpr explicit BlockTag(int v) : value_(v) {}
    int value_ = 1;
};

struct GeneSpec {
    int gene_id = 0;
    std::string name;
    std::vector<std::string> candidates;
    BlockTag block;
};

/// Categorical gene catalog with a block partition over gene ids.
struct SearchSpace {
    std::vector<GeneSpec> genes;
    int modality_count = 1;
    /// Gene ids owned by each tag, in chromosome order.
    std::map<BlockTag, std::vector<int>> partition;

    /// Builds the partition from each gene's block tag and assigns gene ids 0..K-1.
    static SearchSpace from_genes(std::vector<GeneSpec> genes, int modality_count);

    std::size_t gene_count() const { return genes.size(); }
    std::size_t block_count() const { return static_cast<std::size_t>(modality_count) + 1; }
    /// Tags in canonical order: modality 1..M, then fusion.
    std::vector<BlockTag> tags() const;
    const std::vector<int>& genes_of(BlockTag tag) const;
    std::size_t arity(int gene_id) const { return genes[static_cast<std::size_t>(gene_id)].candidates.size(); }
};

struct Chromosome {
    std::vector<int> alleles;
    friend auto operator<=>(const Chromosome&, const Chromosome&) = default;
};

struct Block {
    BlockTag tag;
    std::vector<int> alleles;
    friend auto operator<=>(const Block&, const Block&) = default;
};

struct ChromosomeHash {
    std::size_t operator()(const Chromosome& c) const;
};
struct BlockHash {
    std::size_t operator()(const Block& b) const;
};

/// Every invariant violation of the space; empty means valid.
std::vector<std::string> validate_space(const SearchSpace& space);
/// Throws InvalidSpaceError listing all violations.
void require_valid(const SearchSpace& space);

bool is_valid(const SearchSpace& space, const Chromosome& c);
bool is_valid(const SearchSpace& space, const Block& b);
void check_chromosome(const SearchSpace& space, const Chromosome& c);
void check_block(const SearchSpace& space, const Block& b);

Chromosome random_chromosome(const SearchSpace& space, Rng& rng);
Block random_block(const SearchSpace& space, BlockTag tag, Rng& rng);

/// Blocks ordered modality 1..M, then fusion.
std::vector<Block> decompose(const SearchSpace& space, const Chromosome& c);
Chromosome reassemble(const SearchSpace& space, std::span<const Block> blocks);

/// Per-gene one-hot concatenation; dimension is the total candidate count.
std::vector<double> encode(const SearchSpace& space, const Chromosome& c);
std::vector<double> encode_block(const SearchSpace& space, const Block& b);

boost::multiprecision::cpp_int space_size(const SearchSpace& space);
/// Number of distinct blocks for a tag, saturating at UINT64_MAX.
std::uint64_t block_space_size(const SearchSpace& space, BlockTag tag);
/// Every block of a tag in lexicographic allele order. Caller bounds the size.
std::vector<Block> enumerate_blocks(const SearchSpace& space, BlockTag tag);

/// Symbolic candidate names for each gene of c.
std::vector<std::string> candidate_names(const SearchSpace& space, const Chromosome& c);
std::string alleles_to_string(std::span<const int> alleles);

/// Stable hex digest of the space definition.
std::string space_fingerprint(const SearchSpace& space);

nlohmann::json space_to_json(const SearchSpace& space);
/// Parses {"modalities": M, "genes": [{"name", "candidates", "block"}]}; validates.
SearchSpace space_from_json(const nlohmann::json& j);

namespace presets {
/// K=9, three candidates per gene, M=2, partition (4, 4, 1).
SearchSpace desk_space();
/// K=18, four candidates per gene, M=2, partition (8, 8, 2).
SearchSpace nas_space();
}  // namespace presets

}  // namespace coevo
