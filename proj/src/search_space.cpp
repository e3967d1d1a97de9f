#include "coevo/search_space.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include "coevo/error.hpp"

namespace coevo {

InvalidSpaceError::InvalidSpaceError(std::vector<std::string> violations)
    : Error([&] {
          std::string msg = "invalid search space:";
          for (const auto& v : violations) msg += "\n  " + v;
          return msg;
      }()),
      violations_(std::move(violations)) {}

std::string BlockTag::to_string() const {
    return is_fusion() ? "fusion" : std::to_string(value_);
}

BlockTag BlockTag::parse(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "fusion" || lower == "fus") return fusion();
    int m = 0;
    auto [ptr, ec] = std::from_chars(lower.data(), lower.data() + lower.size(), m);
    if (ec != std::errc{} || ptr != lower.data() + lower.size() || m < 1)
        throw InvalidOperandError("bad block tag '" + std::string(text) + "' (expected 'fusion' or a modality index >= 1)");
    return modality(m);
}

SearchSpace SearchSpace::from_genes(std::vector<GeneSpec> genes, int modality_count) {
    SearchSpace space;
    space.modality_count = modality_count;
    for (std::size_t i = 0; i < genes.size(); ++i) {
        genes[i].gene_id = static_cast<int>(i);
        space.partition[genes[i].block].push_back(static_cast<int>(i));
    }
    space.genes = std::move(genes);
    return space;
}

std::vector<BlockTag> SearchSpace::tags() const {
    std::vector<BlockTag> out;
    out.reserve(block_count());
    for (int m = 1; m <= modality_count; ++m) out.push_back(BlockTag::modality(m));
    out.push_back(BlockTag::fusion());
    return out;
}

const std::vector<int>& SearchSpace::genes_of(BlockTag tag) const {
    auto it = partition.find(tag);
    if (it == partition.end()) throw InvalidBlockError("no partition entry for block " + tag.to_string());
    return it->second;
}

std::size_t ChromosomeHash::operator()(const Chromosome& c) const {
    std::uint64_t h = 0x84222325cbf29ce4ULL;
    for (int a : c.alleles) h = mix64(h ^ static_cast<std::uint64_t>(a));
    return static_cast<std::size_t>(h);
}

std::size_t BlockHash::operator()(const Block& b) const {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(b.tag.modality_index()));
    for (int a : b.alleles) h = mix64(h ^ static_cast<std::uint64_t>(a));
    return static_cast<std::size_t>(h);
}

std::vector<std::string> validate_space(const SearchSpace& space) {
    std::vector<std::string> out;
    const int k = static_cast<int>(space.genes.size());
    if (k == 0) out.emplace_back("space has no genes");
    if (space.modality_count < 1) out.emplace_back("modality count must be >= 1");

    for (int i = 0; i < k; ++i) {
        const auto& g = space.genes[static_cast<std::size_t>(i)];
        if (g.gene_id != i)
            out.push_back("gene ids not contiguous: position " + std::to_string(i) + " has id " + std::to_string(g.gene_id));
        if (g.candidates.size() < 2)
            out.push_back("gene " + std::to_string(i) + " (" + g.name + ") has < 2 candidates");
        std::set<std::string> seen;
        for (const auto& cand : g.candidates)
            if (!seen.insert(cand).second)
                out.push_back("gene " + std::to_string(i) + " has duplicate candidate '" + cand + "'");
        if (!g.block.is_fusion() && (g.block.modality_index() < 1 || g.block.modality_index() > space.modality_count))
            out.push_back("gene " + std::to_string(i) + " tagged with unknown modality " + g.block.to_string());
    }

    std::vector<int> owners(static_cast<std::size_t>(std::max(k, 0)), 0);
    for (const auto& [tag, ids] : space.partition) {
        if (!tag.is_fusion() && (tag.modality_index() < 1 || tag.modality_index() > space.modality_count))
            out.push_back("partition entry for unknown block " + tag.to_string());
        for (int id : ids) {
            if (id < 0 || id >= k) {
                out.push_back("partition of block " + tag.to_string() + " references unknown gene " + std::to_string(id));
                continue;
            }
            if (++owners[static_cast<std::size_t>(id)] == 2)
                out.push_back("duplicate ownership: gene " + std::to_string(id));
        }
    }
    for (int i = 0; i < k; ++i)
        if (owners[static_cast<std::size_t>(i)] == 0) out.push_back("missing gene in partition: gene " + std::to_string(i));

    for (BlockTag tag : space.tags()) {
        auto it = space.partition.find(tag);
        if (it == space.partition.end() || it->second.empty())
            out.push_back("block " + tag.to_string() + " owns no genes");
    }
    return out;
}

void require_valid(const SearchSpace& space) {
    auto v = validate_space(space);
    if (!v.empty()) throw InvalidSpaceError(std::move(v));
}

bool is_valid(const SearchSpace& space, const Chromosome& c) {
    if (c.alleles.size() != space.genes.size()) return false;
    for (std::size_t i = 0; i < c.alleles.size(); ++i)
        if (c.alleles[i] < 0 || static_cast<std::size_t>(c.alleles[i]) >= space.genes[i].candidates.size()) return false;
    return true;
}

bool is_valid(const SearchSpace& space, const Block& b) {
    auto it = space.partition.find(b.tag);
    if (it == space.partition.end() || it->second.size() != b.alleles.size()) return false;
    for (std::size_t i = 0; i < b.alleles.size(); ++i)
        if (b.alleles[i] < 0 || static_cast<std::size_t>(b.alleles[i]) >= space.arity(it->second[i])) return false;
    return true;
}

void check_chromosome(const SearchSpace& space, const Chromosome& c) {
    if (c.alleles.size() != space.genes.size())
        throw InvalidChromosomeError("chromosome length " + std::to_string(c.alleles.size()) + " != K=" +
                                     std::to_string(space.genes.size()));
    if (!is_valid(space, c)) throw InvalidChromosomeError("allele out of range in " + alleles_to_string(c.alleles));
}

void check_block(const SearchSpace& space, const Block& b) {
    if (!is_valid(space, b))
        throw InvalidBlockError("block " + b.tag.to_string() + " " + alleles_to_string(b.alleles) +
                                " does not match its partition");
}

Chromosome random_chromosome(const SearchSpace& space, Rng& rng) {
    Chromosome c;
    c.alleles.reserve(space.genes.size());
    for (const auto& g : space.genes) c.alleles.push_back(static_cast<int>(rng.uniform_index(g.candidates.size())));
    return c;
}

Block random_block(const SearchSpace& space, BlockTag tag, Rng& rng) {
    Block b{tag, {}};
    for (int id : space.genes_of(tag)) b.alleles.push_back(static_cast<int>(rng.uniform_index(space.arity(id))));
    return b;
}

std::vector<Block> decompose(const SearchSpace& space, const Chromosome& c) {
    check_chromosome(space, c);
    std::vector<Block> out;
    out.reserve(space.block_count());
    for (BlockTag tag : space.tags()) {
        Block b{tag, {}};
        for (int id : space.genes_of(tag)) b.alleles.push_back(c.alleles[static_cast<std::size_t>(id)]);
        out.push_back(std::move(b));
    }
    return out;
}

Chromosome reassemble(const SearchSpace& space, std::span<const Block> blocks) {
    std::map<BlockTag, const Block*> by_tag;
    for (const auto& b : blocks) {
        if (!by_tag.emplace(b.tag, &b).second) throw MergeError("duplicate block tag " + b.tag.to_string());
    }
    Chromosome c;
    c.alleles.assign(space.genes.size(), 0);
    for (BlockTag tag : space.tags()) {
        auto it = by_tag.find(tag);
        if (it == by_tag.end()) throw MergeError("missing block tag " + tag.to_string());
        const auto& ids = space.genes_of(tag);
        if (it->second->alleles.size() != ids.size())
            throw InvalidBlockError("block " + tag.to_string() + " has " + std::to_string(it->second->alleles.size()) +
                                    " alleles, partition expects " + std::to_string(ids.size()));
        check_block(space, *it->second);
        for (std::size_t i = 0; i < ids.size(); ++i) c.alleles[static_cast<std::size_t>(ids[i])] = it->second->alleles[i];
    }
    if (by_tag.size() != space.block_count()) throw MergeError("unexpected block tag in merge");
    return c;
}

std::vector<double> encode(const SearchSpace& space, const Chromosome& c) {
    check_chromosome(space, c);
    std::size_t dim = 0;
    for (const auto& g : space.genes) dim += g.candidates.size();
    std::vector<double> v(dim, 0.0);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < space.genes.size(); ++i) {
        v[offset + static_cast<std::size_t>(c.alleles[i])] = 1.0;
        offset += space.genes[i].candidates.size();
    }
    return v;
}

std::vector<double> encode_block(const SearchSpace& space, const Block& b) {
    check_block(space, b);
    const auto& ids = space.genes_of(b.tag);
    std::size_t dim = 0;
    for (int id : ids) dim += space.arity(id);
    std::vector<double> v(dim, 0.0);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        v[offset + static_cast<std::size_t>(b.alleles[i])] = 1.0;
        offset += space.arity(ids[i]);
    }
    return v;
}

boost::multiprecision::cpp_int space_size(const SearchSpace& space) {
    boost::multiprecision::cpp_int n = 1;
    for (const auto& g : space.genes) n *= g.candidates.size();
    return n;
}

std::uint64_t block_space_size(const SearchSpace& space, BlockTag tag) {
    constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t n = 1;
    for (int id : space.genes_of(tag)) {
        const std::uint64_t a = space.arity(id);
        if (n > kMax / a) return kMax;
        n *= a;
    }
    return n;
}

std::vector<Block> enumerate_blocks(const SearchSpace& space, BlockTag tag) {
    const auto& ids = space.genes_of(tag);
    std::vector<Block> out;
    out.reserve(static_cast<std::size_t>(block_space_size(space, tag)));
    Block cur{tag, std::vector<int>(ids.size(), 0)};
    while (true) {
        out.push_back(cur);
        // Odometer increment, last gene fastest.
        std::size_t i = ids.size();
        while (i > 0) {
            --i;
            if (static_cast<std::size_t>(++cur.alleles[i]) < space.arity(ids[i])) break;
            cur.alleles[i] = 0;
            if (i == 0) return out;
        }
        if (ids.empty()) return out;
    }
}

std::vector<std::string> candidate_names(const SearchSpace& space, const Chromosome& c) {
    check_chromosome(space, c);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < c.alleles.size(); ++i)
        out.push_back(space.genes[i].candidates[static_cast<std::size_t>(c.alleles[i])]);
    return out;
}

std::string alleles_to_string(std::span<const int> alleles) {
    std::string s = "(";
    for (std::size_t i = 0; i < alleles.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(alleles[i]);
    }
    return s + ")";
}

nlohmann::json space_to_json(const SearchSpace& space) {
    nlohmann::json genes = nlohmann::json::array();
    for (const auto& g : space.genes) {
        nlohmann::json block = g.block.is_fusion() ? nlohmann::json("fusion") : nlohmann::json(g.block.modality_index());
        genes.push_back({{"name", g.name}, {"candidates", g.candidates}, {"block", block}});
    }
    return {{"modalities", space.modality_count}, {"genes", genes}};
}

SearchSpace space_from_json(const nlohmann::json& j) {
    std::vector<std::string> problems;
    if (!j.is_object()) throw InvalidSpaceError({"space must be an object"});
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "modalities" && it.key() != "genes") problems.push_back("unknown key space." + it.key());
    if (!j.contains("modalities") || !j["modalities"].is_number_integer())
        problems.emplace_back("space.modalities must be an integer");
    if (!j.contains("genes") || !j["genes"].is_array()) problems.emplace_back("space.genes must be an array");
    if (!problems.empty()) throw InvalidSpaceError(std::move(problems));

    std::vector<GeneSpec> genes;
    const auto& arr = j["genes"];
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& g = arr[i];
        const std::string path = "space.genes[" + std::to_string(i) + "]";
        if (!g.is_object()) {
            problems.push_back(path + " must be an object");
            continue;
        }
        for (auto it = g.begin(); it != g.end(); ++it)
            if (it.key() != "name" && it.key() != "candidates" && it.key() != "block")
                problems.push_back("unknown key " + path + "." + it.key());
        GeneSpec spec;
        if (g.contains("name") && g["name"].is_string()) spec.name = g["name"].get<std::string>();
        else problems.push_back(path + ".name must be a string");
        if (g.contains("candidates") && g["candidates"].is_array()) {
            for (const auto& c : g["candidates"]) {
                if (c.is_string()) spec.candidates.push_back(c.get<std::string>());
                else spec.candidates.push_back(c.dump());
            }
        } else {
            problems.push_back(path + ".candidates must be an array");
        }
        try {
            if (!g.contains("block")) throw InvalidOperandError("missing");
            const auto& b = g["block"];
            spec.block = b.is_string() ? BlockTag::parse(b.get<std::string>())
                                       : BlockTag::modality(b.get<int>());
            if (!spec.block.is_fusion() && spec.block.modality_index() < 1) throw InvalidOperandError("bad");
        } catch (const std::exception&) {
            problems.push_back(path + ".block must be a modality index >= 1 or \"fusion\"");
        }
        genes.push_back(std::move(spec));
    }
    if (!problems.empty()) throw InvalidSpaceError(std::move(problems));
    auto space = SearchSpace::from_genes(std::move(genes), j["modalities"].get<int>());
    require_valid(space);
    return space;
}

std::string space_fingerprint(const SearchSpace& space) {
    const auto h = fnv1a64(space_to_json(space).dump());
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

namespace presets {

namespace {
GeneSpec gene(std::string name, std::vector<std::string> candidates, BlockTag tag) {
    return GeneSpec{0, std::move(name), std::move(candidates), tag};
}
}  // namespace

SearchSpace desk_space() {
    std::vector<GeneSpec> genes;
    for (int m = 1; m <= 2; ++m) {
        const auto tag = BlockTag::modality(m);
        const std::string p = "m" + std::to_string(m) + "_";
        genes.push_back(gene(p + "message", {"e_add_v", "e_mul_v", "e_mul_u"}, tag));
        genes.push_back(gene(p + "aggregate", {"sum", "mean", "max"}, tag));
        genes.push_back(gene(p + "hidden_dim", {"128", "256", "512"}, tag));
        genes.push_back(gene(p + "depth", {"1", "2", "3"}, tag));
    }
    genes.push_back(gene("fusion", {"concat", "concat+norm", "concat+norm+align"}, BlockTag::fusion()));
    return SearchSpace::from_genes(std::move(genes), 2);
}

SearchSpace nas_space() {
    std::vector<GeneSpec> genes;
    for (int m = 1; m <= 2; ++m) {
        const auto tag = BlockTag::modality(m);
        const std::string p = "m" + std::to_string(m) + "_";
        genes.push_back(gene(p + "message", {"e_add_v", "e_mul_v", "e_mul_u", "e_sub_v"}, tag));
        genes.push_back(gene(p + "aggregate", {"sum", "mean", "max", "min"}, tag));
        genes.push_back(gene(p + "update", {"gru", "mlp", "residual", "identity"}, tag));
        genes.push_back(gene(p + "hidden_dim", {"128", "256", "384", "512"}, tag));
        genes.push_back(gene(p + "activation", {"relu", "elu", "gelu", "tanh"}, tag));
        genes.push_back(gene(p + "depth", {"1", "2", "3", "4"}, tag));
        genes.push_back(gene(p + "dropout", {"0.0", "0.1", "0.3", "0.5"}, tag));
        genes.push_back(gene(p + "norm", {"none", "batch", "layer", "graph"}, tag));
    }
    genes.push_back(gene("fusion", {"concat", "concat+norm", "concat+align", "concat+norm+align"}, BlockTag::fusion()));
    genes.push_back(gene("readout", {"linear", "mlp2", "mlp3", "attention"}, BlockTag::fusion()));
    return SearchSpace::from_genes(std::move(genes), 2);
}

}  // namespace presets

}  // namespace coevo
