#pragma once

#include <string>
#include <vector>

#include "coevo/config.hpp"
#include "coevo/search_space.hpp"

namespace testing_support {

/// Space with `sizes[i]` genes in block i (modalities first, fusion last),
/// each gene having `arity` candidates.
inline coevo::SearchSpace blocked_space(const std::vector<int>& sizes, int arity) {
    using namespace coevo;
    std::vector<GeneSpec> genes;
    const int modalities = static_cast<int>(sizes.size()) - 1;
    for (std::size_t b = 0; b < sizes.size(); ++b) {
        const BlockTag tag = b + 1 == sizes.size() ? BlockTag::fusion() : BlockTag::modality(static_cast<int>(b) + 1);
        for (int g = 0; g < sizes[b]; ++g) {
            GeneSpec spec;
            spec.name = "g" + std::to_string(genes.size());
            for (int a = 0; a < arity; ++a) spec.candidates.push_back("c" + std::to_string(a));
            spec.block = tag;
            genes.push_back(std::move(spec));
        }
    }
    return SearchSpace::from_genes(std::move(genes), modalities);
}

inline int hamming(const std::vector<int>& a, const std::vector<int>& b) {
    int h = 0;
    for (std::size_t i = 0; i < a.size(); ++i) h += a[i] != b[i];
    return h;
}

/// Small, fast experiment on the desk space for engine tests.
inline coevo::ExperimentConfig small_experiment(int generations = 4) {
    auto cfg = coevo::desk_experiment();
    cfg.run.generations = generations;
    cfg.run.population = 8;
    cfg.run.local_steps = 2;
    cfg.run.elites = 3;
    cfg.run.budget = 10;
    return cfg;
}

}  // namespace testing_support
