#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coevo/diversity.hpp"
#include "coevo/rng.hpp"
#include "coevo/search_space.hpp"

namespace coevo {

enum class Origin { init, crossover, mutation, merged_elite };

std::string to_string(Origin origin);
Origin origin_from_string(const std::string& s);

struct Individual {
    Chromosome chromosome;
    std::optional<double> fitness;
    Origin origin = Origin::init;
    /// Generation in which the individual was created; survivor ties favour older ones.
    int born = 0;
};

struct Population {
    std::vector<Individual> members;
    int generation = 0;
};

/// Max-fitness member among k uniform draws with replacement; ties go to the
/// lower index. Returns the member index.
std::size_t tournament_select(const std::vector<Individual>& members, int k, Rng& rng);

/// Eq. 17 swap: a' takes b's block m_prime, b' takes a's block m. Fusion genes
/// are never touched.
std::pair<Chromosome, Chromosome> cross_modality_crossover(const SearchSpace& space, const Chromosome& a,
                                                           const Chromosome& b, BlockTag m, BlockTag m_prime);

/// Replaces one uniformly chosen gene with a different allele.
Chromosome global_mutation(const SearchSpace& space, const Chromosome& c, Rng& rng);

/// Produces `count` unevaluated offspring (defaults to the population size)
/// via tournament selection, cross-modality crossover and global mutation.
std::vector<Individual> apply_variation(const SearchSpace& space, const Population& pop, const RateDecision& rates,
                                        Rng& rng, int tournament_k = 2, std::size_t count = 0);

}  // namespace coevo
