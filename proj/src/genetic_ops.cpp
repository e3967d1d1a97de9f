#include "coevo/genetic_ops.hpp"

#include <spdlog/spdlog.h>

#include "coevo/error.hpp"

namespace coevo {

std::string to_string(Origin origin) {
    switch (origin) {
        case Origin::init: return "init";
        case Origin::crossover: return "crossover";
        case Origin::mutation: return "mutation";
        case Origin::merged_elite: return "merged-elite";
    }
    return "init";
}

Origin origin_from_string(const std::string& s) {
    if (s == "init") return Origin::init;
    if (s == "crossover") return Origin::crossover;
    if (s == "mutation") return Origin::mutation;
    if (s == "merged-elite") return Origin::merged_elite;
    throw ParseError("unknown origin '" + s + "'");
}

std::size_t tournament_select(const std::vector<Individual>& members, int k, Rng& rng) {
    if (members.empty()) throw PreconditionError("tournament over an empty population");
    if (k < 1) throw PreconditionError("tournament size must be >= 1");
    std::size_t best = members.size();
    for (int i = 0; i < k; ++i) {
        const std::size_t idx = rng.uniform_index(members.size());
        const auto& f = members[idx].fitness;
        if (!f) throw PreconditionError("tournament encountered unevaluated member " + std::to_string(idx));
        if (best == members.size()) {
            best = idx;
            continue;
        }
        const double fb = *members[best].fitness;
        if (*f > fb || (*f == fb && idx < best)) best = idx;
    }
    return best;
}

std::pair<Chromosome, Chromosome> cross_modality_crossover(const SearchSpace& space, const Chromosome& a,
                                                           const Chromosome& b, BlockTag m, BlockTag m_prime) {
    if (m == m_prime) throw InvalidOperandError("crossover needs two distinct modalities, got " + m.to_string() + " twice");
    if (m.is_fusion() || m_prime.is_fusion()) throw InvalidOperandError("crossover operates on modality blocks only");
    check_chromosome(space, a);
    check_chromosome(space, b);
    Chromosome a2 = a;
    Chromosome b2 = b;
    for (int id : space.genes_of(m_prime)) a2.alleles[static_cast<std::size_t>(id)] = b.alleles[static_cast<std::size_t>(id)];
    for (int id : space.genes_of(m)) b2.alleles[static_cast<std::size_t>(id)] = a.alleles[static_cast<std::size_t>(id)];
    return {std::move(a2), std::move(b2)};
}

Chromosome global_mutation(const SearchSpace& space, const Chromosome& c, Rng& rng) {
    check_chromosome(space, c);
    Chromosome out = c;
    const std::size_t j = rng.uniform_index(c.alleles.size());
    const std::size_t arity = space.genes[j].candidates.size();
    if (arity < 2) throw PreconditionError("gene " + std::to_string(j) + " has a single candidate");
    // Draw from the arity-1 alternatives and skip over the current allele.
    auto pick = static_cast<int>(rng.uniform_index(arity - 1));
    if (pick >= c.alleles[j]) ++pick;
    out.alleles[j] = pick;
    return out;
}

std::vector<Individual> apply_variation(const SearchSpace& space, const Population& pop, const RateDecision& rates,
                                        Rng& rng, int tournament_k, std::size_t count) {
    if (!(rates.p_cross >= 0.0 && rates.p_cross <= 1.0 && rates.p_mut >= 0.0 && rates.p_mut <= 1.0))
        throw PreconditionError("variation rates must be probabilities");
    if (count == 0) count = pop.members.size();
    const int m_count = space.modality_count;
    if (m_count < 2) {
        static bool warned = false;
        if (!warned) {
            spdlog::warn("single-modality space: cross-modality crossover disabled, parents are cloned");
            warned = true;
        }
    }

    std::vector<Individual> offspring;
    offspring.reserve(count + 1);
    const int born = pop.generation + 1;
    while (offspring.size() < count) {
        const auto& pa = pop.members[tournament_select(pop.members, tournament_k, rng)];
        const auto& pb = pop.members[tournament_select(pop.members, tournament_k, rng)];
        Individual a{pa.chromosome, std::nullopt, pa.origin, born};
        Individual b{pb.chromosome, std::nullopt, pb.origin, born};
        if (m_count >= 2 && rng.bernoulli(rates.p_cross)) {
            // Uniform over ordered pairs of distinct modalities.
            const int first = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(m_count))) + 1;
            int second = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(m_count - 1))) + 1;
            if (second >= first) ++second;
            auto [ca, cb] = cross_modality_crossover(space, a.chromosome, b.chromosome, BlockTag::modality(first),
                                                     BlockTag::modality(second));
            a.chromosome = std::move(ca);
            b.chromosome = std::move(cb);
            a.origin = b.origin = Origin::crossover;
        }
        for (Individual* child : {&a, &b}) {
            if (rng.bernoulli(rates.p_mut)) {
                child->chromosome = global_mutation(space, child->chromosome, rng);
                child->origin = Origin::mutation;
            }
        }
        offspring.push_back(std::move(a));
        if (offspring.size() < count) offspring.push_back(std::move(b));
    }
    return offspring;
}

}  // namespace coevo
