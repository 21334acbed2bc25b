#pragma once

#include "popevo/genotype.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace popevo {

struct Member {
    Genome genome;
    /// Validation fitness; empty until evaluated (or after in-place succession).
    std::optional<double> fitness;
};

struct Population {
    std::vector<Member> members;
    std::uint64_t generation = 0;
    std::size_t target_size = 0;

    std::size_t size() const noexcept { return members.size(); }
};

/// Member indices ordered by descending fitness, ties to the lower genome id.
/// Throws UnevaluatedMember.
std::vector<std::size_t> rank_by_fitness(const std::vector<Member>& members);

/// Mean of the k highest fitness values. Throws KOutOfRange, UnevaluatedMember.
double topk_mean_fitness(const Population& pop, std::size_t k);

double mean_fitness(const Population& pop);

} // namespace popevo
