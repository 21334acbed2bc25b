#include "popevo/population.hpp"

#include "popevo/error.hpp"

#include <algorithm>
#include <numeric>

namespace popevo {

std::vector<std::size_t> rank_by_fitness(const std::vector<Member>& members)
{
    for (const Member& m : members) {
        if (!m.fitness)
            throw Error(ErrorCode::UnevaluatedMember, "genome " + std::to_string(m.genome.id) + " has no fitness");
    }
    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double fa = *members[a].fitness;
        const double fb = *members[b].fitness;
        if (fa != fb)
            return fa > fb;
        return members[a].genome.id < members[b].genome.id;
    });
    return order;
}

double topk_mean_fitness(const Population& pop, std::size_t k)
{
    if (k < 1 || k > pop.size())
        throw Error(ErrorCode::KOutOfRange,
                    "k=" + std::to_string(k) + " outside [1, " + std::to_string(pop.size()) + "]");
    const auto order = rank_by_fitness(pop.members);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        sum += *pop.members[order[i]].fitness;
    return sum / static_cast<double>(k);
}

double mean_fitness(const Population& pop)
{
    return topk_mean_fitness(pop, pop.size());
}

} // namespace popevo
