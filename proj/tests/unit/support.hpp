#pragma once

#include "popevo/evolution.hpp"
#include "popevo/genotype.hpp"
#include "popevo/population.hpp"

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

namespace testing {

inline popevo::Genome genome(std::vector<double> w, popevo::GenomeId id = 0)
{
    popevo::Genome g;
    g.id = id;
    g.weights = popevo::WeightVector(std::move(w));
    g.lineage.origin = popevo::Origin::ExpertSeed;
    return g;
}

inline popevo::Member member(std::vector<double> w, double fitness, popevo::GenomeId id)
{
    return popevo::Member{genome(std::move(w), id), fitness};
}

inline popevo::Population population(const std::vector<double>& fitness)
{
    popevo::Population pop;
    for (std::size_t i = 0; i < fitness.size(); ++i)
        pop.members.push_back(member({static_cast<double>(i)}, fitness[i], i));
    pop.target_size = fitness.size();
    return pop;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("popevo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testing
