#pragma once

#include "popevo/config.hpp"
#include "popevo/fitness.hpp"
#include "popevo/genotype.hpp"

#include "json.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace popevo {

/// What a run optimizes: the tasks and the expert seeds.
struct WorkloadSpec {
    /// Task kinds; more than one gives a multi-task (averaged) fitness.
    std::vector<TaskKind> tasks{TaskKind::SphereInv};
    /// Dimension of the sphere/rastrigin tasks. The toy task's dimension is
    /// d_features * n_classes.
    std::uint32_t dim = 20;
    /// Every coordinate of the sphere/rastrigin optimum.
    double center = 0.0;
    ToyClassifierParams toy;
    std::uint32_t n_experts = 10;
    /// Experts are drawn as reference + N(0, expert_sigma^2) per coordinate.
    double expert_sigma = 0.5;
    /// Seed of the expert stream; independent of the run seed.
    std::uint64_t expert_seed = 1;
    /// Optional JSON file holding a list of weight arrays, used instead of
    /// generated experts.
    std::string experts_path;

    void validate() const;

    friend bool operator==(const WorkloadSpec&, const WorkloadSpec&) = default;
};

/// Complete description of a run; `config.json` in a run directory holds one.
struct RunSpec {
    EvolutionConfig evolution;
    WorkloadSpec workload;

    friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

/// Flat JSON with the evolution and workload keys side by side. Unknown keys
/// are rejected.
nlohmann::json to_json(const RunSpec& spec);
RunSpec run_spec_from_json(const nlohmann::json& doc);

/// Task identifier used for a kind in a workload, e.g. "sphere_inv".
std::string task_id_for(TaskKind kind);

std::vector<TaskSpec> build_tasks(const WorkloadSpec& spec);

/// The same tasks re-declared as external, for routing through an endpoint.
std::vector<TaskSpec> as_external(const std::vector<TaskSpec>& tasks);

/// Experts with ids 0..n-1 and expert-seed lineage.
std::vector<Genome> build_experts(const WorkloadSpec& spec, const std::vector<TaskSpec>& tasks);

} // namespace popevo
