#pragma once

#include "popevo/config.hpp"
#include "popevo/ensemble.hpp"
#include "popevo/fitness.hpp"
#include "popevo/genotype.hpp"
#include "popevo/population.hpp"
#include "popevo/rng.hpp"

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace popevo {

/// Snapshot of one evaluated individual used as an experience source.
struct Reference {
    Genome genome;
    double fitness = 0.0;
    /// The individual's experience vector at the time it was recorded; empty
    /// when experience is not tracked (GENOME mode).
    std::vector<double> experience;
};

struct ExperienceState {
    std::map<GenomeId, std::vector<double>> per_genome;
    /// Historical best over every evaluation so far. This is also the run's g.
    std::optional<Reference> global_best;
    /// Best member of the live pool at the last succession step.
    std::optional<Reference> current_best;
    /// Historical worst over every evaluation so far.
    std::optional<Reference> global_worst;

    /// Folds one fresh evaluation into the historical extrema.
    void observe(const Genome& genome, double fitness);
    /// Draws e ~ N(0, sigma^2)^d for a newborn genome.
    void birth(const Genome& genome, double sigma, Rng& rng);
};

struct IterationReport {
    std::uint64_t generation = 0;
    std::uint64_t pool_size_after_crossover = 0;
    std::uint64_t pool_size_after_mutation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    double topk_mean_fitness = 0.0;
    double wall_clock_seconds = 0.0;
    std::uint64_t evaluation_count = 0;
    std::uint64_t cache_hit_count = 0;

    friend bool operator==(const IterationReport&, const IterationReport&) = default;
};

struct RunResult {
    Genome best;
    double best_validation_fitness = 0.0;
    std::optional<double> best_test_fitness;
    Population final_population;
    std::vector<IterationReport> iteration_log;
    std::vector<GenomeId> topk_ids;
    std::optional<EnsembleResult> ensemble;
    /// Evaluations spent after the last iteration (test scoring, ensembling).
    std::uint64_t final_evaluations = 0;
};

// --- operators ---------------------------------------------------------------

/// Draws N initial genomes as random convex blends of distinct expert pairs
/// (or cycles the experts under `no_init_blend`).
std::vector<Genome> initialize_population(const std::vector<Genome>& experts, const EvolutionConfig& cfg, Rng& rng,
                                          IdAllocator& ids);

/// Positive values used for proportional selection: the fitnesses themselves
/// when all are positive, otherwise shifted by `-min + eps`.
std::vector<double> shifted_fitness(std::span<const double> fitnesses);

/// `p_i = f_i / sum f` over the shifted values; uniform when all are equal.
std::vector<double> selection_probabilities(std::span<const double> fitnesses);

std::vector<Genome> crossover_step(const Population& pop, const EvolutionConfig& cfg, Rng& rng, IdAllocator& ids);

std::vector<Genome> mutation_step(std::span<const Member> pool, const EvolutionConfig& cfg, Rng& rng,
                                  IdAllocator& ids, std::uint64_t generation);

/// Updates every in-scope member's experience and weights in place, replacing
/// it by a fresh genome whose fitness is unset. `base_ids` are the members that
/// started the iteration (used by the `base_n` scope). Returns the indices of
/// the replaced members.
std::vector<std::size_t> succession_step(std::vector<Member>& pool, ExperienceState& state,
                                         const EvolutionConfig& cfg, IdAllocator& ids, std::uint64_t generation,
                                         const std::set<GenomeId>& base_ids);

/// Restores the pool to `target` members: `elite_count` elites by rank, the
/// rest drawn with replacement (proportionally, or uniformly when `uniform`).
/// Members picked more than once are cloned with selection-copy lineage.
Population select_population(std::vector<Member> pool, std::size_t target, std::size_t elite_count, bool uniform,
                             Rng& rng, IdAllocator& ids, std::uint64_t generation);

Population selection_step(std::vector<Member> pool, const EvolutionConfig& cfg, Rng& rng, IdAllocator& ids,
                          std::uint64_t generation);

// --- engine ------------------------------------------------------------------

/// Everything needed to continue a run from an iteration boundary.
struct EngineState {
    EvolutionConfig config;
    std::uint64_t generation = 0;
    Population population;
    ExperienceState experience;
    Rng rng;
    GenomeId next_id = 0;
    std::vector<IterationReport> log;
};

class Engine;

class RunSink {
public:
    virtual ~RunSink() = default;
    virtual void on_iteration(const IterationReport& /*report*/, const Engine& /*engine*/) {}
    /// Called with the last iteration-boundary state before an error propagates.
    virtual void on_abort(const EngineState& /*last_good*/, const Evaluator& /*evaluator*/) {}
    virtual void on_finish(const RunResult& /*result*/, const Engine& /*engine*/) {}
};

class Engine {
public:
    /// Builds and evaluates the initial population.
    Engine(const EvolutionConfig& cfg, const std::vector<Genome>& experts, Evaluator& evaluator);

    /// Continues from a saved boundary; the evaluator's cache should already
    /// hold the saved contents.
    Engine(EngineState state, Evaluator& evaluator);

    void record_wall_clock(bool on) noexcept { record_wall_clock_ = on; }

    bool done() const noexcept { return state_.generation >= state_.config.max_iterations; }

    /// Runs one crossover-mutation[-succession]-selection iteration.
    const IterationReport& step();

    /// Test-split scoring of g and (GENOME+) the top-k ensemble.
    RunResult finish();

    const EngineState& state() const noexcept { return state_; }
    const Evaluator& evaluator() const noexcept { return evaluator_; }

private:
    void track_new(std::vector<Member>& pool, std::size_t first_new);
    void evaluate_members(std::vector<Member>& pool, const std::vector<std::size_t>& which);

    EngineState state_;
    Evaluator& evaluator_;
    IdAllocator ids_;
    bool record_wall_clock_ = false;
    std::uint64_t eval_mark_ = 0;
    std::uint64_t hit_mark_ = 0;
};

struct EvolveOptions {
    bool record_wall_clock = false;
    /// Stop after this many completed generations without finishing (used to
    /// simulate interruption); empty runs to completion.
    std::optional<std::uint64_t> halt_after;
};

/// Runs to completion, reporting each iteration to the sinks. Evaluator
/// failures are reported through `on_abort` and rethrown.
std::optional<RunResult> evolve(const std::vector<Genome>& experts, const EvolutionConfig& cfg, Evaluator& evaluator,
                                std::span<RunSink* const> sinks, const EvolveOptions& options = {});

/// Continues a saved run.
std::optional<RunResult> resume(EngineState state, Evaluator& evaluator, std::span<RunSink* const> sinks,
                                const EvolveOptions& options = {});

} // namespace popevo
