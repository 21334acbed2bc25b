#include "popevo/evolution.hpp"

#include "popevo/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace popevo {

// --- experience ----------------------------------------------------------------

void ExperienceState::observe(const Genome& genome, double fitness)
{
    auto snapshot = [&] {
        Reference ref{genome, fitness, {}};
        if (auto it = per_genome.find(genome.id); it != per_genome.end())
            ref.experience = it->second;
        return ref;
    };
    if (!global_best || fitness > global_best->fitness)
        global_best = snapshot();
    if (!global_worst || fitness < global_worst->fitness)
        global_worst = snapshot();
}

void ExperienceState::birth(const Genome& genome, double sigma, Rng& rng)
{
    std::vector<double> e(genome.dim());
    for (double& v : e)
        v = rng.normal(0.0, sigma);
    per_genome[genome.id] = std::move(e);
}

// --- initialisation ------------------------------------------------------------

std::vector<Genome> initialize_population(const std::vector<Genome>& experts, const EvolutionConfig& cfg, Rng& rng,
                                          IdAllocator& ids)
{
    if (experts.size() < 2)
        throw Error(ErrorCode::TooFewExperts, "need at least two experts, got " + std::to_string(experts.size()));
    const std::size_t d = experts.front().dim();
    for (const Genome& e : experts) {
        if (e.dim() != d)
            throw Error(ErrorCode::DimMismatch, "experts disagree on dimension");
    }

    std::vector<Genome> out;
    out.reserve(cfg.population_size);
    const std::uint64_t n = experts.size();
    for (std::uint32_t i = 0; i < cfg.population_size; ++i) {
        if (cfg.ablation.no_init_blend) {
            const Genome& src = experts[i % n];
            Lineage lin{Origin::ExpertSeed, {}, {{"expert_index", static_cast<double>(i % n)}}};
            out.push_back(make_genome(src.weights, std::move(lin), 0, ids));
            continue;
        }
        const std::uint64_t a = rng.uniform_index(n);
        std::uint64_t b = rng.uniform_index(n - 1);
        if (b >= a)
            ++b;
        const double t = rng.uniform();
        Lineage lin{Origin::InitBlend, {experts[a].id, experts[b].id}, {{"t", t}}};
        out.push_back(make_genome(linear_combine(experts[a].weights, experts[b].weights, t), std::move(lin), 0, ids));
    }
    return out;
}

// --- selection probabilities -----------------------------------------------------

std::vector<double> shifted_fitness(std::span<const double> fitnesses)
{
    if (fitnesses.empty())
        throw Error(ErrorCode::EmptyInput, "no fitness values");
    for (double f : fitnesses) {
        if (!std::isfinite(f))
            throw Error(ErrorCode::NonFiniteFitness, "fitness values must be finite");
    }
    std::vector<double> out(fitnesses.begin(), fitnesses.end());
    const double lo = *std::min_element(out.begin(), out.end());
    if (lo <= 0.0) {
        const double eps = 1e-9 * std::max(1.0, std::abs(lo));
        const double shift = -lo + eps;
        for (double& f : out)
            f += shift;
    }
    return out;
}

std::vector<double> selection_probabilities(std::span<const double> fitnesses)
{
    std::vector<double> p = shifted_fitness(fitnesses);
    const bool all_equal = std::all_of(p.begin(), p.end(), [&](double v) { return v == p.front(); });
    if (all_equal) {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
        return p;
    }
    double total = 0.0;
    for (double v : p)
        total += v;
    for (double& v : p)
        v /= total;
    return p;
}

namespace {

std::vector<double> fitness_values(std::span<const Member> members)
{
    std::vector<double> out;
    out.reserve(members.size());
    for (const Member& m : members) {
        if (!m.fitness)
            throw Error(ErrorCode::UnevaluatedMember, "genome " + std::to_string(m.genome.id) + " has no fitness");
        out.push_back(*m.fitness);
    }
    return out;
}

} // namespace

// --- crossover -------------------------------------------------------------------

std::vector<Genome> crossover_step(const Population& pop, const EvolutionConfig& cfg, Rng& rng, IdAllocator& ids)
{
    std::vector<Genome> children;
    if (cfg.ablation.no_crossover || pop.members.empty())
        return children;
    const auto raw = fitness_values(pop.members);
    const auto shifted = shifted_fitness(raw);
    const auto probs = selection_probabilities(raw);
    const std::uint64_t generation = pop.generation + 1;

    for (std::uint32_t trial = 0; trial < cfg.population_size; ++trial) {
        if (!rng.bernoulli(cfg.crossover_rate))
            continue;
        const std::size_t p1 = rng.categorical(probs);
        // Second parent drawn from the same distribution conditioned on
        // differing from the first.
        std::size_t p2 = p1;
        std::vector<double> rest = probs;
        rest[p1] = 0.0;
        if (std::any_of(rest.begin(), rest.end(), [](double v) { return v > 0.0; }))
            p2 = rng.categorical(rest);

        const double t = shifted[p1] / (shifted[p1] + shifted[p2]);
        const Genome& a = pop.members[p1].genome;
        const Genome& b = pop.members[p2].genome;
        Lineage lin{Origin::Crossover, {a.id, b.id}, {{"t", t}}};
        children.push_back(make_genome(linear_combine(a.weights, b.weights, t), std::move(lin), generation, ids));
    }
    return children;
}

// --- mutation --------------------------------------------------------------------

std::vector<Genome> mutation_step(std::span<const Member> pool, const EvolutionConfig& cfg, Rng& rng,
                                  IdAllocator& ids, std::uint64_t generation)
{
    std::vector<Genome> mutants;
    if (cfg.ablation.no_mutation)
        return mutants;
    if (!(cfg.mutation_sigma > 0.0))
        throw Error(ErrorCode::InvalidConfig, "mutation_sigma must be positive");

    for (const Member& m : pool) {
        if (!rng.bernoulli(cfg.individual_mutation_rate))
            continue;
        const auto src = m.genome.weights.values();
        std::vector<double> w(src.begin(), src.end());
        std::size_t changed = 0;
        for (double& v : w) {
            // Noise is only drawn for masked coordinates; unmasked ones would
            // discard it anyway.
            if (rng.bernoulli(cfg.gene_mutation_rate)) {
                v += rng.normal(0.0, cfg.mutation_sigma);
                ++changed;
            }
        }
        Lineage lin{Origin::Mutation, {m.genome.id}, {{"masked", static_cast<double>(changed)}}};
        mutants.push_back(make_genome(WeightVector(std::move(w)), std::move(lin), generation, ids));
    }
    return mutants;
}

// --- succession ------------------------------------------------------------------

std::vector<std::size_t> succession_step(std::vector<Member>& pool, ExperienceState& state,
                                         const EvolutionConfig& cfg, IdAllocator& ids, std::uint64_t generation,
                                         const std::set<GenomeId>& base_ids)
{
    std::vector<std::size_t> modified;
    if (!cfg.succession_enabled() || pool.empty())
        return modified;
    if (!state.global_best || !state.global_worst)
        throw Error(ErrorCode::MissingExperience, "succession needs global best/worst references");

    const auto order = rank_by_fitness(pool);
    {
        const Member& cb = pool[order.front()];
        Reference ref{cb.genome, *cb.fitness, {}};
        if (auto it = state.per_genome.find(cb.genome.id); it != state.per_genome.end())
            ref.experience = it->second;
        state.current_best = std::move(ref);
    }

    const std::size_t d = pool.front().genome.dim();
    auto reference_vector = [&](const Reference& ref) -> std::vector<double> {
        if (cfg.succession_reference == SuccessionReference::Weights) {
            const auto w = ref.genome.weights.values();
            return {w.begin(), w.end()};
        }
        if (ref.experience.size() != d)
            throw Error(ErrorCode::MissingExperience,
                        "reference genome " + std::to_string(ref.genome.id) + " has no experience vector");
        return ref.experience;
    };
    // Snapshots: references stay fixed while the pool is rewritten.
    const std::vector<double> r_g = reference_vector(*state.global_best);
    const std::vector<double> r_c = reference_vector(*state.current_best);
    const std::vector<double> r_w = reference_vector(*state.global_worst);

    const Phi& phi = cfg.phi;
    const double inv_c = 1.0 / phi.sum();
    const double lambda = cfg.experience_rate;

    for (std::size_t i = 0; i < pool.size(); ++i) {
        Member& m = pool[i];
        if (cfg.succession_scope == SuccessionScope::BaseN && !base_ids.contains(m.genome.id))
            continue;
        auto it = state.per_genome.find(m.genome.id);
        if (it == state.per_genome.end())
            throw Error(ErrorCode::MissingExperience, "genome " + std::to_string(m.genome.id) + " has no experience");

        std::vector<double> e = std::move(it->second);
        state.per_genome.erase(it);
        const auto w_old = m.genome.weights.values();
        std::vector<double> w(w_old.begin(), w_old.end());
        for (std::size_t j = 0; j < d; ++j) {
            const double ej = e[j];
            e[j] = inv_c * (phi.self * ej + phi.global_best * (r_g[j] - ej) + phi.current_best * (r_c[j] - ej) -
                            phi.global_worst * (r_w[j] - ej));
            w[j] += lambda * e[j];
        }
        Lineage lin{Origin::Succession, {m.genome.id}, {}};
        Genome next = make_genome(WeightVector(std::move(w)), std::move(lin), generation, ids);
        state.per_genome[next.id] = std::move(e);
        m.genome = std::move(next);
        m.fitness.reset();
        modified.push_back(i);
    }
    return modified;
}

// --- selection -------------------------------------------------------------------

Population select_population(std::vector<Member> pool, std::size_t target, std::size_t elite_count, bool uniform,
                             Rng& rng, IdAllocator& ids, std::uint64_t generation)
{
    if (pool.size() < target)
        throw Error(ErrorCode::PoolTooSmall, "pool of " + std::to_string(pool.size()) + " cannot fill " +
                                                 std::to_string(target) + " slots");
    const auto raw = fitness_values(pool);
    if (uniform)
        elite_count = 0;
    elite_count = std::min(elite_count, target);

    std::vector<std::size_t> picks;
    picks.reserve(target);
    const auto order = rank_by_fitness(pool);
    for (std::size_t i = 0; i < elite_count; ++i)
        picks.push_back(order[i]);
    if (uniform) {
        for (std::size_t s = 0; s < target; ++s)
            picks.push_back(static_cast<std::size_t>(rng.uniform_index(pool.size())));
    } else {
        const auto probs = selection_probabilities(raw);
        for (std::size_t s = elite_count; s < target; ++s)
            picks.push_back(rng.categorical(probs));
    }

    Population out;
    out.generation = generation;
    out.target_size = target;
    out.members.reserve(target);
    std::vector<char> taken(pool.size(), 0);
    for (std::size_t idx : picks) {
        if (!taken[idx]) {
            taken[idx] = 1;
            out.members.push_back(pool[idx]);
            continue;
        }
        const Member& src = pool[idx];
        Lineage lin{Origin::SelectionCopy, {src.genome.id}, {}};
        out.members.push_back(Member{make_genome(src.genome.weights, std::move(lin), generation, ids), src.fitness});
    }
    return out;
}

Population selection_step(std::vector<Member> pool, const EvolutionConfig& cfg, Rng& rng, IdAllocator& ids,
                          std::uint64_t generation)
{
    return select_population(std::move(pool), cfg.population_size, cfg.elite_count(),
                             cfg.ablation.random_selection, rng, ids, generation);
}

// --- engine ----------------------------------------------------------------------

namespace {

GenomeId next_free_id(const std::vector<Genome>& experts)
{
    GenomeId next = 0;
    for (const Genome& e : experts)
        next = std::max(next, e.id + 1);
    return next;
}

} // namespace

Engine::Engine(const EvolutionConfig& cfg, const std::vector<Genome>& experts, Evaluator& evaluator)
    : evaluator_(evaluator), ids_(next_free_id(experts))
{
    cfg.validate();
    for (const Genome& e : experts) {
        if (e.dim() != evaluator.dim())
            throw Error(ErrorCode::DimMismatch, "expert dimension does not match the task");
    }
    state_.config = cfg;
    state_.rng = Rng(cfg.rng_seed);
    eval_mark_ = evaluator_.evaluations();
    hit_mark_ = evaluator_.cache_hits();

    auto genomes = initialize_population(experts, cfg, state_.rng, ids_);
    state_.population.generation = 0;
    state_.population.target_size = cfg.population_size;
    for (auto& g : genomes)
        state_.population.members.push_back(Member{std::move(g), std::nullopt});
    track_new(state_.population.members, 0);
    state_.next_id = ids_.peek();
}

Engine::Engine(EngineState state, Evaluator& evaluator)
    : state_(std::move(state)), evaluator_(evaluator), ids_(state_.next_id)
{
    state_.config.validate();
    eval_mark_ = evaluator_.evaluations();
    hit_mark_ = evaluator_.cache_hits();
}

void Engine::evaluate_members(std::vector<Member>& pool, const std::vector<std::size_t>& which)
{
    std::vector<const WeightVector*> batch;
    batch.reserve(which.size());
    for (std::size_t i : which)
        batch.push_back(&pool[i].genome.weights);
    auto outcomes = evaluator_.evaluate_batch(batch, Split::Validation);
    for (std::size_t k = 0; k < which.size(); ++k) {
        Member& m = pool[which[k]];
        if (!std::isfinite(outcomes[k].fitness))
            throw Error(ErrorCode::NonFiniteFitness, "evaluator returned non-finite fitness");
        m.fitness = outcomes[k].fitness;
        state_.experience.observe(m.genome, *m.fitness);
    }
}

void Engine::track_new(std::vector<Member>& pool, std::size_t first_new)
{
    // Experience draws happen before dispatch, in member order.
    if (state_.config.succession_enabled()) {
        for (std::size_t i = first_new; i < pool.size(); ++i)
            state_.experience.birth(pool[i].genome, state_.config.mutation_sigma, state_.rng);
    }
    std::vector<std::size_t> which;
    for (std::size_t i = first_new; i < pool.size(); ++i)
        which.push_back(i);
    evaluate_members(pool, which);
}

const IterationReport& Engine::step()
{
    if (done())
        throw Error(ErrorCode::InvalidConfig, "run already completed");
    const auto started = std::chrono::steady_clock::now();
    const EvolutionConfig& cfg = state_.config;
    const std::uint64_t generation = state_.generation + 1;

    std::set<GenomeId> base_ids;
    for (const Member& m : state_.population.members)
        base_ids.insert(m.genome.id);

    std::vector<Member> pool = state_.population.members;

    auto children = crossover_step(state_.population, cfg, state_.rng, ids_);
    std::size_t first_new = pool.size();
    for (auto& c : children)
        pool.push_back(Member{std::move(c), std::nullopt});
    track_new(pool, first_new);
    const std::size_t after_crossover = pool.size();

    auto mutants = mutation_step(pool, cfg, state_.rng, ids_, generation);
    first_new = pool.size();
    for (auto& m : mutants)
        pool.push_back(Member{std::move(m), std::nullopt});
    track_new(pool, first_new);
    const std::size_t after_mutation = pool.size();

    if (cfg.succession_enabled()) {
        const auto modified = succession_step(pool, state_.experience, cfg, ids_, generation, base_ids);
        evaluate_members(pool, modified);
    }

    state_.population = selection_step(std::move(pool), cfg, state_.rng, ids_, generation);

    if (cfg.succession_enabled()) {
        // Clones inherit their source's experience; dropped genomes release theirs.
        std::map<GenomeId, std::vector<double>> kept;
        for (const Member& m : state_.population.members) {
            GenomeId src = m.genome.id;
            if (m.genome.lineage.origin == Origin::SelectionCopy && !state_.experience.per_genome.contains(src))
                src = m.genome.lineage.parent_ids.front();
            auto it = state_.experience.per_genome.find(src);
            if (it == state_.experience.per_genome.end())
                throw Error(ErrorCode::MissingExperience, "genome " + std::to_string(src) + " has no experience");
            kept[m.genome.id] = it->second;
        }
        state_.experience.per_genome = std::move(kept);
    }

    state_.generation = generation;
    state_.next_id = ids_.peek();

    IterationReport report;
    report.generation = generation;
    report.pool_size_after_crossover = after_crossover;
    report.pool_size_after_mutation = after_mutation;
    report.best_fitness = state_.experience.global_best->fitness;
    report.mean_fitness = mean_fitness(state_.population);
    report.topk_mean_fitness = topk_mean_fitness(state_.population, cfg.ensemble_k);
    if (record_wall_clock_)
        report.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.evaluation_count = evaluator_.evaluations() - eval_mark_;
    report.cache_hit_count = evaluator_.cache_hits() - hit_mark_;
    eval_mark_ = evaluator_.evaluations();
    hit_mark_ = evaluator_.cache_hits();
    state_.log.push_back(report);
    return state_.log.back();
}

RunResult Engine::finish()
{
    const std::uint64_t evals_before = evaluator_.evaluations();
    RunResult result;
    const Reference& g = *state_.experience.global_best;
    result.best = g.genome;
    result.best_validation_fitness = g.fitness;
    result.best_test_fitness = evaluator_.evaluate(g.genome.weights, Split::Test).fitness;
    result.final_population = state_.population;
    result.iteration_log = state_.log;

    const auto topk = select_top_k(state_.population, state_.config.ensemble_k);
    for (const Member& m : topk)
        result.topk_ids.push_back(m.genome.id);
    if (state_.config.ensemble_enabled() && evaluator_.yields_predictions()) {
        // An external task may turn out to return no per-sample outputs; the
        // run then reports the best single genome only.
        try {
            result.ensemble = ensemble_evaluate(topk, evaluator_);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoPredictions)
                throw;
        }
    }
    result.final_evaluations = evaluator_.evaluations() - evals_before;
    return result;
}

namespace {

std::optional<RunResult> drive(Engine& engine, Evaluator& evaluator, std::span<RunSink* const> sinks,
                               const EvolveOptions& options)
{
    engine.record_wall_clock(options.record_wall_clock);
    while (!engine.done()) {
        if (options.halt_after && engine.state().generation >= *options.halt_after)
            return std::nullopt;
        EngineState boundary = engine.state();
        try {
            const IterationReport& report = engine.step();
            for (RunSink* s : sinks)
                s->on_iteration(report, engine);
        } catch (...) {
            for (RunSink* s : sinks)
                s->on_abort(boundary, evaluator);
            throw;
        }
    }
    RunResult result = engine.finish();
    for (RunSink* s : sinks)
        s->on_finish(result, engine);
    return result;
}

} // namespace

std::optional<RunResult> evolve(const std::vector<Genome>& experts, const EvolutionConfig& cfg, Evaluator& evaluator,
                                std::span<RunSink* const> sinks, const EvolveOptions& options)
{
    Engine engine(cfg, experts, evaluator);
    return drive(engine, evaluator, sinks, options);
}

std::optional<RunResult> resume(EngineState state, Evaluator& evaluator, std::span<RunSink* const> sinks,
                                const EvolveOptions& options)
{
    Engine engine(std::move(state), evaluator);
    return drive(engine, evaluator, sinks, options);
}

} // namespace popevo
