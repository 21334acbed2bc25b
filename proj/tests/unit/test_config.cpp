#include "doctest.h"

#include "popevo/config.hpp"
#include "popevo/error.hpp"
#include "popevo/workload.hpp"

using namespace popevo;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::Usage;
}

} // namespace

TEST_CASE("defaults match the published hyperparameters")
{
    const EvolutionConfig c;
    CHECK(c.crossover_rate == 0.3);
    CHECK(c.individual_mutation_rate == 0.3);
    CHECK(c.gene_mutation_rate == 0.2);
    CHECK(c.mutation_sigma == 0.001);
    CHECK(c.max_iterations == 10);
    CHECK(c.population_size == 10);
    CHECK(c.phi == Phi{0.95, 0.2, 0.2, 0.1});
    CHECK(c.experience_rate == 0.95);
    CHECK(c.ensemble_k == 3);
    CHECK(c.elite_ratio == 0.2);
    CHECK(c.elite_count() == 2);
    CHECK(c.mode == Mode::GenomePlus);
    CHECK(c.succession_scope == SuccessionScope::Pool);
    CHECK(c.succession_reference == SuccessionReference::Weights);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("elite count rounds up")
{
    EvolutionConfig c;
    c.population_size = 7;
    c.elite_ratio = 0.2;
    CHECK(c.elite_count() == 2);
    c.population_size = 5;
    CHECK(c.elite_count() == 1);
    c.elite_ratio = 0.01;
    CHECK(c.elite_count() == 1);
}

TEST_CASE("validation names the offending field")
{
    auto bad = [](auto mutate) {
        EvolutionConfig c;
        mutate(c);
        return code_of([&] { c.validate(); });
    };
    CHECK(bad([](EvolutionConfig& c) { c.population_size = 0; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.crossover_rate = 1.5; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.mutation_sigma = 0.0; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.elite_ratio = 1.0; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.elite_ratio = 0.0; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.phi = Phi{0, 0, 0, 0}; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.phi.global_worst = -0.1; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.ensemble_k = 11; }) == ErrorCode::InvalidConfig);
    CHECK(bad([](EvolutionConfig& c) { c.experience_rate = -0.5; }) == ErrorCode::InvalidConfig);
}

TEST_CASE("json round-trip and unknown keys")
{
    EvolutionConfig c;
    c.population_size = 12;
    c.phi = Phi{1.0, 0.5, 0.25, 0.125};
    c.mode = Mode::Genome;
    c.succession_scope = SuccessionScope::BaseN;
    c.succession_reference = SuccessionReference::Experience;
    c.ablation.random_selection = true;
    c.rng_seed = 18446744073709551615ull;
    CHECK(config_from_json(to_json(c)) == c);

    json doc = to_json(c);
    doc["crossover_rat"] = 0.3;
    CHECK(code_of([&] { config_from_json(doc); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { config_from_json(json{{"mode", "genome_minus"}}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { config_from_json(json{{"population_size", -3}}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { config_from_json(json{{"no_mutation", 1}}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { config_from_json(json::array()); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("overrides parse json, lists and bare strings")
{
    json doc = json::object();
    apply_override(doc, "population_size=20");
    apply_override(doc, "phi=1,0.5,0.5,0");
    apply_override(doc, "mode=genome");
    apply_override(doc, "no_ensemble=true");
    const EvolutionConfig c = config_from_json(doc);
    CHECK(c.population_size == 20);
    CHECK(c.phi == Phi{1.0, 0.5, 0.5, 0.0});
    CHECK(c.mode == Mode::Genome);
    CHECK(c.ablation.no_ensemble);
    CHECK(code_of([&] { apply_override(doc, "novalue"); }) == ErrorCode::Usage);
}

TEST_CASE("run specs carry the workload next to the evolution keys")
{
    RunSpec spec;
    spec.evolution.rng_seed = 5;
    spec.workload.tasks = {TaskKind::SphereInv, TaskKind::RastriginInv};
    spec.workload.dim = 7;
    spec.workload.center = 0.5;
    spec.workload.toy.separation = 4.0;
    CHECK(run_spec_from_json(to_json(spec)) == spec);

    const RunSpec parsed = run_spec_from_json(json{{"task", "toy_classifier"}, {"n_experts", 4}});
    CHECK(parsed.workload.tasks == std::vector<TaskKind>{TaskKind::ToyClassifier});
    CHECK(parsed.workload.n_experts == 4);

    CHECK(code_of([] { run_spec_from_json(json{{"task", "sphere_inv,sphere_inv"}}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { run_spec_from_json(json{{"task", "external"}}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { run_spec_from_json(json{{"task", "unknown"}}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { run_spec_from_json(json{{"n_experts", 1}}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { run_spec_from_json(json{{"bogus", 1}}); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("workload experts and tasks are reproducible")
{
    WorkloadSpec w;
    w.dim = 5;
    w.center = 2.0;
    const auto tasks = build_tasks(w);
    REQUIRE(tasks.size() == 1);
    CHECK(tasks[0].dim == 5);
    const auto a = build_experts(w, tasks);
    const auto b = build_experts(w, tasks);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == i);
        CHECK(bit_equal(a[i].weights, b[i].weights));
        CHECK(a[i].lineage.origin == Origin::ExpertSeed);
    }
    w.expert_seed = 2;
    CHECK_FALSE(bit_equal(build_experts(w, tasks)[0].weights, a[0].weights));

    WorkloadSpec mixed;
    mixed.tasks = {TaskKind::SphereInv, TaskKind::ToyClassifier};
    CHECK(code_of([&] { build_tasks(mixed); }) == ErrorCode::InvalidConfig);
}
