#include "doctest.h"
#include "support.hpp"

#include "popevo/error.hpp"
#include "popevo/genotype.hpp"
#include "popevo/rng.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <set>

using namespace popevo;

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

std::vector<double> random_vector(Rng& rng, std::size_t d)
{
    std::vector<double> v(d);
    for (auto& x : v)
        x = rng.normal(0.0, 3.0);
    return v;
}

} // namespace

TEST_CASE("weight vectors reject empty and non-finite input")
{
    CHECK(code_of([] { WeightVector w(std::vector<double>{}); }) == ErrorCode::DimMismatch);
    CHECK(code_of([] { WeightVector w({1.0, std::nan("")}); }) == ErrorCode::NonFiniteWeights);
    CHECK(code_of([] { WeightVector w({std::numeric_limits<double>::infinity()}); }) == ErrorCode::NonFiniteWeights);
    CHECK(WeightVector::zeros(3).dim() == 3);
}

TEST_CASE("make_genome assigns fresh ids and checks lineage arity")
{
    IdAllocator ids;
    Lineage seed{Origin::ExpertSeed, {}, {}};
    const Genome a = make_genome(WeightVector::zeros(3), seed, 0, ids);
    const Genome b = make_genome(WeightVector::zeros(3), seed, 0, ids);
    CHECK(a.id != b.id);
    CHECK(a.weights == b.weights);
    CHECK(a.birth_generation == 0);

    CHECK(code_of([&] { make_genome(WeightVector::zeros(2), Lineage{Origin::Crossover, {1}, {}}, 1, ids); }) ==
          ErrorCode::LineageMismatch);
    CHECK(code_of([&] { make_genome(WeightVector::zeros(2), Lineage{Origin::Mutation, {1, 2}, {}}, 1, ids); }) ==
          ErrorCode::LineageMismatch);
    CHECK(code_of([&] { make_genome(WeightVector::zeros(2), Lineage{Origin::ExpertSeed, {1}, {}}, 0, ids); }) ==
          ErrorCode::LineageMismatch);
    CHECK(code_of([&] { make_genome(WeightVector::zeros(2), Lineage{Origin::InitBlend, {1}, {}}, 0, ids); }) ==
          ErrorCode::LineageMismatch);
    CHECK_NOTHROW(make_genome(WeightVector::zeros(2), Lineage{Origin::Succession, {1}, {}}, 1, ids));
    CHECK_NOTHROW(make_genome(WeightVector::zeros(2), Lineage{Origin::SelectionCopy, {1}, {}}, 1, ids));
}

TEST_CASE("origin names round-trip")
{
    for (Origin o : {Origin::ExpertSeed, Origin::InitBlend, Origin::Crossover, Origin::Mutation, Origin::Succession,
                     Origin::SelectionCopy})
        CHECK(origin_from_string(to_string(o)) == o);
    CHECK(to_string(Origin::SelectionCopy) == "selection-copy");
}

TEST_CASE("linear_combine endpoints and arithmetic")
{
    const WeightVector a({0.1, -2.7, 1e-300});
    const WeightVector b({5.5, 0.3, -7.0});
    CHECK(bit_equal(linear_combine(a, b, 1.0), a));
    CHECK(bit_equal(linear_combine(a, b, 0.0), b));
    const WeightVector c = linear_combine(WeightVector({2.0, 4.0}), WeightVector({0.0, 0.0}), 0.25);
    CHECK(c[0] == 0.5);
    CHECK(c[1] == 1.0);

    CHECK(code_of([&] { linear_combine(a, WeightVector({1.0}), 0.5); }) == ErrorCode::DimMismatch);
    CHECK(code_of([&] { linear_combine(a, b, 1.5); }) == ErrorCode::OutOfRangeT);
    CHECK(code_of([&] { linear_combine(a, b, -0.1); }) == ErrorCode::OutOfRangeT);
}

TEST_CASE("linear_combine is convex and affine on random inputs")
{
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const WeightVector a(random_vector(rng, 8));
        const WeightVector b(random_vector(rng, 8));
        const double t = rng.uniform();
        const WeightVector c = linear_combine(a, b, t);
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(c[j] >= std::min(a[j], b[j]));
            CHECK(c[j] <= std::max(a[j], b[j]));
        }
        CHECK(bit_equal(linear_combine(a, a, t), a));
    }
}

TEST_CASE("l2_distance")
{
    const WeightVector v({1.5, -2.0});
    CHECK(l2_distance(v, v) == 0.0);
    CHECK(l2_distance(WeightVector({0.0, 0.0}), WeightVector({3.0, 4.0})) == 5.0);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const WeightVector a(random_vector(rng, 5));
        const WeightVector b(random_vector(rng, 5));
        CHECK(l2_distance(a, b) == l2_distance(b, a));
        CHECK(l2_distance(a, b) > 0.0);
    }
    CHECK(code_of([] { l2_distance(WeightVector({1.0}), WeightVector({1.0, 2.0})); }) == ErrorCode::DimMismatch);
}

TEST_CASE("fingerprints are deterministic, bit sensitive and task scoped")
{
    const Genome g = testing::genome({0.25, -1.0, 3.0});
    CHECK(genome_fingerprint(g, "t") == genome_fingerprint(g, "t"));

    Genome flipped = g;
    flipped.weights = WeightVector({0.25, 1.0, 3.0});
    CHECK(genome_fingerprint(flipped, "t") != genome_fingerprint(g, "t"));
    CHECK(genome_fingerprint(g, "t") != genome_fingerprint(g, "u"));

    // Single-bit differences, including -0 vs +0.
    CHECK(weights_fingerprint(WeightVector({0.0}), "t") != weights_fingerprint(WeightVector({-0.0}), "t"));
    const double x = 1.0;
    const double y = std::bit_cast<double>(std::bit_cast<std::uint64_t>(x) ^ 1u);
    CHECK(weights_fingerprint(WeightVector({x}), "t") != weights_fingerprint(WeightVector({y}), "t"));

    // Length-prefixing keeps the task id and weight bytes from aliasing.
    CHECK(weights_fingerprint(WeightVector({1.0, 2.0}), "a") != weights_fingerprint(WeightVector({1.0}), "a"));

    std::set<std::string> seen;
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto key = weights_fingerprint(WeightVector(random_vector(rng, 4)), "t");
        seen.insert(to_hex(key.digest));
    }
    CHECK(seen.size() == 1000);
}

TEST_CASE("id allocator is monotone")
{
    IdAllocator ids(7);
    CHECK(ids.peek() == 7);
    CHECK(ids.allocate() == 7);
    CHECK(ids.allocate() == 8);
    CHECK(ids.peek() == 9);
}
