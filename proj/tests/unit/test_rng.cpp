#include "doctest.h"

#include "popevo/rng.hpp"

#include <cmath>
#include <vector>

using namespace popevo;

TEST_CASE("seeded streams replay exactly")
{
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs = differs || x != c.next_u64();
    }
    CHECK(differs);
}

TEST_CASE("state round-trips through 16 bytes")
{
    Rng a(9);
    for (int i = 0; i < 37; ++i)
        a.normal();
    const auto bytes = a.save_state();
    Rng b = Rng::from_state(bytes);
    CHECK(a == b);
    for (int i = 0; i < 20; ++i)
        CHECK(a.uniform() == b.uniform());
    CHECK(Rng::from_parts(a.key(), a.counter()) == a);
}

TEST_CASE("uniform and index ranges")
{
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(r.uniform_index(7) < 7);
    }
    CHECK(r.uniform_index(1) == 0);
}

TEST_CASE("normal draws have unit moments")
{
    Rng r(2);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("each normal draw consumes exactly two raw outputs")
{
    Rng r(3);
    r.normal();
    CHECK(r.counter() == 2);
    r.bernoulli(0.5);
    CHECK(r.counter() == 3);
}

TEST_CASE("categorical follows the weights")
{
    Rng r(4);
    const std::vector<double> p = {0.1, 0.0, 0.9};
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 100000; ++i)
        ++counts[r.categorical(p)];
    CHECK(counts[1] == 0);
    CHECK(std::fabs(counts[0] / 100000.0 - 0.1) < 0.005);
}
