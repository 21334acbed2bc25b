#include "popevo/rng.hpp"

#include <cmath>
#include <numbers>

namespace popevo {

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void put_u64(std::uint8_t* out, std::uint64_t v) noexcept
{
    for (int i = 0; i < 8; ++i)
        out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t get_u64(const std::uint8_t* in) noexcept
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    return v;
}

} // namespace

std::uint64_t Rng::next_u64() noexcept
{
    ++counter_;
    return mix(key_ + counter_ * kGamma);
}

double Rng::uniform() noexcept
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) noexcept
{
    // Rejection on the top of the range keeps the draw exactly uniform.
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    for (;;) {
        const std::uint64_t v = next_u64();
        if (v < limit)
            return v % n;
    }
}

bool Rng::bernoulli(double p) noexcept
{
    return uniform() < p;
}

double Rng::normal() noexcept
{
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::categorical(std::span<const double> probs) noexcept
{
    double total = 0.0;
    for (double p : probs)
        total += p;
    const double u = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0)
            continue;
        acc += probs[i];
        last_positive = i;
        if (u < acc)
            return i;
    }
    return last_positive;
}

std::array<std::uint8_t, Rng::kStateBytes> Rng::save_state() const noexcept
{
    std::array<std::uint8_t, kStateBytes> out{};
    put_u64(out.data(), key_);
    put_u64(out.data() + 8, counter_);
    return out;
}

Rng Rng::from_state(std::span<const std::uint8_t, kStateBytes> bytes) noexcept
{
    return from_parts(get_u64(bytes.data()), get_u64(bytes.data() + 8));
}

Rng Rng::from_parts(std::uint64_t key, std::uint64_t counter) noexcept
{
    Rng r(key);
    r.counter_ = counter;
    return r;
}

} // namespace popevo
