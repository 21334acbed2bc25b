#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace popevo {

/// Counter-based SplitMix64 stream.
///
/// Output n is `mix(key + (n + 1) * gamma)`, so the whole state is the pair
/// (key, counter) and any position in the stream is reachable in O(1). All
/// distributions below are defined here rather than taken from <random>,
/// whose distribution objects are implementation-defined and would make
/// trajectories differ between standard libraries.
class Rng {
public:
    static constexpr std::size_t kStateBytes = 16;

    explicit Rng(std::uint64_t seed = 0) noexcept : key_(seed) {}

    std::uint64_t next_u64() noexcept;

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept;

    /// Uniform integer in [0, n). Requires n > 0.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;

    bool bernoulli(double p) noexcept;

    /// Standard normal via Box-Muller. Uses exactly two raw draws and keeps
    /// no spare value, so the state stays (key, counter).
    double normal() noexcept;
    double normal(double mean, double sigma) noexcept { return mean + sigma * normal(); }

    /// Index drawn with probability proportional to `probs[i]`.
    std::size_t categorical(std::span<const double> probs) noexcept;

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::array<std::uint8_t, kStateBytes> save_state() const noexcept;
    static Rng from_state(std::span<const std::uint8_t, kStateBytes> bytes) noexcept;
    static Rng from_parts(std::uint64_t key, std::uint64_t counter) noexcept;

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace popevo
