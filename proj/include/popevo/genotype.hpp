#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace popevo {

using GenomeId = std::uint64_t;

/// Flat real-valued parameter vector. Non-empty and finite by construction.
class WeightVector {
public:
    /// Empty placeholder (dim 0); not a valid genome and rejected by every
    /// operator.
    WeightVector() = default;
    explicit WeightVector(std::vector<double> values);

    static WeightVector zeros(std::size_t dim);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    friend bool operator==(const WeightVector& a, const WeightVector& b) noexcept;

private:
    std::vector<double> values_;
};

/// Bitwise equality; distinguishes +0/-0 and is what the fitness cache keys on.
bool bit_equal(const WeightVector& a, const WeightVector& b) noexcept;

enum class Origin { ExpertSeed, InitBlend, Crossover, Mutation, Succession, SelectionCopy };

std::string_view to_string(Origin origin) noexcept;
Origin origin_from_string(std::string_view name);

/// Audit trail only; operators never read it.
struct Lineage {
    Origin origin = Origin::ExpertSeed;
    std::vector<GenomeId> parent_ids;
    std::map<std::string, double> op_params;

    friend bool operator==(const Lineage&, const Lineage&) = default;
};

struct Genome {
    GenomeId id = 0;
    WeightVector weights;
    Lineage lineage;
    std::uint64_t birth_generation = 0;

    std::size_t dim() const noexcept { return weights.dim(); }
};

/// Run-scoped monotonically increasing id source.
class IdAllocator {
public:
    explicit IdAllocator(GenomeId next = 0) noexcept : next_(next) {}

    GenomeId allocate() noexcept { return next_.fetch_add(1, std::memory_order_relaxed); }
    GenomeId peek() const noexcept { return next_.load(std::memory_order_relaxed); }

private:
    std::atomic<GenomeId> next_;
};

Genome make_genome(WeightVector weights, Lineage lineage, std::uint64_t generation, IdAllocator& ids);

/// Returns `t * a + (1 - t) * b`. The endpoints are exact: t == 1 yields `a`
/// and t == 0 yields `b` bit for bit.
WeightVector linear_combine(const WeightVector& a, const WeightVector& b, double t);

double l2_distance(const WeightVector& a, const WeightVector& b);

/// 128-bit fingerprint of a weight vector's bit pattern scoped by a task id.
struct CacheKey {
    std::array<std::uint8_t, 16> digest{};

    friend bool operator==(const CacheKey&, const CacheKey&) = default;
    friend auto operator<=>(const CacheKey&, const CacheKey&) = default;
};

struct CacheKeyHash {
    std::size_t operator()(const CacheKey& key) const noexcept;
};

CacheKey weights_fingerprint(const WeightVector& weights, std::string_view task_id);
CacheKey genome_fingerprint(const Genome& genome, std::string_view task_id);

std::string to_hex(std::span<const std::uint8_t> bytes);

} // namespace popevo
