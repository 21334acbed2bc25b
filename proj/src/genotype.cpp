#include "popevo/genotype.hpp"

#include "popevo/digest.hpp"
#include "popevo/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace popevo {

namespace {

std::size_t expected_parents(Origin origin)
{
    switch (origin) {
    case Origin::ExpertSeed: return 0;
    case Origin::InitBlend:
    case Origin::Crossover: return 2;
    case Origin::Mutation:
    case Origin::Succession:
    case Origin::SelectionCopy: return 1;
    }
    return 0;
}

void check_dims(const WeightVector& a, const WeightVector& b)
{
    if (a.dim() != b.dim())
        throw Error(ErrorCode::DimMismatch,
                    "dimensions differ: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
}

} // namespace

WeightVector::WeightVector(std::vector<double> values) : values_(std::move(values))
{
    if (values_.empty())
        throw Error(ErrorCode::DimMismatch, "weight vector must have dim >= 1");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i]))
            throw Error(ErrorCode::NonFiniteWeights, "non-finite weight at index " + std::to_string(i));
    }
}

WeightVector WeightVector::zeros(std::size_t dim)
{
    return WeightVector(std::vector<double>(dim, 0.0));
}

bool operator==(const WeightVector& a, const WeightVector& b) noexcept
{
    return a.values_ == b.values_;
}

bool bit_equal(const WeightVector& a, const WeightVector& b) noexcept
{
    if (a.dim() != b.dim())
        return false;
    return std::memcmp(a.values().data(), b.values().data(), a.dim() * sizeof(double)) == 0;
}

std::string_view to_string(Origin origin) noexcept
{
    switch (origin) {
    case Origin::ExpertSeed: return "expert-seed";
    case Origin::InitBlend: return "init-blend";
    case Origin::Crossover: return "crossover";
    case Origin::Mutation: return "mutation";
    case Origin::Succession: return "succession";
    case Origin::SelectionCopy: return "selection-copy";
    }
    return "expert-seed";
}

Origin origin_from_string(std::string_view name)
{
    for (Origin o : {Origin::ExpertSeed, Origin::InitBlend, Origin::Crossover, Origin::Mutation,
                     Origin::Succession, Origin::SelectionCopy}) {
        if (to_string(o) == name)
            return o;
    }
    throw Error(ErrorCode::LineageMismatch, "unknown origin '" + std::string(name) + "'");
}

Genome make_genome(WeightVector weights, Lineage lineage, std::uint64_t generation, IdAllocator& ids)
{
    const std::size_t want = expected_parents(lineage.origin);
    if (lineage.parent_ids.size() != want)
        throw Error(ErrorCode::LineageMismatch,
                    std::string(to_string(lineage.origin)) + " lineage needs " + std::to_string(want) +
                        " parent(s), got " + std::to_string(lineage.parent_ids.size()));
    return Genome{ids.allocate(), std::move(weights), std::move(lineage), generation};
}

WeightVector linear_combine(const WeightVector& a, const WeightVector& b, double t)
{
    check_dims(a, b);
    if (!(t >= 0.0 && t <= 1.0))
        throw Error(ErrorCode::OutOfRangeT, "interpolation coefficient outside [0, 1]");
    if (t == 1.0)
        return a;
    if (t == 0.0)
        return b;
    // b + t(a - b) is exact when a_j == b_j; the clamp keeps every component
    // inside [min(a_j, b_j), max(a_j, b_j)] despite rounding.
    std::vector<double> out(a.dim());
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double lo = std::min(a[j], b[j]);
        const double hi = std::max(a[j], b[j]);
        out[j] = std::clamp(b[j] + t * (a[j] - b[j]), lo, hi);
    }
    return WeightVector(std::move(out));
}

double l2_distance(const WeightVector& a, const WeightVector& b)
{
    check_dims(a, b);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.dim(); ++j) {
        const double d = a[j] - b[j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

std::size_t CacheKeyHash::operator()(const CacheKey& key) const noexcept
{
    std::size_t h = 0;
    std::memcpy(&h, key.digest.data(), sizeof(h));
    return h;
}

CacheKey weights_fingerprint(const WeightVector& weights, std::string_view task_id)
{
    Digest<16> digest;
    const std::uint64_t task_len = task_id.size();
    std::array<std::uint8_t, 8> len_bytes{};
    for (int i = 0; i < 8; ++i)
        len_bytes[i] = static_cast<std::uint8_t>(task_len >> (8 * i));
    digest.update(len_bytes);
    digest.update({reinterpret_cast<const std::uint8_t*>(task_id.data()), task_id.size()});
    std::array<std::uint8_t, 8> word{};
    for (double v : weights.values()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i)
            word[i] = static_cast<std::uint8_t>(bits >> (8 * i));
        digest.update(word);
    }
    return CacheKey{digest.finish()};
}

CacheKey genome_fingerprint(const Genome& genome, std::string_view task_id)
{
    return weights_fingerprint(genome.weights, task_id);
}

std::string to_hex(std::span<const std::uint8_t> bytes)
{
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0xF]);
    }
    return out;
}

} // namespace popevo
