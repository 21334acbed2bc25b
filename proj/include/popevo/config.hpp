#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"

namespace popevo {

enum class Mode { Genome, GenomePlus };
enum class SuccessionScope { Pool, BaseN };
enum class SuccessionReference { Weights, Experience };

std::string_view to_string(Mode m) noexcept;
std::string_view to_string(SuccessionScope s) noexcept;
std::string_view to_string(SuccessionReference r) noexcept;

struct Ablation {
    bool no_init_blend = false;
    bool no_crossover = false;
    bool no_mutation = false;
    bool random_selection = false;
    bool no_succession = false;
    bool no_ensemble = false;

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

/// Weights of the four experience sources: self, global best, current best,
/// global worst.
struct Phi {
    double self = 0.95;
    double global_best = 0.2;
    double current_best = 0.2;
    double global_worst = 0.1;

    double sum() const noexcept { return self + global_best + current_best + global_worst; }

    friend bool operator==(const Phi&, const Phi&) = default;
};

struct EvolutionConfig {
    std::uint32_t population_size = 10;
    double crossover_rate = 0.3;
    double individual_mutation_rate = 0.3;
    double gene_mutation_rate = 0.2;
    double mutation_sigma = 0.001;
    double elite_ratio = 0.2;
    std::uint32_t max_iterations = 10;
    Phi phi;
    double experience_rate = 0.95;
    std::uint32_t ensemble_k = 3;
    Mode mode = Mode::GenomePlus;
    SuccessionScope succession_scope = SuccessionScope::Pool;
    SuccessionReference succession_reference = SuccessionReference::Weights;
    Ablation ablation;
    std::uint64_t rng_seed = 0;

    /// Throws Error(InvalidConfig) naming the first offending field.
    void validate() const;

    std::size_t elite_count() const noexcept;
    bool succession_enabled() const noexcept
    {
        return mode == Mode::GenomePlus && !ablation.no_succession;
    }
    bool ensemble_enabled() const noexcept { return mode == Mode::GenomePlus && !ablation.no_ensemble; }

    friend bool operator==(const EvolutionConfig&, const EvolutionConfig&) = default;
};

/// Flat JSON encoding; field names mirror the struct members, ablation flags
/// sit at top level. `from_json` rejects unknown keys.
nlohmann::json to_json(const EvolutionConfig& cfg);
EvolutionConfig config_from_json(const nlohmann::json& doc);

/// Applies one `key=value` override. Values are parsed as JSON when possible,
/// otherwise taken as a bare string; `phi` also accepts `a,b,c,d`.
void apply_override(nlohmann::json& doc, std::string_view assignment);

} // namespace popevo
