#include "popevo/config.hpp"

#include "popevo/error.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace popevo {

using nlohmann::json;

std::string_view to_string(Mode m) noexcept
{
    return m == Mode::Genome ? "genome" : "genome_plus";
}

std::string_view to_string(SuccessionScope s) noexcept
{
    return s == SuccessionScope::Pool ? "pool" : "base_n";
}

std::string_view to_string(SuccessionReference r) noexcept
{
    return r == SuccessionReference::Weights ? "weights" : "experience";
}

namespace {

[[noreturn]] void invalid(const std::string& what)
{
    throw Error(ErrorCode::InvalidConfig, what);
}

void require_unit(double v, const char* name)
{
    if (!(v >= 0.0 && v <= 1.0))
        invalid(std::string(name) + " must lie in [0, 1]");
}

template <typename T>
T get_as(const json& doc, const std::string& key)
{
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        invalid("bad value for '" + key + "': " + e.what());
    }
}

double get_real(const json& doc, const std::string& key)
{
    const json& v = doc.at(key);
    if (!v.is_number())
        invalid("'" + key + "' must be a number");
    return v.get<double>();
}

std::uint64_t get_count(const json& doc, const std::string& key)
{
    const json& v = doc.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        invalid("'" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

bool get_flag(const json& doc, const std::string& key)
{
    const json& v = doc.at(key);
    if (!v.is_boolean())
        invalid("'" + key + "' must be a boolean");
    return v.get<bool>();
}

} // namespace

void EvolutionConfig::validate() const
{
    if (population_size < 1)
        invalid("population_size must be positive");
    require_unit(crossover_rate, "crossover_rate");
    require_unit(individual_mutation_rate, "individual_mutation_rate");
    require_unit(gene_mutation_rate, "gene_mutation_rate");
    if (!(mutation_sigma > 0.0) || !std::isfinite(mutation_sigma))
        invalid("mutation_sigma must be positive");
    if (!(elite_ratio > 0.0 && elite_ratio < 1.0))
        invalid("elite_ratio must lie in (0, 1)");
    for (double p : {phi.self, phi.global_best, phi.current_best, phi.global_worst}) {
        if (!(p >= 0.0) || !std::isfinite(p))
            invalid("phi entries must be non-negative");
    }
    if (!(phi.sum() > 0.0))
        invalid("phi entries must not all be zero");
    require_unit(experience_rate, "experience_rate");
    if (ensemble_k < 1 || ensemble_k > population_size)
        invalid("ensemble_k must lie in [1, population_size]");
}

std::size_t EvolutionConfig::elite_count() const noexcept
{
    // alpha * N can land a hair above an integer (0.7 * 10 = 7.000000000000001).
    const double raw = elite_ratio * population_size;
    return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

json to_json(const EvolutionConfig& cfg)
{
    json doc = json::object();
    doc["population_size"] = cfg.population_size;
    doc["crossover_rate"] = cfg.crossover_rate;
    doc["individual_mutation_rate"] = cfg.individual_mutation_rate;
    doc["gene_mutation_rate"] = cfg.gene_mutation_rate;
    doc["mutation_sigma"] = cfg.mutation_sigma;
    doc["elite_ratio"] = cfg.elite_ratio;
    doc["max_iterations"] = cfg.max_iterations;
    doc["phi"] = {cfg.phi.self, cfg.phi.global_best, cfg.phi.current_best, cfg.phi.global_worst};
    doc["experience_rate"] = cfg.experience_rate;
    doc["ensemble_k"] = cfg.ensemble_k;
    doc["mode"] = std::string(to_string(cfg.mode));
    doc["succession_scope"] = std::string(to_string(cfg.succession_scope));
    doc["succession_reference"] = std::string(to_string(cfg.succession_reference));
    doc["no_init_blend"] = cfg.ablation.no_init_blend;
    doc["no_crossover"] = cfg.ablation.no_crossover;
    doc["no_mutation"] = cfg.ablation.no_mutation;
    doc["random_selection"] = cfg.ablation.random_selection;
    doc["no_succession"] = cfg.ablation.no_succession;
    doc["no_ensemble"] = cfg.ablation.no_ensemble;
    doc["rng_seed"] = cfg.rng_seed;
    return doc;
}

EvolutionConfig config_from_json(const json& doc)
{
    if (!doc.is_object())
        invalid("configuration must be a JSON object");
    static const std::set<std::string> known = {
        "population_size", "crossover_rate", "individual_mutation_rate", "gene_mutation_rate",
        "mutation_sigma", "elite_ratio", "max_iterations", "phi", "experience_rate", "ensemble_k",
        "mode", "succession_scope", "succession_reference", "no_init_blend", "no_crossover",
        "no_mutation", "random_selection", "no_succession", "no_ensemble", "rng_seed"};
    for (const auto& [key, _] : doc.items()) {
        if (!known.contains(key))
            invalid("unknown configuration key '" + key + "'");
    }

    EvolutionConfig cfg;
    if (doc.contains("population_size"))
        cfg.population_size = static_cast<std::uint32_t>(get_count(doc, "population_size"));
    if (doc.contains("crossover_rate"))
        cfg.crossover_rate = get_real(doc, "crossover_rate");
    if (doc.contains("individual_mutation_rate"))
        cfg.individual_mutation_rate = get_real(doc, "individual_mutation_rate");
    if (doc.contains("gene_mutation_rate"))
        cfg.gene_mutation_rate = get_real(doc, "gene_mutation_rate");
    if (doc.contains("mutation_sigma"))
        cfg.mutation_sigma = get_real(doc, "mutation_sigma");
    if (doc.contains("elite_ratio"))
        cfg.elite_ratio = get_real(doc, "elite_ratio");
    if (doc.contains("max_iterations"))
        cfg.max_iterations = static_cast<std::uint32_t>(get_count(doc, "max_iterations"));
    if (doc.contains("phi")) {
        const json& p = doc.at("phi");
        if (!p.is_array() || p.size() != 4)
            invalid("'phi' must be an array of four numbers");
        for (const json& v : p) {
            if (!v.is_number())
                invalid("'phi' must be an array of four numbers");
        }
        cfg.phi = Phi{p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), p[3].get<double>()};
    }
    if (doc.contains("experience_rate"))
        cfg.experience_rate = get_real(doc, "experience_rate");
    if (doc.contains("ensemble_k"))
        cfg.ensemble_k = static_cast<std::uint32_t>(get_count(doc, "ensemble_k"));
    if (doc.contains("mode")) {
        const auto s = get_as<std::string>(doc, "mode");
        if (s == "genome")
            cfg.mode = Mode::Genome;
        else if (s == "genome_plus")
            cfg.mode = Mode::GenomePlus;
        else
            invalid("mode must be 'genome' or 'genome_plus'");
    }
    if (doc.contains("succession_scope")) {
        const auto s = get_as<std::string>(doc, "succession_scope");
        if (s == "pool")
            cfg.succession_scope = SuccessionScope::Pool;
        else if (s == "base_n")
            cfg.succession_scope = SuccessionScope::BaseN;
        else
            invalid("succession_scope must be 'pool' or 'base_n'");
    }
    if (doc.contains("succession_reference")) {
        const auto s = get_as<std::string>(doc, "succession_reference");
        if (s == "weights")
            cfg.succession_reference = SuccessionReference::Weights;
        else if (s == "experience")
            cfg.succession_reference = SuccessionReference::Experience;
        else
            invalid("succession_reference must be 'weights' or 'experience'");
    }
    auto flag = [&](const char* key, bool& out) {
        if (doc.contains(key))
            out = get_flag(doc, key);
    };
    flag("no_init_blend", cfg.ablation.no_init_blend);
    flag("no_crossover", cfg.ablation.no_crossover);
    flag("no_mutation", cfg.ablation.no_mutation);
    flag("random_selection", cfg.ablation.random_selection);
    flag("no_succession", cfg.ablation.no_succession);
    flag("no_ensemble", cfg.ablation.no_ensemble);
    if (doc.contains("rng_seed"))
        cfg.rng_seed = get_count(doc, "rng_seed");

    cfg.validate();
    return cfg;
}

void apply_override(json& doc, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw Error(ErrorCode::Usage, "override must look like key=value: '" + std::string(assignment) + "'");
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        if (raw.find(',') != std::string::npos) {
            value = json::array();
            std::stringstream ss(raw);
            std::string item;
            while (std::getline(ss, item, ',')) {
                try {
                    value.push_back(json::parse(item));
                } catch (const json::exception&) {
                    value.push_back(item);
                }
            }
        } else {
            value = raw;
        }
    }
    doc[key] = std::move(value);
}

} // namespace popevo
