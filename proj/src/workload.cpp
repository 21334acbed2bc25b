#include "popevo/workload.hpp"

#include "popevo/error.hpp"
#include "popevo/rng.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace popevo {

using nlohmann::json;

namespace {

const std::set<std::string>& workload_keys()
{
    static const std::set<std::string> keys = {
        "task", "dim", "center", "toy_d_features", "toy_n_classes", "toy_validation_size", "toy_test_size",
        "toy_dataset_seed", "toy_separation", "n_experts", "expert_sigma", "expert_seed", "experts_path"};
    return keys;
}

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); }

std::uint64_t count_of(const json& v, const std::string& key)
{
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        invalid("'" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

double real_of(const json& v, const std::string& key)
{
    if (!v.is_number())
        invalid("'" + key + "' must be a number");
    return v.get<double>();
}

std::vector<TaskKind> parse_tasks(const json& v)
{
    std::vector<std::string> names;
    if (v.is_string()) {
        std::string s = v.get<std::string>();
        std::size_t start = 0;
        while (start <= s.size()) {
            const std::size_t comma = std::min(s.find(',', start), s.size());
            names.push_back(s.substr(start, comma - start));
            start = comma + 1;
        }
    } else if (v.is_array()) {
        for (const auto& item : v) {
            if (!item.is_string())
                invalid("'task' entries must be strings");
            names.push_back(item.get<std::string>());
        }
    } else {
        invalid("'task' must be a name, a comma list or an array of names");
    }
    std::vector<TaskKind> kinds;
    for (const auto& n : names) {
        try {
            kinds.push_back(task_kind_from_string(n));
        } catch (const Error& e) {
            invalid(e.what());
        }
    }
    return kinds;
}

} // namespace

void WorkloadSpec::validate() const
{
    if (tasks.empty())
        invalid("at least one task is required");
    std::set<TaskKind> seen;
    for (TaskKind k : tasks) {
        if (k == TaskKind::External)
            invalid("'external' is not a workload task; use --evaluator to route tasks to an endpoint");
        if (!seen.insert(k).second)
            invalid("task '" + std::string(to_string(k)) + "' listed twice");
    }
    if (dim < 1)
        invalid("dim must be positive");
    if (!std::isfinite(center))
        invalid("center must be finite");
    if (toy.d_features < 1 || toy.n_classes < 2 || toy.validation_size < 1 || toy.test_size < 1)
        invalid("toy task needs d_features >= 1, n_classes >= 2 and non-empty splits");
    if (!(toy.separation > 0.0))
        invalid("toy_separation must be positive");
    if (experts_path.empty() && n_experts < 2)
        invalid("n_experts must be at least 2");
    if (!(expert_sigma >= 0.0) || !std::isfinite(expert_sigma))
        invalid("expert_sigma must be non-negative");
}

json to_json(const RunSpec& spec)
{
    json doc = to_json(spec.evolution);
    const WorkloadSpec& w = spec.workload;
    std::string tasks;
    for (std::size_t i = 0; i < w.tasks.size(); ++i) {
        if (i)
            tasks += ',';
        tasks += to_string(w.tasks[i]);
    }
    doc["task"] = tasks;
    doc["dim"] = w.dim;
    doc["center"] = w.center;
    doc["toy_d_features"] = w.toy.d_features;
    doc["toy_n_classes"] = w.toy.n_classes;
    doc["toy_validation_size"] = w.toy.validation_size;
    doc["toy_test_size"] = w.toy.test_size;
    doc["toy_dataset_seed"] = w.toy.dataset_seed;
    doc["toy_separation"] = w.toy.separation;
    doc["n_experts"] = w.n_experts;
    doc["expert_sigma"] = w.expert_sigma;
    doc["expert_seed"] = w.expert_seed;
    doc["experts_path"] = w.experts_path;
    return doc;
}

RunSpec run_spec_from_json(const json& doc)
{
    if (!doc.is_object())
        invalid("configuration must be a JSON object");
    json evo = json::object();
    RunSpec spec;
    WorkloadSpec& w = spec.workload;
    for (const auto& [key, v] : doc.items()) {
        if (!workload_keys().contains(key)) {
            evo[key] = v;
            continue;
        }
        if (key == "task")
            w.tasks = parse_tasks(v);
        else if (key == "dim")
            w.dim = static_cast<std::uint32_t>(count_of(v, key));
        else if (key == "center")
            w.center = real_of(v, key);
        else if (key == "toy_d_features")
            w.toy.d_features = static_cast<std::uint32_t>(count_of(v, key));
        else if (key == "toy_n_classes")
            w.toy.n_classes = static_cast<std::uint32_t>(count_of(v, key));
        else if (key == "toy_validation_size")
            w.toy.validation_size = static_cast<std::uint32_t>(count_of(v, key));
        else if (key == "toy_test_size")
            w.toy.test_size = static_cast<std::uint32_t>(count_of(v, key));
        else if (key == "toy_dataset_seed")
            w.toy.dataset_seed = count_of(v, key);
        else if (key == "toy_separation")
            w.toy.separation = real_of(v, key);
        else if (key == "n_experts")
            w.n_experts = static_cast<std::uint32_t>(count_of(v, key));
        else if (key == "expert_sigma")
            w.expert_sigma = real_of(v, key);
        else if (key == "expert_seed")
            w.expert_seed = count_of(v, key);
        else if (key == "experts_path") {
            if (!v.is_string())
                invalid("'experts_path' must be a string");
            w.experts_path = v.get<std::string>();
        }
    }
    spec.evolution = config_from_json(evo);
    w.validate();
    return spec;
}

std::string task_id_for(TaskKind kind) { return std::string(to_string(kind)); }

std::vector<TaskSpec> build_tasks(const WorkloadSpec& spec)
{
    spec.validate();
    std::vector<TaskSpec> tasks;
    for (TaskKind k : spec.tasks) {
        const std::vector<double> center(spec.dim, spec.center);
        switch (k) {
        case TaskKind::SphereInv: tasks.push_back(sphere_inv_task(spec.dim, center, task_id_for(k))); break;
        case TaskKind::RastriginInv: tasks.push_back(rastrigin_inv_task(spec.dim, center, task_id_for(k))); break;
        case TaskKind::ToyClassifier: tasks.push_back(toy_classifier_task(spec.toy, task_id_for(k))); break;
        case TaskKind::External: break;
        }
    }
    for (const auto& t : tasks) {
        if (t.dim != tasks.front().dim)
            invalid("multi-task workloads need tasks of equal dimension");
    }
    return tasks;
}

std::vector<TaskSpec> as_external(const std::vector<TaskSpec>& tasks)
{
    std::vector<TaskSpec> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks)
        out.push_back(external_task(t.dim, t.task_id));
    return out;
}

std::vector<Genome> build_experts(const WorkloadSpec& spec, const std::vector<TaskSpec>& tasks)
{
    if (tasks.empty())
        throw Error(ErrorCode::EmptyTaskList, "no tasks to build experts for");
    const std::size_t dim = tasks.front().dim;
    std::vector<WeightVector> weights;

    if (!spec.experts_path.empty()) {
        std::ifstream in(spec.experts_path);
        if (!in)
            throw Error(ErrorCode::IoError, "cannot read " + spec.experts_path);
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::IoError, spec.experts_path + ": " + e.what());
        }
        if (!doc.is_array())
            throw Error(ErrorCode::InvalidConfig, "experts file must hold an array of weight arrays");
        for (const auto& row : doc) {
            if (!row.is_array())
                throw Error(ErrorCode::InvalidConfig, "experts file must hold an array of weight arrays");
            std::vector<double> v;
            for (const auto& x : row) {
                if (!x.is_number())
                    throw Error(ErrorCode::InvalidConfig, "expert weights must be numbers");
                v.push_back(x.get<double>());
            }
            if (v.size() != dim)
                throw Error(ErrorCode::DimMismatch, "expert dimension does not match the task");
            weights.emplace_back(std::move(v));
        }
    } else {
        // Reference point: the optimum for the synthetic tasks, the class
        // means (nearest-mean weights) for the toy classifier.
        std::vector<double> reference(dim, 0.0);
        const TaskSpec& first = tasks.front();
        if (first.kind == TaskKind::ToyClassifier) {
            reference.clear();
            for (const auto& m : first.dataset->means)
                reference.insert(reference.end(), m.begin(), m.end());
        }
        else if (!first.center.empty())
            reference = first.center;
        Rng rng(spec.expert_seed);
        for (std::uint32_t i = 0; i < spec.n_experts; ++i) {
            std::vector<double> v(dim);
            for (std::size_t j = 0; j < dim; ++j)
                v[j] = rng.normal(reference[j], spec.expert_sigma);
            weights.emplace_back(std::move(v));
        }
    }

    std::vector<Genome> experts;
    IdAllocator ids;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        Lineage lin{Origin::ExpertSeed, {}, {{"expert_index", static_cast<double>(i)}}};
        experts.push_back(make_genome(std::move(weights[i]), std::move(lin), 0, ids));
    }
    return experts;
}

} // namespace popevo
