#pragma once

#include "popevo/genotype.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace popevo {

enum class Split { Validation, Test };
enum class TaskKind { SphereInv, RastriginInv, ToyClassifier, External };

std::string_view to_string(Split s) noexcept;
Split split_from_string(std::string_view s);
std::string_view to_string(TaskKind k) noexcept;
TaskKind task_kind_from_string(std::string_view s);

/// One per-sample output: a class label, a raw numeric output, or free text.
using Prediction = std::variant<std::int64_t, double, std::string>;

struct ToyClassifierParams {
    std::uint32_t d_features = 10;
    std::uint32_t n_classes = 3;
    std::uint32_t validation_size = 200;
    std::uint32_t test_size = 1000;
    std::uint64_t dataset_seed = 0;
    /// Minimum distance between class means in units of the unit blob noise.
    double separation = 6.0;

    friend bool operator==(const ToyClassifierParams&, const ToyClassifierParams&) = default;
};

/// Gaussian blobs with equal-norm class means, so the linear scorer `W_c = mu_c`
/// is exactly the nearest-mean classifier.
///
/// Generation, from a single `Rng(dataset_seed)` stream:
///   1. for each class c, for each feature j: m[c][j] = normal()
///   2. normalise every m[c] to unit length, then scale all of them by
///      `separation / min_{a<b} |m[a] - m[b]|`
///   3. for each sample i in [0, validation_size + test_size):
///        label = uniform_index(n_classes); x_j = mean[label][j] + normal()
/// The first `validation_size` samples form the validation split, the rest the
/// test split.
struct ToyDataset {
    ToyClassifierParams params;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> features;
    std::vector<std::int64_t> labels;

    static std::shared_ptr<const ToyDataset> generate(const ToyClassifierParams& params);

    std::size_t split_begin(Split s) const noexcept;
    std::size_t split_end(Split s) const noexcept;
};

struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::SphereInv;
    std::size_t dim = 1;
    std::vector<double> center;
    ToyClassifierParams toy;
    std::shared_ptr<const ToyDataset> dataset;
    Split split = Split::Validation;

    TaskSpec on(Split s) const;
    /// Cache scope: the task id qualified by split.
    std::string scope() const;
};

TaskSpec sphere_inv_task(std::size_t dim, std::vector<double> center, std::string task_id);
TaskSpec rastrigin_inv_task(std::size_t dim, std::vector<double> center, std::string task_id);
TaskSpec toy_classifier_task(const ToyClassifierParams& params, std::string task_id);
TaskSpec external_task(std::size_t dim, std::string task_id);

struct TaskPredictions {
    std::string task_id;
    std::vector<Prediction> predictions;
    /// Reference labels for the same samples; empty when the evaluator does not
    /// expose them.
    std::vector<Prediction> labels;

    friend bool operator==(const TaskPredictions&, const TaskPredictions&) = default;
};

struct EvaluationOutcome {
    double fitness = 0.0;
    std::vector<TaskPredictions> per_task;
    double evaluation_cost = 0.0;

    bool has_predictions() const noexcept { return !per_task.empty(); }
};

/// Bitwise comparison of fitness and predictions; ignores evaluation_cost.
bool same_result(const EvaluationOutcome& a, const EvaluationOutcome& b) noexcept;

/// In-process scoring for the built-in kinds. Throws DimMismatch, InvalidTask
/// for `external`.
EvaluationOutcome evaluate_builtin(const WeightVector& weights, const TaskSpec& task, bool want_predictions);

double sphere_inv_fitness(std::span<const double> w, std::span<const double> center) noexcept;
double rastrigin_inv_fitness(std::span<const double> w, std::span<const double> center) noexcept;
std::int64_t toy_predict(std::span<const double> w, std::span<const double> x, std::uint32_t n_classes) noexcept;

/// Bridge to an out-of-process evaluator; implemented by the protocol client.
class ExternalBackend {
public:
    virtual ~ExternalBackend() = default;
    virtual EvaluationOutcome evaluate(const WeightVector& weights, const TaskSpec& task, bool want_predictions) = 0;
};

class FitnessCache {
public:
    std::optional<EvaluationOutcome> lookup(const CacheKey& key, bool need_predictions);
    void insert(const CacheKey& key, EvaluationOutcome outcome);

    std::uint64_t hits() const noexcept;
    std::uint64_t misses() const noexcept;
    std::size_t size() const;

    /// Sorted by key for deterministic serialisation.
    std::map<CacheKey, EvaluationOutcome> snapshot() const;
    void restore(std::map<CacheKey, EvaluationOutcome> entries, std::uint64_t hits, std::uint64_t misses);

private:
    mutable std::mutex mu_;
    std::map<CacheKey, EvaluationOutcome> entries_;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
};

/// Single-task evaluation through the cache. `backend` is required for
/// `external` tasks only.
EvaluationOutcome evaluate(const Genome& genome, const TaskSpec& task, FitnessCache& cache,
                           ExternalBackend* backend = nullptr, bool want_predictions = false,
                           bool* was_hit = nullptr);

/// Mean of per-task fitness; predictions are kept per task.
EvaluationOutcome evaluate_multi(const Genome& genome, const std::vector<TaskSpec>& tasks, FitnessCache& cache,
                                 ExternalBackend* backend = nullptr, bool want_predictions = false,
                                 bool* was_hit = nullptr);

/// The engine-facing fitness function: a fixed task list, a cache and an
/// optional external backend. Counts evaluations and full cache hits.
class Evaluator {
public:
    explicit Evaluator(std::vector<TaskSpec> tasks, std::shared_ptr<ExternalBackend> backend = nullptr);

    EvaluationOutcome evaluate(const WeightVector& weights, Split split, bool want_predictions = false);

    /// Evaluates in submission order. With workers > 1 and no external task,
    /// evaluations run on a thread pool; results are identical to serial.
    std::vector<EvaluationOutcome> evaluate_batch(const std::vector<const WeightVector*>& batch, Split split);

    void set_workers(unsigned workers) noexcept { workers_ = workers == 0 ? 1 : workers; }

    const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }
    std::size_t dim() const noexcept { return tasks_.front().dim; }
    bool yields_predictions() const noexcept;

    FitnessCache& cache() noexcept { return cache_; }
    std::uint64_t evaluations() const noexcept { return evaluations_; }
    std::uint64_t cache_hits() const noexcept { return hits_; }
    void restore_counters(std::uint64_t evaluations, std::uint64_t hits) noexcept
    {
        evaluations_ = evaluations;
        hits_ = hits;
    }

private:
    EvaluationOutcome evaluate_uncounted(const WeightVector& weights, Split split, bool want_predictions,
                                         bool& hit);

    std::vector<TaskSpec> tasks_;
    std::shared_ptr<ExternalBackend> backend_;
    FitnessCache cache_;
    unsigned workers_ = 1;
    std::uint64_t evaluations_ = 0;
    std::uint64_t hits_ = 0;
};

} // namespace popevo
