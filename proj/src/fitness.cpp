#include "popevo/fitness.hpp"

#include "popevo/error.hpp"
#include "popevo/rng.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <thread>

namespace popevo {

std::string_view to_string(Split s) noexcept
{
    return s == Split::Validation ? "validation" : "test";
}

Split split_from_string(std::string_view s)
{
    if (s == "validation")
        return Split::Validation;
    if (s == "test")
        return Split::Test;
    throw Error(ErrorCode::InvalidTask, "unknown split '" + std::string(s) + "'");
}

std::string_view to_string(TaskKind k) noexcept
{
    switch (k) {
    case TaskKind::SphereInv: return "sphere_inv";
    case TaskKind::RastriginInv: return "rastrigin_inv";
    case TaskKind::ToyClassifier: return "toy_classifier";
    case TaskKind::External: return "external";
    }
    return "external";
}

TaskKind task_kind_from_string(std::string_view s)
{
    for (TaskKind k : {TaskKind::SphereInv, TaskKind::RastriginInv, TaskKind::ToyClassifier, TaskKind::External}) {
        if (to_string(k) == s)
            return k;
    }
    throw Error(ErrorCode::InvalidTask, "unknown task kind '" + std::string(s) + "'");
}

// --- toy dataset -----------------------------------------------------------

std::shared_ptr<const ToyDataset> ToyDataset::generate(const ToyClassifierParams& params)
{
    if (params.n_classes < 2)
        throw Error(ErrorCode::InvalidTask, "toy classifier needs at least two classes");
    if (params.d_features < 1 || params.validation_size < 1 || params.test_size < 1)
        throw Error(ErrorCode::InvalidTask, "toy classifier sizes must be positive");
    if (!(params.separation > 0.0))
        throw Error(ErrorCode::InvalidTask, "toy classifier separation must be positive");

    auto ds = std::make_shared<ToyDataset>();
    ds->params = params;
    Rng rng(params.dataset_seed);
    const std::size_t d = params.d_features;
    const std::size_t c = params.n_classes;

    ds->means.assign(c, std::vector<double>(d));
    for (auto& m : ds->means) {
        for (double& v : m)
            v = rng.normal();
        double norm = 0.0;
        for (double v : m)
            norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : m)
            v /= norm;
    }
    double min_dist = INFINITY;
    for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = a + 1; b < c; ++b) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = ds->means[a][j] - ds->means[b][j];
                acc += diff * diff;
            }
            min_dist = std::min(min_dist, std::sqrt(acc));
        }
    }
    if (!(min_dist > 1e-6))
        throw Error(ErrorCode::InvalidTask, "class means coincide; increase d_features or change dataset_seed");
    const double scale = params.separation / min_dist;
    for (auto& m : ds->means) {
        for (double& v : m)
            v *= scale;
    }

    const std::size_t n = std::size_t{params.validation_size} + params.test_size;
    ds->features.assign(n, std::vector<double>(d));
    ds->labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::int64_t>(rng.uniform_index(c));
        ds->labels[i] = label;
        for (std::size_t j = 0; j < d; ++j)
            ds->features[i][j] = ds->means[static_cast<std::size_t>(label)][j] + rng.normal();
    }
    return ds;
}

std::size_t ToyDataset::split_begin(Split s) const noexcept
{
    return s == Split::Validation ? 0 : params.validation_size;
}

std::size_t ToyDataset::split_end(Split s) const noexcept
{
    return s == Split::Validation ? params.validation_size
                                  : std::size_t{params.validation_size} + params.test_size;
}

// --- task constructors -----------------------------------------------------

TaskSpec TaskSpec::on(Split s) const
{
    TaskSpec copy = *this;
    copy.split = s;
    return copy;
}

std::string TaskSpec::scope() const
{
    return task_id + "/" + std::string(to_string(split));
}

namespace {

TaskSpec centred_task(TaskKind kind, std::size_t dim, std::vector<double> center, std::string task_id)
{
    if (dim < 1)
        throw Error(ErrorCode::InvalidTask, "task dimension must be positive");
    if (center.empty())
        center.assign(dim, 0.0);
    if (center.size() != dim)
        throw Error(ErrorCode::DimMismatch, "center has wrong dimension");
    TaskSpec t;
    t.task_id = std::move(task_id);
    t.kind = kind;
    t.dim = dim;
    t.center = std::move(center);
    return t;
}

void check_dim(const WeightVector& w, const TaskSpec& task)
{
    if (w.dim() != task.dim)
        throw Error(ErrorCode::DimMismatch, "genome dim " + std::to_string(w.dim()) + " does not match task '" +
                                                task.task_id + "' dim " + std::to_string(task.dim));
}

bool bits_equal(double a, double b) noexcept
{
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

} // namespace

TaskSpec sphere_inv_task(std::size_t dim, std::vector<double> center, std::string task_id)
{
    return centred_task(TaskKind::SphereInv, dim, std::move(center), std::move(task_id));
}

TaskSpec rastrigin_inv_task(std::size_t dim, std::vector<double> center, std::string task_id)
{
    return centred_task(TaskKind::RastriginInv, dim, std::move(center), std::move(task_id));
}

TaskSpec toy_classifier_task(const ToyClassifierParams& params, std::string task_id)
{
    TaskSpec t;
    t.task_id = std::move(task_id);
    t.kind = TaskKind::ToyClassifier;
    t.toy = params;
    t.dataset = ToyDataset::generate(params);
    t.dim = std::size_t{params.d_features} * params.n_classes;
    return t;
}

TaskSpec external_task(std::size_t dim, std::string task_id)
{
    if (dim < 1)
        throw Error(ErrorCode::InvalidTask, "task dimension must be positive");
    TaskSpec t;
    t.task_id = std::move(task_id);
    t.kind = TaskKind::External;
    t.dim = dim;
    return t;
}

// --- scoring -----------------------------------------------------------------

double sphere_inv_fitness(std::span<const double> w, std::span<const double> center) noexcept
{
    double acc = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double z = w[j] - center[j];
        acc += z * z;
    }
    return 1.0 / (1.0 + acc);
}

double rastrigin_inv_fitness(std::span<const double> w, std::span<const double> center) noexcept
{
    double r = 10.0 * static_cast<double>(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double z = w[j] - center[j];
        r += z * z - 10.0 * std::cos(2.0 * std::numbers::pi * z);
    }
    // R is non-negative analytically; rounding near the optimum can dip below zero.
    return 1.0 / (1.0 + std::max(r, 0.0));
}

std::int64_t toy_predict(std::span<const double> w, std::span<const double> x, std::uint32_t n_classes) noexcept
{
    const std::size_t d = x.size();
    std::int64_t best = 0;
    double best_score = -INFINITY;
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        double score = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            score += w[c * d + j] * x[j];
        if (score > best_score) {
            best_score = score;
            best = c;
        }
    }
    return best;
}

EvaluationOutcome evaluate_builtin(const WeightVector& weights, const TaskSpec& task, bool want_predictions)
{
    check_dim(weights, task);
    const auto started = std::chrono::steady_clock::now();
    EvaluationOutcome out;
    switch (task.kind) {
    case TaskKind::SphereInv:
        out.fitness = sphere_inv_fitness(weights.values(), task.center);
        break;
    case TaskKind::RastriginInv:
        out.fitness = rastrigin_inv_fitness(weights.values(), task.center);
        break;
    case TaskKind::ToyClassifier: {
        const ToyDataset& ds = *task.dataset;
        const std::size_t begin = ds.split_begin(task.split);
        const std::size_t end = ds.split_end(task.split);
        TaskPredictions preds;
        preds.task_id = task.task_id;
        std::size_t correct = 0;
        for (std::size_t i = begin; i < end; ++i) {
            const std::int64_t p = toy_predict(weights.values(), ds.features[i], ds.params.n_classes);
            if (p == ds.labels[i])
                ++correct;
            if (want_predictions) {
                preds.predictions.emplace_back(p);
                preds.labels.emplace_back(ds.labels[i]);
            }
        }
        out.fitness = static_cast<double>(correct) / static_cast<double>(end - begin);
        if (want_predictions)
            out.per_task.push_back(std::move(preds));
        break;
    }
    case TaskKind::External:
        throw Error(ErrorCode::InvalidTask, "task '" + task.task_id + "' is external; no in-process scorer");
    }
    out.evaluation_cost = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return out;
}

bool same_result(const EvaluationOutcome& a, const EvaluationOutcome& b) noexcept
{
    if (!bits_equal(a.fitness, b.fitness) || a.per_task.size() != b.per_task.size())
        return false;
    for (std::size_t i = 0; i < a.per_task.size(); ++i) {
        const auto& pa = a.per_task[i];
        const auto& pb = b.per_task[i];
        if (pa.task_id != pb.task_id || pa.predictions.size() != pb.predictions.size() ||
            pa.labels != pb.labels)
            return false;
        for (std::size_t j = 0; j < pa.predictions.size(); ++j) {
            const auto* da = std::get_if<double>(&pa.predictions[j]);
            const auto* db = std::get_if<double>(&pb.predictions[j]);
            if (da && db) {
                if (!bits_equal(*da, *db))
                    return false;
            } else if (pa.predictions[j] != pb.predictions[j]) {
                return false;
            }
        }
    }
    return true;
}

// --- cache -------------------------------------------------------------------

std::optional<EvaluationOutcome> FitnessCache::lookup(const CacheKey& key, bool need_predictions)
{
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end() || (need_predictions && !it->second.has_predictions())) {
        ++misses_;
        return std::nullopt;
    }
    ++hits_;
    return it->second;
}

void FitnessCache::insert(const CacheKey& key, EvaluationOutcome outcome)
{
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end())
        entries_.emplace(key, std::move(outcome));
    else if (outcome.has_predictions() && !it->second.has_predictions())
        it->second = std::move(outcome);
}

std::uint64_t FitnessCache::hits() const noexcept
{
    std::lock_guard lock(mu_);
    return hits_;
}

std::uint64_t FitnessCache::misses() const noexcept
{
    std::lock_guard lock(mu_);
    return misses_;
}

std::size_t FitnessCache::size() const
{
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::map<CacheKey, EvaluationOutcome> FitnessCache::snapshot() const
{
    std::lock_guard lock(mu_);
    return entries_;
}

void FitnessCache::restore(std::map<CacheKey, EvaluationOutcome> entries, std::uint64_t hits, std::uint64_t misses)
{
    std::lock_guard lock(mu_);
    entries_ = std::move(entries);
    hits_ = hits;
    misses_ = misses;
}

// --- evaluation entry points -------------------------------------------------

namespace {

EvaluationOutcome evaluate_weights(const WeightVector& weights, const TaskSpec& task, FitnessCache& cache,
                                   ExternalBackend* backend, bool want_predictions, bool& hit)
{
    check_dim(weights, task);
    const CacheKey key = weights_fingerprint(weights, task.scope());
    if (auto cached = cache.lookup(key, want_predictions)) {
        hit = true;
        return *std::move(cached);
    }
    hit = false;
    EvaluationOutcome out;
    if (task.kind == TaskKind::External) {
        if (backend == nullptr)
            throw Error(ErrorCode::ExternalEvaluatorFailure,
                        "task '" + task.task_id + "' is external but no evaluator endpoint is configured");
        out = backend->evaluate(weights, task, want_predictions);
    } else {
        out = evaluate_builtin(weights, task, want_predictions);
    }
    cache.insert(key, out);
    return out;
}

EvaluationOutcome evaluate_weights_multi(const WeightVector& weights, const std::vector<TaskSpec>& tasks,
                                         FitnessCache& cache, ExternalBackend* backend, bool want_predictions,
                                         bool& all_hit)
{
    if (tasks.empty())
        throw Error(ErrorCode::EmptyTaskList, "at least one task is required");
    if (tasks.size() == 1)
        return evaluate_weights(weights, tasks.front(), cache, backend, want_predictions, all_hit);
    EvaluationOutcome out;
    double sum = 0.0;
    all_hit = true;
    for (const TaskSpec& t : tasks) {
        bool hit = false;
        EvaluationOutcome one = evaluate_weights(weights, t, cache, backend, want_predictions, hit);
        all_hit = all_hit && hit;
        sum += one.fitness;
        out.evaluation_cost += one.evaluation_cost;
        for (auto& p : one.per_task)
            out.per_task.push_back(std::move(p));
    }
    out.fitness = sum / static_cast<double>(tasks.size());
    return out;
}

} // namespace

EvaluationOutcome evaluate(const Genome& genome, const TaskSpec& task, FitnessCache& cache, ExternalBackend* backend,
                           bool want_predictions, bool* was_hit)
{
    bool hit = false;
    auto out = evaluate_weights(genome.weights, task, cache, backend, want_predictions, hit);
    if (was_hit)
        *was_hit = hit;
    return out;
}

EvaluationOutcome evaluate_multi(const Genome& genome, const std::vector<TaskSpec>& tasks, FitnessCache& cache,
                                 ExternalBackend* backend, bool want_predictions, bool* was_hit)
{
    bool hit = false;
    auto out = evaluate_weights_multi(genome.weights, tasks, cache, backend, want_predictions, hit);
    if (was_hit)
        *was_hit = hit;
    return out;
}

Evaluator::Evaluator(std::vector<TaskSpec> tasks, std::shared_ptr<ExternalBackend> backend)
    : tasks_(std::move(tasks)), backend_(std::move(backend))
{
    if (tasks_.empty())
        throw Error(ErrorCode::EmptyTaskList, "at least one task is required");
    for (const TaskSpec& t : tasks_) {
        if (t.dim != tasks_.front().dim)
            throw Error(ErrorCode::DimMismatch, "all tasks must share one genome dimension");
    }
}

bool Evaluator::yields_predictions() const noexcept
{
    return std::all_of(tasks_.begin(), tasks_.end(), [](const TaskSpec& t) {
        return t.kind == TaskKind::ToyClassifier || t.kind == TaskKind::External;
    });
}

EvaluationOutcome Evaluator::evaluate_uncounted(const WeightVector& weights, Split split, bool want_predictions,
                                                bool& hit)
{
    std::vector<TaskSpec> split_tasks;
    split_tasks.reserve(tasks_.size());
    for (const TaskSpec& t : tasks_)
        split_tasks.push_back(t.on(split));
    return evaluate_weights_multi(weights, split_tasks, cache_, backend_.get(), want_predictions, hit);
}

EvaluationOutcome Evaluator::evaluate(const WeightVector& weights, Split split, bool want_predictions)
{
    bool hit = false;
    auto out = evaluate_uncounted(weights, split, want_predictions, hit);
    ++evaluations_;
    if (hit)
        ++hits_;
    return out;
}

std::vector<EvaluationOutcome> Evaluator::evaluate_batch(const std::vector<const WeightVector*>& batch, Split split)
{
    std::vector<EvaluationOutcome> out(batch.size());
    const bool parallel = workers_ > 1 && tasks_.size() == 1 && tasks_.front().kind != TaskKind::External &&
                          batch.size() > 1;
    if (!parallel) {
        for (std::size_t i = 0; i < batch.size(); ++i)
            out[i] = evaluate(*batch[i], split);
        return out;
    }

    // Hit/miss status is decided serially up front, so the counters match a
    // serial run even when the batch contains duplicates.
    const TaskSpec task = tasks_.front().on(split);
    std::vector<CacheKey> keys(batch.size());
    std::vector<std::ptrdiff_t> source(batch.size(), -1);
    std::vector<std::size_t> to_compute;
    std::map<CacheKey, std::size_t> first_seen;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        check_dim(*batch[i], task);
        keys[i] = weights_fingerprint(*batch[i], task.scope());
        ++evaluations_;
        if (auto it = first_seen.find(keys[i]); it != first_seen.end()) {
            source[i] = static_cast<std::ptrdiff_t>(it->second);
            ++hits_;
        } else if (auto cached = cache_.lookup(keys[i], false)) {
            out[i] = *std::move(cached);
            first_seen.emplace(keys[i], i);
            ++hits_;
        } else {
            first_seen.emplace(keys[i], i);
            to_compute.push_back(i);
        }
    }

    std::vector<std::exception_ptr> failure(to_compute.size());
    const unsigned n_threads = std::min<unsigned>(workers_, static_cast<unsigned>(std::max<std::size_t>(to_compute.size(), 1)));
    {
        std::vector<std::jthread> pool;
        pool.reserve(n_threads);
        for (unsigned w = 0; w < n_threads; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t k = w; k < to_compute.size(); k += n_threads) {
                    try {
                        out[to_compute[k]] = evaluate_builtin(*batch[to_compute[k]], task, false);
                    } catch (...) {
                        failure[k] = std::current_exception();
                    }
                }
            });
        }
    }
    for (std::size_t k = 0; k < to_compute.size(); ++k) {
        if (failure[k])
            std::rethrow_exception(failure[k]);
        cache_.insert(keys[to_compute[k]], out[to_compute[k]]);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (source[i] >= 0)
            out[i] = out[static_cast<std::size_t>(source[i])];
    }
    return out;
}

} // namespace popevo
