#include "popevo/ensemble.hpp"

#include "popevo/error.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

namespace popevo {

std::vector<Member> select_top_k(const Population& pop, std::size_t k)
{
    if (k < 1 || k > pop.size())
        throw Error(ErrorCode::KOutOfRange,
                    "k=" + std::to_string(k) + " outside [1, " + std::to_string(pop.size()) + "]");
    const auto order = rank_by_fitness(pop.members);
    std::vector<Member> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
        out.push_back(pop.members[order[i]]);
    return out;
}

Prediction majority_vote(std::span<const Prediction> column, std::span<const double> member_fitness)
{
    if (column.empty())
        throw Error(ErrorCode::EmptyInput, "majority vote over an empty column");
    if (member_fitness.size() != column.size())
        throw Error(ErrorCode::DimMismatch, "one fitness value per member is required");

    std::vector<std::size_t> counts(column.size(), 0);
    std::size_t top = 0;
    for (std::size_t i = 0; i < column.size(); ++i) {
        for (std::size_t j = 0; j < column.size(); ++j) {
            if (column[j] == column[i])
                ++counts[i];
        }
        top = std::max(top, counts[i]);
    }
    std::vector<std::size_t> order(column.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return member_fitness[a] > member_fitness[b]; });
    for (std::size_t i : order) {
        if (counts[i] == top)
            return column[i];
    }
    return column.front();
}

double token_dice(const std::string& a, const std::string& b)
{
    auto tokens = [](const std::string& s) {
        std::set<std::string> out;
        std::istringstream in(s);
        std::string tok;
        while (in >> tok)
            out.insert(tok);
        return out;
    };
    const auto ta = tokens(a);
    const auto tb = tokens(b);
    if (ta.empty() && tb.empty())
        return 1.0;
    std::size_t common = 0;
    for (const auto& t : ta)
        common += tb.count(t);
    return 2.0 * static_cast<double>(common) / static_cast<double>(ta.size() + tb.size());
}

std::size_t similarity_select_index(std::span<const std::string> outputs, const SimilarityFn& sim)
{
    if (outputs.empty())
        throw Error(ErrorCode::EmptyInput, "similarity selection over no outputs");
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        double score = 0.0;
        for (std::size_t j = 0; j < outputs.size(); ++j) {
            if (j != i)
                score += sim(outputs[i], outputs[j]);
        }
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

std::string similarity_select(std::span<const std::string> outputs, const SimilarityFn& sim)
{
    return outputs[similarity_select_index(outputs, sim)];
}

EnsembleResult ensemble_evaluate(const std::vector<Member>& members, Evaluator& evaluator, const SimilarityFn& sim)
{
    if (members.empty())
        throw Error(ErrorCode::KOutOfRange, "ensemble needs at least one member");
    if (!evaluator.yields_predictions())
        throw Error(ErrorCode::NoPredictions, "task kind yields no per-sample predictions; use the best single");

    const auto order = rank_by_fitness(members);
    EnsembleResult result;
    std::vector<double> member_fitness;
    std::vector<EvaluationOutcome> outcomes;
    for (std::size_t idx : order) {
        const Member& m = members[idx];
        outcomes.push_back(evaluator.evaluate(m.genome.weights, Split::Test, true));
        if (!outcomes.back().has_predictions())
            throw Error(ErrorCode::NoPredictions, "evaluator returned no predictions");
        result.member_ids.push_back(m.genome.id);
        result.member_test_fitness.push_back(outcomes.back().fitness);
        member_fitness.push_back(*m.fitness);
    }

    const std::size_t n_tasks = outcomes.front().per_task.size();
    double score_sum = 0.0;
    for (std::size_t t = 0; t < n_tasks; ++t) {
        const TaskPredictions& ref = outcomes.front().per_task[t];
        if (ref.labels.empty())
            throw Error(ErrorCode::NoPredictions, "task '" + ref.task_id + "' exposes no reference labels");
        const std::size_t n_samples = ref.predictions.size();
        for (const auto& o : outcomes) {
            if (o.per_task.size() != n_tasks || o.per_task[t].predictions.size() != n_samples)
                throw Error(ErrorCode::DimMismatch, "prediction matrix is not rectangular");
        }

        TaskPredictions agg;
        agg.task_id = ref.task_id;
        agg.labels = ref.labels;
        std::size_t correct = 0;
        std::vector<Prediction> column(outcomes.size());
        for (std::size_t s = 0; s < n_samples; ++s) {
            bool all_text = true;
            for (std::size_t m = 0; m < outcomes.size(); ++m) {
                column[m] = outcomes[m].per_task[t].predictions[s];
                all_text = all_text && std::holds_alternative<std::string>(column[m]);
            }
            Prediction chosen;
            if (all_text) {
                std::vector<std::string> texts;
                texts.reserve(column.size());
                for (const auto& p : column)
                    texts.push_back(std::get<std::string>(p));
                chosen = column[similarity_select_index(texts, sim)];
            } else {
                chosen = majority_vote(column, member_fitness);
            }
            if (s < ref.labels.size() && chosen == ref.labels[s])
                ++correct;
            agg.predictions.push_back(std::move(chosen));
        }
        score_sum += n_samples == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n_samples);
        result.final_predictions.push_back(std::move(agg));
    }
    result.ensemble_fitness = score_sum / static_cast<double>(n_tasks);
    return result;
}

} // namespace popevo
