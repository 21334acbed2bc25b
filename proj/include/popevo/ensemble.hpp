#pragma once

#include "popevo/fitness.hpp"
#include "popevo/population.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace popevo {

struct EnsembleResult {
    /// Aggregated test predictions, one entry per task.
    std::vector<TaskPredictions> final_predictions;
    double ensemble_fitness = 0.0;
    std::vector<GenomeId> member_ids;
    std::vector<double> member_test_fitness;
};

/// The k highest-validation-fitness members, best first, ties to lower id.
std::vector<Member> select_top_k(const Population& pop, std::size_t k);

/// Most frequent value. Ties go to the value held by the highest-fitness
/// member, then the lower member index.
Prediction majority_vote(std::span<const Prediction> column, std::span<const double> member_fitness);

using SimilarityFn = std::function<double(const std::string&, const std::string&)>;

/// Dice coefficient over the sets of whitespace-separated tokens.
double token_dice(const std::string& a, const std::string& b);

/// Index of the medoid: the output maximising the summed similarity to the
/// other outputs (self excluded), ties to the lower index.
std::size_t similarity_select_index(std::span<const std::string> outputs, const SimilarityFn& sim = token_dice);
std::string similarity_select(std::span<const std::string> outputs, const SimilarityFn& sim = token_dice);

/// Scores the members' aggregated test-split predictions. Discrete columns are
/// majority-voted; all-text columns use medoid selection. Throws NoPredictions
/// when the tasks yield no per-sample predictions or no reference labels.
EnsembleResult ensemble_evaluate(const std::vector<Member>& members, Evaluator& evaluator,
                                 const SimilarityFn& sim = token_dice);

} // namespace popevo
