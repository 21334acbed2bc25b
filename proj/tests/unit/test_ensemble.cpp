#include "doctest.h"
#include "support.hpp"

#include "popevo/ensemble.hpp"
#include "popevo/error.hpp"
#include "popevo/rng.hpp"

#include <algorithm>
#include <iterator>
#include <set>
#include <sstream>

using namespace popevo;

namespace {

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::Usage;
}

std::vector<Prediction> ints(std::initializer_list<std::int64_t> xs)
{
    return {xs.begin(), xs.end()};
}

// Scripted evaluator: member m (identified by weights[0]) answers a fixed
// prediction row per split; fitness is its accuracy against the labels.
struct ScriptedBackend : ExternalBackend {
    std::vector<std::vector<Prediction>> rows;
    std::vector<Prediction> labels;
    bool with_labels = true;
    bool with_predictions = true;

    EvaluationOutcome evaluate(const WeightVector& w, const TaskSpec& task, bool want) override
    {
        const auto& row = rows.at(static_cast<std::size_t>(w[0]));
        std::size_t correct = 0;
        for (std::size_t i = 0; i < row.size(); ++i)
            correct += row[i] == labels[i];
        EvaluationOutcome o;
        o.fitness = static_cast<double>(correct) / static_cast<double>(row.size());
        if (want && with_predictions) {
            TaskPredictions tp{task.task_id, row, {}};
            if (with_labels)
                tp.labels = labels;
            o.per_task.push_back(std::move(tp));
        }
        return o;
    }
};

std::set<std::string> token_set(const std::string& s)
{
    std::istringstream in(s);
    return {std::istream_iterator<std::string>(in), std::istream_iterator<std::string>()};
}

double dice_oracle(const std::string& a, const std::string& b)
{
    const auto x = token_set(a), y = token_set(b);
    if (x.empty() && y.empty())
        return 1.0;
    std::vector<std::string> both;
    std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
    return 2.0 * static_cast<double>(both.size()) / static_cast<double>(x.size() + y.size());
}

} // namespace

TEST_CASE("majority vote")
{
    const auto col = ints({1, 2, 1});
    CHECK(std::get<std::int64_t>(majority_vote(col, std::vector<double>{0.1, 0.9, 0.2})) == 1);

    // Three-way tie: the highest-fitness member's value wins.
    const auto tie = ints({4, 5, 6});
    CHECK(std::get<std::int64_t>(majority_vote(tie, std::vector<double>{0.1, 0.9, 0.2})) == 5);
    // Equal fitness too: lower index.
    CHECK(std::get<std::int64_t>(majority_vote(tie, std::vector<double>{0.5, 0.5, 0.5})) == 4);

    // Two-two tie among four members.
    const auto pairs = ints({7, 8, 8, 7});
    CHECK(std::get<std::int64_t>(majority_vote(pairs, std::vector<double>{0.1, 0.2, 0.3, 0.4})) == 7);
    CHECK(std::get<std::int64_t>(majority_vote(pairs, std::vector<double>{0.1, 0.2, 0.5, 0.4})) == 8);

    // Strings and mixed types compare by value and alternative.
    const std::vector<Prediction> text = {std::string("a"), std::string("b"), std::string("b")};
    CHECK(std::get<std::string>(majority_vote(text, std::vector<double>{0.9, 0.1, 0.1})) == "b");
    const std::vector<Prediction> mixed = {std::int64_t{1}, 1.0, 1.0};
    CHECK(std::holds_alternative<double>(majority_vote(mixed, std::vector<double>{0.9, 0.1, 0.1})));

    CHECK(code_of([] { majority_vote(std::vector<Prediction>{}, std::vector<double>{}); }) == ErrorCode::EmptyInput);
    CHECK(code_of([&] { majority_vote(col, std::vector<double>{1.0}); }) == ErrorCode::DimMismatch);
}

TEST_CASE("token dice")
{
    CHECK(token_dice("the cat sat", "the cat sat") == 1.0);
    CHECK(token_dice("a b", "c d") == 0.0);
    CHECK(token_dice("a b c", "a b d") == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(token_dice("a a b", "a") == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(token_dice("", "") == 1.0);
    CHECK(token_dice("", "x") == 0.0);
    CHECK(token_dice("  x\ty ", "y x") == 1.0);
}

TEST_CASE("similarity selection picks the medoid")
{
    const std::vector<std::string> outs = {"the answer is 4", "answer 4", "the answer is four", "banana"};
    CHECK(similarity_select(outs) == "the answer is 4");
    CHECK(similarity_select_index(std::vector<std::string>{"x", "y"}) == 0);
    CHECK(similarity_select_index(std::vector<std::string>{"only"}) == 0);
    CHECK(code_of([] { similarity_select_index(std::vector<std::string>{}); }) == ErrorCode::EmptyInput);

    // Custom similarity: prefer the string nearest in length to the rest.
    const SimilarityFn by_len = [](const std::string& a, const std::string& b) {
        return -std::fabs(static_cast<double>(a.size()) - static_cast<double>(b.size()));
    };
    CHECK(similarity_select(std::vector<std::string>{"a", "aaaa", "aaaaaaaaa"}, by_len) == "aaaa");
}

TEST_CASE("medoid agrees with a brute-force oracle")
{
    const std::vector<std::string> vocab = {"red", "green", "blue", "cat", "dog", "sun"};
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::string> outs(3);
        for (auto& o : outs) {
            const std::size_t n = rng.uniform_index(4);
            for (std::size_t t = 0; t < n; ++t)
                o += (t ? " " : "") + vocab[rng.uniform_index(vocab.size())];
        }
        std::size_t best = 0;
        double best_score = -1.0;
        for (std::size_t i = 0; i < 3; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 3; ++j)
                s += i == j ? 0.0 : dice_oracle(outs[i], outs[j]);
            if (s > best_score + 1e-12) {
                best_score = s;
                best = i;
            }
        }
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                CHECK(token_dice(outs[i], outs[j]) == doctest::Approx(dice_oracle(outs[i], outs[j])).epsilon(1e-15));
        CHECK(similarity_select_index(outs) == best);
    }
}

TEST_CASE("select_top_k ranks by fitness with id ties")
{
    Population pop;
    pop.members = {testing::member({0.0}, 0.5, 9), testing::member({1.0}, 0.9, 4), testing::member({2.0}, 0.5, 2),
                   testing::member({3.0}, 0.1, 1)};
    const auto top = select_top_k(pop, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].genome.id == 4);
    CHECK(top[1].genome.id == 2);
    CHECK(top[2].genome.id == 9);
    CHECK(code_of([&] { select_top_k(pop, 0); }) == ErrorCode::KOutOfRange);
    CHECK(code_of([&] { select_top_k(pop, 5); }) == ErrorCode::KOutOfRange);
}

TEST_CASE("disjoint errors vote to a perfect ensemble")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->labels = ints({0, 1, 2, 0, 1, 2, 0, 1, 2});
    for (std::size_t m = 0; m < 3; ++m) {
        auto row = backend->labels;
        for (std::size_t s = 3 * m; s < 3 * m + 3; ++s)
            row[s] = std::int64_t{9 + static_cast<std::int64_t>(m)};
        backend->rows.push_back(row);
    }
    Evaluator ev({external_task(1, "scripted")}, backend);
    std::vector<Member> members = {testing::member({0.0}, 0.7, 10), testing::member({1.0}, 0.6, 11),
                                   testing::member({2.0}, 0.5, 12)};
    const auto r = ensemble_evaluate(members, ev);
    CHECK(r.member_ids == std::vector<GenomeId>{10, 11, 12});
    for (double f : r.member_test_fitness)
        CHECK(f == doctest::Approx(6.0 / 9.0).epsilon(1e-15));
    CHECK(r.ensemble_fitness == 1.0);
    REQUIRE(r.final_predictions.size() == 1);
    CHECK(r.final_predictions[0].predictions == backend->labels);
    CHECK(r.ensemble_fitness >= *std::max_element(r.member_test_fitness.begin(), r.member_test_fitness.end()));
}

TEST_CASE("identical members reproduce the single member")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->labels = ints({0, 1, 1, 0, 2});
    backend->rows = {ints({0, 1, 0, 0, 1})};
    Evaluator ev({external_task(1, "scripted")}, backend);
    std::vector<Member> members = {testing::member({0.0}, 0.4, 1), testing::member({0.0}, 0.4, 2),
                                   testing::member({0.0}, 0.4, 3)};
    const auto r = ensemble_evaluate(members, ev);
    CHECK(r.ensemble_fitness == r.member_test_fitness[0]);
    CHECK(r.final_predictions[0].predictions == backend->rows[0]);
}

TEST_CASE("text outputs go through medoid selection")
{
    auto backend = std::make_shared<ScriptedBackend>();
    backend->labels = {std::string("four"), std::string("blue sky")};
    backend->rows = {{std::string("four"), std::string("blue sky")},
                     {std::string("four"), std::string("grey sky")},
                     {std::string("five"), std::string("blue sky today")}};
    Evaluator ev({external_task(1, "text")}, backend);
    std::vector<Member> members = {testing::member({0.0}, 0.3, 1), testing::member({1.0}, 0.9, 2),
                                   testing::member({2.0}, 0.5, 3)};
    const auto r = ensemble_evaluate(members, ev);
    // Members are scored in validation-rank order: ids 2, 3, 1.
    CHECK(r.member_ids == std::vector<GenomeId>{2, 3, 1});
    CHECK(std::get<std::string>(r.final_predictions[0].predictions[0]) == "four");
    CHECK(std::get<std::string>(r.final_predictions[0].predictions[1]) == "blue sky");
    CHECK(r.ensemble_fitness == 1.0);
}

TEST_CASE("ensemble over a toy classifier")
{
    ToyClassifierParams p;
    p.validation_size = 40;
    p.test_size = 60;
    Evaluator ev({toy_classifier_task(p, "toy")});
    const auto ds = ToyDataset::generate(p);
    std::vector<double> w;
    for (const auto& m : ds->means)
        w.insert(w.end(), m.begin(), m.end());
    std::vector<Member> members = {testing::member(w, 1.0, 0)};
    const auto r = ensemble_evaluate(members, ev);
    CHECK(r.ensemble_fitness == r.member_test_fitness[0]);
    CHECK(r.final_predictions[0].predictions.size() == 60);
}

TEST_CASE("tasks without predictions or labels raise NoPredictions")
{
    Evaluator sphere({sphere_inv_task(2, {0.0, 0.0}, "s")});
    std::vector<Member> members = {testing::member({0.0, 0.0}, 1.0, 0)};
    CHECK(code_of([&] { ensemble_evaluate(members, sphere); }) == ErrorCode::NoPredictions);

    auto backend = std::make_shared<ScriptedBackend>();
    backend->labels = ints({1});
    backend->rows = {ints({1})};
    backend->with_labels = false;
    Evaluator no_labels({external_task(1, "x")}, backend);
    std::vector<Member> one = {testing::member({0.0}, 1.0, 0)};
    CHECK(code_of([&] { ensemble_evaluate(one, no_labels); }) == ErrorCode::NoPredictions);

    backend->with_labels = true;
    backend->with_predictions = false;
    Evaluator no_preds({external_task(1, "y")}, backend);
    CHECK(code_of([&] { ensemble_evaluate(one, no_preds); }) == ErrorCode::NoPredictions);

    CHECK(code_of([&] { ensemble_evaluate({}, no_preds); }) == ErrorCode::KOutOfRange);
}
