#include "popevo/analysis.hpp"

#include "popevo/ensemble.hpp"
#include "popevo/error.hpp"
#include "popevo/evolution.hpp"
#include "popevo/persistence.hpp"
#include "popevo/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace popevo {

using nlohmann::json;

// --- special functions -----------------------------------------------------------

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x)
{
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny)
        d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny)
            d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny)
            c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny)
            d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny)
            c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps)
            return h;
    }
    return h;
}

} // namespace

double regularized_incomplete_beta(double a, double b, double x)
{
    if (!(a > 0.0) || !(b > 0.0) || !(x >= 0.0 && x <= 1.0))
        throw Error(ErrorCode::DegenerateInput, "incomplete beta needs a, b > 0 and x in [0, 1]");
    if (x == 0.0 || x == 1.0)
        return x;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof)
{
    if (!(dof > 0.0))
        throw Error(ErrorCode::DegenerateInput, "t distribution needs positive degrees of freedom");
    if (std::isnan(t))
        throw Error(ErrorCode::DegenerateInput, "t statistic is NaN");
    if (std::isinf(t))
        return 0.0;
    const double x = dof / (dof + t * t);
    return std::clamp(regularized_incomplete_beta(dof / 2.0, 0.5, x), 0.0, 1.0);
}

// --- correlation -------------------------------------------------------------------

Correlation pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size())
        throw Error(ErrorCode::DegenerateInput, "correlation inputs differ in length");
    const std::size_t n = x.size();
    if (n < 3)
        throw Error(ErrorCode::DegenerateInput, "correlation needs at least 3 points");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw Error(ErrorCode::DegenerateInput, "correlation input has zero variance");
    const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    Correlation out{r, 0.0};
    if (std::fabs(r) < 1.0) {
        const double dof = static_cast<double>(n - 2);
        out.p_value = student_t_two_sided_p(r * std::sqrt(dof / (1.0 - r * r)), dof);
    }
    return out;
}

std::vector<double> average_ranks(std::span<const double> v)
{
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && v[order[j]] == v[order[i]])
            ++j;
        // Positions i..j-1 (0-based) share rank ((i+1) + j) / 2.
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            ranks[order[k]] = rank;
        i = j;
    }
    return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size())
        throw Error(ErrorCode::DegenerateInput, "correlation inputs differ in length");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

// --- regression --------------------------------------------------------------------

RegressionResult ols_fit(const std::vector<std::vector<double>>& x, std::span<const double> y)
{
    const std::size_t n = x.size();
    if (n != y.size())
        throw Error(ErrorCode::DegenerateInput, "design matrix and response differ in length");
    if (n == 0)
        throw Error(ErrorCode::TooFewRows, "no observations");
    const std::size_t p = x.front().size();
    if (p == 0)
        throw Error(ErrorCode::DegenerateInput, "design matrix has no columns");
    if (n <= p)
        throw Error(ErrorCode::TooFewRows,
                    std::to_string(n) + " rows cannot identify " + std::to_string(p) + " coefficients");

    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd Y(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i].size() != p)
            throw Error(ErrorCode::DegenerateInput, "ragged design matrix");
        for (std::size_t j = 0; j < p; ++j)
            X(i, j) = x[i][j];
        Y(i) = y[i];
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (static_cast<std::size_t>(qr.rank()) < p)
        throw Error(ErrorCode::RankDeficient, "design matrix columns are linearly dependent");
    const Eigen::VectorXd beta = qr.solve(Y);
    const Eigen::VectorXd resid = Y - X * beta;

    // (X^T X)^-1 = P R^-1 R^-T P^T
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv =
        r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), p));
    const Eigen::MatrixXd perm = qr.colsPermutation();
    const Eigen::MatrixXd xtx_inv = perm * (r_inv * r_inv.transpose()) * perm.transpose();

    RegressionResult out;
    out.dof = n - p;
    out.rss = resid.squaredNorm();
    const double sigma2 = out.rss / static_cast<double>(out.dof);
    for (std::size_t j = 0; j < p; ++j) {
        const double b = beta(j);
        const double se = std::sqrt(std::max(0.0, sigma2 * xtx_inv(j, j)));
        double t = 0.0;
        if (se > 0.0)
            t = b / se;
        else if (b != 0.0)
            t = std::copysign(std::numeric_limits<double>::infinity(), b);
        out.coefficients.push_back(b);
        out.std_errors.push_back(se);
        out.t_stats.push_back(t);
        out.p_values.push_back(student_t_two_sided_p(t, static_cast<double>(out.dof)));
    }
    out.residuals.assign(resid.data(), resid.data() + resid.size());
    return out;
}

std::vector<std::vector<double>> with_intercept(const std::vector<std::vector<double>>& predictors)
{
    std::vector<std::vector<double>> out;
    out.reserve(predictors.size());
    for (const auto& row : predictors) {
        std::vector<double> r{1.0};
        r.insert(r.end(), row.begin(), row.end());
        out.push_back(std::move(r));
    }
    return out;
}

// --- sweep -------------------------------------------------------------------------

std::vector<double> default_grid()
{
    std::vector<double> g;
    for (int i = 1; i <= 10; ++i)
        g.push_back(i / 10.0);
    return g;
}

std::vector<SweepRecord> run_sweep(std::span<const double> grid, const RunSpec& base, const SweepOptions& options)
{
    if (options.n_runs == 0)
        return {};
    if (grid.empty())
        throw Error(ErrorCode::InvalidConfig, "sweep grid is empty");
    for (double v : grid) {
        if (!(v >= 0.0 && v <= 1.0))
            throw Error(ErrorCode::InvalidConfig, "sweep grid values must lie in [0, 1]");
    }

    const auto tasks = build_tasks(base.workload);
    const auto experts = build_experts(base.workload, tasks);

    std::vector<SweepRecord> records(options.n_runs);
    Rng stream(options.rng_seed);
    for (std::size_t i = 0; i < options.n_runs; ++i) {
        SweepRecord& r = records[i];
        r.run = i;
        r.c_r = grid[stream.uniform_index(grid.size())];
        r.im_r = grid[stream.uniform_index(grid.size())];
        r.gm_r = grid[stream.uniform_index(grid.size())];
        r.seed = stream.next_u64();
    }

    auto execute = [&](SweepRecord& r) {
        EvolutionConfig cfg = base.evolution;
        cfg.mode = Mode::Genome;
        cfg.crossover_rate = r.c_r;
        cfg.individual_mutation_rate = r.im_r;
        cfg.gene_mutation_rate = r.gm_r;
        cfg.rng_seed = r.seed;
        Evaluator evaluator(tasks);
        const auto start = std::chrono::steady_clock::now();
        auto result = evolve(experts, cfg, evaluator, {});
        r.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        r.test = result->best_test_fitness.value_or(result->best_validation_fitness);
        if (evaluator.yields_predictions()) {
            const std::size_t k = std::min(options.ensemble_k, result->final_population.size());
            if (k >= 1)
                r.ensemble = ensemble_evaluate(select_top_k(result->final_population, k), evaluator).ensemble_fitness;
        }
    };

    const unsigned workers = std::max(1u, options.workers);
    if (workers == 1) {
        for (auto& r : records)
            execute(r);
        return records;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < records.size(); i = next++) {
                    try {
                        execute(records[i]);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure)
                            failure = std::current_exception();
                    }
                }
            });
        }
    }
    if (failure)
        std::rethrow_exception(failure);
    return records;
}

std::string sweep_csv_text(std::span<const SweepRecord> records)
{
    std::string out = std::string(kSweepHeader) + "\n";
    for (const auto& r : records) {
        out += std::to_string(r.run) + "," + std::to_string(r.seed) + "," + format_double(r.c_r) + "," +
               format_double(r.im_r) + "," + format_double(r.gm_r) + "," + format_double(r.test) + "," +
               (r.ensemble ? format_double(*r.ensemble) : std::string()) + "," + format_double(r.time_s) + "\n";
    }
    return out;
}

std::vector<SweepRecord> parse_sweep_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kSweepHeader)
        throw Error(ErrorCode::IoError, "sweep file lacks the expected header");
    std::vector<SweepRecord> out;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos)
                break;
            start = comma + 1;
        }
        if (cells.size() != 8)
            throw Error(ErrorCode::IoError, "sweep row has " + std::to_string(cells.size()) + " fields, expected 8");
        auto num = [&](const std::string& s, auto& v) {
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size())
                throw Error(ErrorCode::IoError, "bad sweep field '" + s + "'");
        };
        SweepRecord r;
        num(cells[0], r.run);
        num(cells[1], r.seed);
        num(cells[2], r.c_r);
        num(cells[3], r.im_r);
        num(cells[4], r.gm_r);
        num(cells[5], r.test);
        if (!cells[6].empty()) {
            double e = 0.0;
            num(cells[6], e);
            r.ensemble = e;
        }
        num(cells[7], r.time_s);
        out.push_back(r);
    }
    return out;
}

// --- sweep statistics --------------------------------------------------------------

SweepStats sweep_statistics(std::span<const SweepRecord> records)
{
    SweepStats stats;
    stats.n = records.size();

    struct Metric {
        std::string short_name;
        std::string panel_name;
        std::vector<const SweepRecord*> rows;
        std::vector<double> values;
    };
    std::vector<Metric> metrics = {
        {"Test", "Test Performance", {}, {}},
        {"Ensemble", "Ensemble Performance", {}, {}},
        {"Time", "Computational Time (s)", {}, {}},
    };
    for (const auto& r : records) {
        metrics[0].rows.push_back(&r);
        metrics[0].values.push_back(r.test);
        if (r.ensemble) {
            metrics[1].rows.push_back(&r);
            metrics[1].values.push_back(*r.ensemble);
        }
        metrics[2].rows.push_back(&r);
        metrics[2].values.push_back(r.time_s);
    }

    const std::vector<std::string> names = {"Cross Rate", "Individual Mutation Rate", "Gene Mutation Rate"};
    auto param = [](const SweepRecord& r, std::size_t p) { return p == 0 ? r.c_r : p == 1 ? r.im_r : r.gm_r; };

    for (std::size_t p = 0; p < names.size(); ++p) {
        for (const auto& m : metrics) {
            std::vector<double> xs;
            for (const auto* r : m.rows)
                xs.push_back(param(*r, p));
            try {
                stats.correlations.push_back({names[p], m.short_name, pearson(xs, m.values), spearman(xs, m.values)});
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateInput)
                    throw;
            }
        }
    }

    for (const auto& m : metrics) {
        std::vector<std::vector<double>> rows;
        for (const auto* r : m.rows)
            rows.push_back({r->c_r, r->im_r, r->gm_r});
        try {
            RegressionPanel panel{m.panel_name, {"Constant"}, ols_fit(with_intercept(rows), m.values)};
            panel.variables.insert(panel.variables.end(), names.begin(), names.end());
            stats.regressions.push_back(std::move(panel));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::RankDeficient && e.code() != ErrorCode::TooFewRows &&
                e.code() != ErrorCode::DegenerateInput)
                throw;
        }
    }
    return stats;
}

std::string significance_stars(double p)
{
    if (p < 0.01)
        return "***";
    if (p < 0.05)
        return "**";
    if (p < 0.1)
        return "*";
    return "";
}

namespace {

std::string fixed(double v, const char* fmt)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

} // namespace

std::string stats_text(const SweepStats& stats)
{
    std::ostringstream out;
    char line[256];
    out << "Correlation analysis (n = " << stats.n << ")\n";
    std::snprintf(line, sizeof line, "%-26s %-9s %-11s %-11s %-11s %-11s\n", "HyperParameter", "Metric", "Pearson r",
                  "p-value", "Spearman rho", "p-value");
    out << line;
    std::string last;
    for (const auto& row : stats.correlations) {
        const std::string r = fixed(row.pearson.coefficient, "%.3f") + significance_stars(row.pearson.p_value);
        const std::string rho = fixed(row.spearman.coefficient, "%.3f") + significance_stars(row.spearman.p_value);
        std::snprintf(line, sizeof line, "%-26s %-9s %-11s %-11s %-11s %-11s\n",
                      row.parameter == last ? "" : row.parameter.c_str(), row.metric.c_str(), r.c_str(),
                      fixed(row.pearson.p_value, "%.3e").c_str(), rho.c_str(),
                      fixed(row.spearman.p_value, "%.3e").c_str());
        out << line;
        last = row.parameter;
    }
    out << "\nRegression results\n";
    std::snprintf(line, sizeof line, "%-26s %-13s %-11s %-12s %-8s\n", "Variable", "Coefficient", "Std. Error",
                  "t-statistic", "p-value");
    out << line;
    for (const auto& panel : stats.regressions) {
        out << "Panel: " << panel.metric << "\n";
        for (std::size_t j = 0; j < panel.variables.size(); ++j) {
            const std::string coef =
                fixed(panel.fit.coefficients[j], "%.4f") + significance_stars(panel.fit.p_values[j]);
            std::snprintf(line, sizeof line, "%-26s %-13s %-11s %-12s %-8s\n", panel.variables[j].c_str(),
                          coef.c_str(), fixed(panel.fit.std_errors[j], "%.4f").c_str(),
                          fixed(panel.fit.t_stats[j], "%.3f").c_str(), fixed(panel.fit.p_values[j], "%.3f").c_str());
            out << line;
        }
    }
    out << "Notes: *** p < 0.01, ** p < 0.05, * p < 0.1\n";
    return out.str();
}

json stats_json(const SweepStats& stats)
{
    json doc;
    doc["n"] = stats.n;
    doc["correlations"] = json::array();
    for (const auto& row : stats.correlations) {
        doc["correlations"].push_back({
            {"parameter", row.parameter},
            {"metric", row.metric},
            {"pearson_r", row.pearson.coefficient},
            {"pearson_p", row.pearson.p_value},
            {"spearman_rho", row.spearman.coefficient},
            {"spearman_p", row.spearman.p_value},
        });
    }
    doc["regressions"] = json::array();
    for (const auto& panel : stats.regressions) {
        json rows = json::array();
        for (std::size_t j = 0; j < panel.variables.size(); ++j) {
            rows.push_back({
                {"variable", panel.variables[j]},
                {"coefficient", panel.fit.coefficients[j]},
                {"std_error", panel.fit.std_errors[j]},
                {"t_statistic", panel.fit.t_stats[j]},
                {"p_value", panel.fit.p_values[j]},
            });
        }
        doc["regressions"].push_back({{"metric", panel.metric}, {"rss", panel.fit.rss}, {"dof", panel.fit.dof},
                                      {"rows", std::move(rows)}});
    }
    return doc;
}

} // namespace popevo
