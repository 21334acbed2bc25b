#pragma once

#include "popevo/config.hpp"
#include "popevo/workload.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace popevo {

// --- special functions -----------------------------------------------------------

/// I_x(a, b), evaluated with a modified-Lentz continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

// --- correlation -------------------------------------------------------------------

struct Correlation {
    double coefficient = 0.0;
    double p_value = 1.0;
};

/// Sample correlation with a two-sided p-value from
/// t = r * sqrt((n - 2) / (1 - r^2)). Needs n >= 3 and non-zero variance in
/// both inputs (DegenerateInput otherwise).
Correlation pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> v);

/// Pearson on average ranks.
Correlation spearman(std::span<const double> x, std::span<const double> y);

// --- regression --------------------------------------------------------------------

struct RegressionResult {
    std::vector<double> coefficients;
    std::vector<double> std_errors;
    std::vector<double> t_stats;
    std::vector<double> p_values;
    std::vector<double> residuals;
    double rss = 0.0;
    std::size_t dof = 0;
};

/// Least squares via column-pivoted Householder QR. `x` holds one row per
/// observation and must include the intercept column. Throws TooFewRows when
/// rows <= columns and RankDeficient when the columns are dependent.
RegressionResult ols_fit(const std::vector<std::vector<double>>& x, std::span<const double> y);

/// Prepends an intercept column to the predictor rows.
std::vector<std::vector<double>> with_intercept(const std::vector<std::vector<double>>& predictors);

// --- sweep -------------------------------------------------------------------------

struct SweepRecord {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    double c_r = 0.0;
    double im_r = 0.0;
    double gm_r = 0.0;
    double test = 0.0;
    std::optional<double> ensemble;
    double time_s = 0.0;
};

/// {0.1, 0.2, ..., 1.0}, each value the double nearest the decimal.
std::vector<double> default_grid();

struct SweepOptions {
    std::size_t n_runs = 50;
    std::uint64_t rng_seed = 47;
    std::size_t ensemble_k = 3;
    /// Runs executing at once; records are reported in run order either way.
    unsigned workers = 1;
};

/// For each run draws (c_r, im_r, gm_r) from the grid and a run seed from one
/// stream seeded with `rng_seed`, then evolves in GENOME mode. Records the
/// test fitness of g, the top-k ensemble test fitness when the tasks yield
/// predictions, and the run's wall-clock time.
std::vector<SweepRecord> run_sweep(std::span<const double> grid, const RunSpec& base, const SweepOptions& options);

inline constexpr const char* kSweepHeader = "run,seed,c_r,im_r,gm_r,test,ensemble,time_s";

std::string sweep_csv_text(std::span<const SweepRecord> records);
std::vector<SweepRecord> parse_sweep_csv(const std::string& text);

// --- sweep statistics --------------------------------------------------------------

struct CorrelationRow {
    std::string parameter;
    std::string metric;
    Correlation pearson;
    Correlation spearman;
};

struct RegressionPanel {
    std::string metric;
    /// "Constant" followed by the predictor names.
    std::vector<std::string> variables;
    RegressionResult fit;
};

struct SweepStats {
    std::size_t n = 0;
    std::vector<CorrelationRow> correlations;
    std::vector<RegressionPanel> regressions;
};

/// Correlations of each rate with test, ensemble and time, and one OLS panel
/// per metric. Metrics that are missing or constant are skipped.
SweepStats sweep_statistics(std::span<const SweepRecord> records);

/// *** p < 0.01, ** p < 0.05, * p < 0.1.
std::string significance_stars(double p);

std::string stats_text(const SweepStats& stats);
nlohmann::json stats_json(const SweepStats& stats);

} // namespace popevo
