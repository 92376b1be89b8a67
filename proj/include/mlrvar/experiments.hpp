#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlrvar/io.hpp"
#include "mlrvar/mlr.hpp"
#include "mlrvar/regression_core.hpp"
#include "mlrvar/selection.hpp"
#include "mlrvar/shorr.hpp"
#include "mlrvar/var_process.hpp"

namespace mlrvar {

// How a penalty level is chosen for the penalized estimators:
//   "<number>"     fixed value
//   "rate[:c0]"    c0 * rate-based default (default c0 = 1)
//   "bic[:g1,g2]"  BIC over the grid; default grid scales the rate value by
//                  {0.25, 0.5, 1, 2, 4}
struct FitRequest {
  std::string estimator;  // ols | rrr | mlr | shorr | nn | lasso
  std::array<Eigen::Index, 3> ranks{0, 0, 0};
  bool auto_ranks = false;     // ranks from the ridge-ratio pipeline
  std::string lambda_rule = "bic";
  int n_starts = 1;            // randomized restarts for mlr / shorr
  std::uint64_t seed = 0;
  MlrOptions mlr;
  ShorrOptions shorr;
  ConvexOptions convex;
};

// Fits any of the supported estimators on a prepared design and assembles
// the report (selected ranks and penalty, residual covariance, timing).
FitReport fit_estimator(const Design& d, const FitRequest& req);

enum class ExperimentKind {
  rank_consistency,
  bias_variance,
  gamma_scaling,
  estimator_comparison,
  factor_comparison,
  rolling_forecast,
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::rank_consistency;
  DgpKind dgp_kind = DgpKind::superdiagonal_core;
  DgpParams dgp;
  std::vector<Eigen::Index> t_grid;
  std::vector<double> gamma_grid;  // gamma_scaling
  int replications = 200;
  std::uint64_t seed = 1;
  std::vector<std::string> estimators{"shorr", "mlr", "nn", "lasso"};
  std::string lambda_rule = "bic";
  int threads = 1;
  ShorrOptions shorr;
  // rolling_forecast on synthetic data: training windows end at
  // [first_end, last_end], expanding unless window_length > 0
  Eigen::Index first_end = 0, last_end = 0, window_length = 0;
};

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ExperimentResult {
  ResultTable summary;              // one row per design point
  ResultTable raw;                  // one row per replication
  std::vector<std::uint64_t> rep_seeds;
  int failures = 0;
};

// Executes the replication loop of the requested experiment; per-replication
// failures are tolerated up to 10% of the total, and aggregation is a fixed
// in-order reduction so threading never changes results.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct RollingSpec {
  Eigen::Index P = 4;
  Eigen::Index first_end = 0;      // fit on rows [start, end), forecast row end
  Eigen::Index last_end = 0;       // inclusive
  Eigen::Index window_length = 0;  // 0 = expanding from the first row
  std::vector<std::string> estimators{"shorr", "mlr", "ols"};
  std::array<Eigen::Index, 3> ranks{0, 0, 0};
  bool auto_ranks = true;          // select once, on the first window
  std::string lambda_rule = "bic";
  std::uint64_t seed = 0;
  ShorrOptions shorr;
};

struct RollingResult {
  std::vector<std::string> estimators;
  std::vector<double> l2;    // norms of the stacked forecast-error vectors
  std::vector<double> linf;
  std::array<Eigen::Index, 3> ranks_used{0, 0, 0};
  int windows_used = 0;
  int windows_skipped = 0;
};

// One-step rolling forecasts: for each window end, fit every estimator on
// the history, predict the next observation, and accumulate error vectors.
// A window is skipped (and counted) when a fit fails.
RollingResult rolling_forecast(const TimeSeries& ts, const RollingSpec& spec);

void write_table_csv(const ResultTable& table, const std::string& path);
void write_summary_json(const ExperimentSpec& spec, const ExperimentResult& result,
                        const std::string& path);

// Runs fn(0..n_tasks-1) on up to `threads` workers (serial when <= 1).
void parallel_for(int n_tasks, int threads, const std::function<void(int)>& fn);

}  // namespace mlrvar
