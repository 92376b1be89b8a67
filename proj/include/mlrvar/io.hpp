#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlrvar/tensor3.hpp"
#include "mlrvar/var_process.hpp"

namespace mlrvar {

// Malformed or unusable input data (ragged CSV, non-numeric cells,
// zero-variance columns, missing files). The CLI maps this to its own exit
// code, distinct from argument and numerical errors.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rectangular numeric CSV with one header row, rows in time order.
TimeSeries read_csv(const std::string& path);
void write_csv(const TimeSeries& ts, const std::string& path);

struct StandardizedSeries {
  TimeSeries values;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // sample standard deviations, T-1 denominator

  Eigen::VectorXd restore(const Eigen::VectorXd& standardized_row) const {
    return (standardized_row.array() * scale.array()).matrix() + mean;
  }
};

// Column-wise zero mean, unit variance; throws DataError naming any
// zero-variance column.
StandardizedSeries standardize(const TimeSeries& ts);

// Fitted-model record produced by the harness and the CLI.
struct FitReport {
  std::string estimator;
  Tensor3d coeff;
  std::optional<TuckerDecompd> decomp;
  std::array<Eigen::Index, 3> ranks{0, 0, 0};
  std::optional<double> lambda;
  Eigen::MatrixXd sigma_eps;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = true;
  std::optional<double> primal_residual;  // constrained estimators only
  double elapsed_seconds = 0.0;
  std::array<Eigen::MatrixXd, 3> support;  // empty when not sparse
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Versioned JSON document: dimensions, ranks, exact coefficient values, the
// decomposition when present, hyperparameters, provenance and a checksum
// over the model payload. Doubles round-trip bit-exactly, so a reloaded
// model forecasts identically.
void save_model(const FitReport& report, const std::string& path);
FitReport load_model(const std::string& path);

// Flat `key = value` configuration text with `#` comments.
using Config = std::map<std::string, std::string>;
Config read_config(const std::string& path);
Config parse_config_text(const std::string& text);

// 64-bit FNV-1a, also used for config provenance hashes.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace mlrvar
