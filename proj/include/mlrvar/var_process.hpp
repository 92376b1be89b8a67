#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mlrvar/tensor3.hpp"

namespace mlrvar {

// VAR(P) model: coefficient tensor of shape N x N x P whose frontal slices
// are the transition matrices A_1..A_P, plus the innovation covariance.
struct VarModel {
  Tensor3d coeff;
  Eigen::MatrixXd sigma_eps;

  Eigen::Index n_series() const { return coeff.dim(1); }
  Eigen::Index lag_order() const { return coeff.dim(3); }
};

struct TimeSeries {
  Eigen::MatrixXd values;  // T x N, row t = y_t'
  std::vector<std::string> names;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index width() const { return values.cols(); }
};

struct StationarityReport {
  bool stationary = false;
  double spectral_radius = 0.0;
};

// NP x NP companion matrix: top block row (A_1, ..., A_P), shifted identity
// below.
Eigen::MatrixXd companion_matrix(const Tensor3d& coeff);

// Spectral-radius test of the companion matrix against 1 - tol_margin.
StationarityReport is_stationary(const Tensor3d& coeff, double tol_margin = 1e-8);

// Throws std::invalid_argument unless sigma_eps is symmetric positive
// definite and the coefficient tensor is square in its first two modes.
void validate_model(const VarModel& model);

struct Autocovariance {
  std::vector<Eigen::MatrixXd> gamma;  // Gamma_0 .. Gamma_maxlag
  Eigen::MatrixXd gamma_star;          // NP x NP block-Toeplitz [Gamma_{j-i}]
};

// Theoretical second moments of a stationary model. Gamma_0 solves the
// companion-form discrete Lyapunov equation (doubling iteration, quadratic
// convergence); higher lags follow the Yule-Walker recursion.
Autocovariance autocovariance(const VarModel& model, int maxlag);

// Gaussian simulation from zero initial state; the first burn_in draws are
// discarded. noise_scale = 0 turns the recursion deterministic (epsilon = 0
// injection). Deterministic given seed.
TimeSeries simulate(const VarModel& model, Eigen::Index T, Eigen::Index burn_in,
                    std::uint64_t seed, double noise_scale = 1.0);

constexpr Eigen::Index kDefaultBurnIn = 500;

// Extreme eigenvalues of A*(z)A(z) over the unit circle, evaluated on a
// uniform theta grid (grids nest under doubling). Diagnostic only.
std::pair<double, double> mu_extremes(const Tensor3d& coeff, int grid_size = 1024);

// Top-n left singular vectors of an m x m standard normal matrix,
// sign-normalized; columns orthonormal.
Eigen::MatrixXd random_orthonormal(Eigen::Index m, Eigen::Index n,
                                   std::uint64_t seed);

struct SparseFactorSpec {
  Eigen::Index N = 10;
  Eigen::Index P = 5;
  std::array<Eigen::Index, 3> ranks{3, 3, 3};
  std::array<Eigen::Index, 3> sparsity{3, 3, 2};
};

// Block-structured orthonormal factors with disjoint column supports:
// column j of U_1/U_2 holds a random unit s_i-vector on rows
// [j*s_i, (j+1)*s_i); U_3 starts with the first canonical basis vector and
// continues with unit s_3-blocks. Exactly orthogonal by construction.
std::array<Eigen::MatrixXd, 3> generate_sparse_factors(const SparseFactorSpec& spec,
                                                       std::uint64_t seed);

enum class DgpKind {
  superdiagonal_core,
  scaled_random_core,
  sparse_factor,
  dfm1,
  dfm2,
  sfm_equivalent,
};

// Static factor model with VAR(1) latent factors; generative spec for the
// factor-model comparison experiments.
struct DfmSpec {
  Eigen::MatrixXd loadings;      // N x r
  Eigen::MatrixXd transition;    // r x r
  Eigen::MatrixXd sigma_obs;     // N x N
  Eigen::MatrixXd sigma_factor;  // r x r
};

struct DfmSimulation {
  TimeSeries ys;
  Eigen::MatrixXd factors;  // T x r, aligned with ys rows
};

DfmSimulation simulate_dfm(const DfmSpec& spec, Eigen::Index T,
                           Eigen::Index burn_in, std::uint64_t seed);

struct DgpParams {
  Eigen::Index N = 10;
  Eigen::Index P = 5;
  std::array<Eigen::Index, 3> ranks{3, 3, 3};
  std::array<Eigen::Index, 3> sparsity{3, 3, 2};
  Eigen::VectorXd superdiagonal;  // superdiagonal_core only
  int max_attempts = 1000;
};

struct Dgp {
  DgpKind kind = DgpKind::scaled_random_core;
  VarModel model;                     // unset for dfm kinds
  std::optional<TuckerDecompd> truth; // generating decomposition when tensor-based
  std::optional<DfmSpec> dfm;
};

// Draws a data-generating process; tensor-based kinds are redrawn until the
// stationarity condition holds (throws std::runtime_error after
// max_attempts failures).
Dgp make_dgp(DgpKind kind, const DgpParams& params, std::uint64_t seed);

// One-step forecast A_(1) x with x = (y_T', ..., y_{T-P+1}')' read from the
// last P rows of values.
Eigen::VectorXd one_step_forecast(const Tensor3d& coeff,
                                  const Eigen::MatrixXd& values);

}  // namespace mlrvar
