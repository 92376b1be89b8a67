#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mlrvar/tensor3.hpp"
#include "mlrvar/var_process.hpp"

namespace mlrvar {

// Stacked regression form of the VAR: row t of X is
// x_t' = (y_{t-1}', ..., y_{t-P}'), most recent lag first, and the first P
// observations are used as presample only (effective-sample convention).
struct Design {
  Eigen::MatrixXd Y;  // T_eff x N
  Eigen::MatrixXd X;  // T_eff x NP
  Eigen::Index P = 0;

  Eigen::Index t_eff() const { return Y.rows(); }
  Eigen::Index n_series() const { return Y.cols(); }
};

Design build_design(const TimeSeries& ts, Eigen::Index P);

// Cross-products reused by every least-squares style estimator; iteration
// cost becomes independent of T once these are formed.
struct DesignStats {
  Eigen::MatrixXd sxx;  // X'X
  Eigen::MatrixXd sxy;  // X'Y
  double yty = 0.0;     // tr(Y'Y)
  Eigen::Index t_eff = 0;
};

DesignStats compute_stats(const Design& d);

// (1/T_eff) ||Y - X A1'||_F^2 evaluated from the cross-products.
double ls_objective(const DesignStats& s, const Eigen::MatrixXd& a1);

// OLS for the full VAR; throws a rank-deficiency error (with the condition
// number in the message) when X'X is numerically singular.
Tensor3d fit_ols(const Design& d);

// Reduced-rank regression, identity weighting: OLS projected onto the top
// r1 eigenvectors of Yhat' Yhat.
Tensor3d fit_rrr(const Design& d, Eigen::Index r1);

inline double soft_threshold(double x, double lambda) {
  const double mag = std::abs(x) - lambda;
  return mag > 0.0 ? (x > 0.0 ? mag : -mag) : 0.0;
}

// Singular value thresholding, the prox operator of lambda ||.||_*.
Eigen::MatrixXd svt(const Eigen::MatrixXd& m, double lambda);

struct ConvexOptions {
  double tol = 1e-8;      // relative objective change
  int max_iter = 5000;
  bool accelerate = true; // FISTA momentum with restart on objective increase
};

struct ConvexFit {
  Tensor3d coeff;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
};

// Proximal-gradient minimizers of
//   (1/T_eff) ||Y - X A1'||_F^2 + lambda * pen(A1)
// with pen the nuclear norm (fit_nn) or entrywise l1 norm (fit_lasso).
// Objective decreases monotonically; a non-converged result is still
// returned with converged=false.
ConvexFit fit_nn(const Design& d, double lambda, const ConvexOptions& opts = {});
ConvexFit fit_lasso(const Design& d, double lambda, const ConvexOptions& opts = {});

// Robust residual scale 1.4826 * median absolute residual from a light
// ridge prefit.
double robust_residual_scale(const Design& d);

// Rate-based penalty defaults:
//   nuclear norm  sigma_hat * sqrt((N + N P) / T_eff)
//   lasso         sigma_hat * sqrt(2 log(N^2 P) / T_eff)
double default_nn_lambda(const Design& d);
double default_lasso_lambda(const Design& d);

}  // namespace mlrvar
