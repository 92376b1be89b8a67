#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mlrvar/regression_core.hpp"
#include "mlrvar/tensor3.hpp"
#include "mlrvar/var_process.hpp"

namespace mlrvar {

struct MlrOptions {
  double tol = 1e-8;      // relative objective change across a full cycle
  int max_cycles = 500;
  double ridge = 1e-10;   // relative ridge for degenerate subproblem Grams
};

enum class MlrInitStrategy { ols, rrr, nn };

struct MlrFit {
  TuckerDecompd decomp;               // HOSVD-identified components
  Tensor3d coeff;                     // reconstruction, exact multilinear ranks
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
  bool ridge_used = false;
};

// Alternating least squares for the rank-constrained VAR estimator: cycles
// closed-form U1, U2, U3 and core updates (each a least squares in the
// vectorized block, solved from X'X and X'Y cross-products so the per-cycle
// cost does not grow with T), then identifies the components by a final
// truncated HOSVD with the positive-first-element sign convention.
MlrFit fit_mlr(const Design& d, std::array<Eigen::Index, 3> ranks,
               const Tensor3d& init, const MlrOptions& opts = {});

// Strategy-based initialization: ols / rrr / nn preliminary estimate.
MlrFit fit_mlr(const Design& d, std::array<Eigen::Index, 3> ranks,
               MlrInitStrategy strategy, const MlrOptions& opts = {});

// Default initialization: rrr when T_eff >= N*P, otherwise nn.
MlrFit fit_mlr(const Design& d, std::array<Eigen::Index, 3> ranks,
               const MlrOptions& opts = {});

// pre + T_eff^{-1/2} * (standard normal tensor), one draw per start.
// A nonnegative scale_override replaces the T_eff^{-1/2} factor.
std::vector<Tensor3d> random_perturbed_init(const Tensor3d& pre,
                                            Eigen::Index t_eff, int n_starts,
                                            std::uint64_t seed,
                                            double scale_override = -1.0);

// Runs fit_mlr from each perturbed start and keeps the smallest final
// objective.
MlrFit fit_mlr_multistart(const Design& d, std::array<Eigen::Index, 3> ranks,
                          const Tensor3d& pre, int n_starts, std::uint64_t seed,
                          const MlrOptions& opts = {});

// Asymptotic covariances of sqrt(T) vec for the rank-restricted, rank-1-mode
// restricted and unrestricted least squares estimators, via the Jacobian of
// the overparameterized map and the information matrix J = Sigma^-1 (x)
// Gamma*. H and J are expressed in the parameter ordering that makes
// J^{-1} the OLS covariance (predictor index fast, response index slow).
struct AsymptoticCov {
  Eigen::MatrixXd sigma_mlr;
  Eigen::MatrixXd sigma_rrr;
  Eigen::MatrixXd sigma_ols;
  Eigen::MatrixXd H;  // N^2 P x (r1 r2 r3 + N r1 + N r2 + P r3)
  Eigen::MatrixXd J;  // N^2 P x N^2 P
};

AsymptoticCov asymptotic_cov(const VarModel& model, const TuckerDecompd& decomp,
                             Eigen::Index r1_for_rrr);

struct EstimatorMoments {
  double sq_bias = 0.0;  // square of the average elementwise bias
  double evar = 0.0;     // mean Monte Carlo variance of sqrt(T_eff) * coefficients
  double avar = 0.0;     // mean diagonal of the asymptotic covariance
};

struct EmpiricalVsAsymptotic {
  EstimatorMoments ols, rrr, mlr;
  int failures = 0;
};

// Monte Carlo check of the asymptotic covariances at the true parameter
// values of a fixed data-generating model.
EmpiricalVsAsymptotic empirical_vs_asymptotic(const VarModel& dgp,
                                              std::array<Eigen::Index, 3> ranks,
                                              Eigen::Index T, int reps,
                                              std::uint64_t seed);

}  // namespace mlrvar
