#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mlrvar/regression_core.hpp"
#include "mlrvar/tensor3.hpp"

namespace mlrvar {

// Nearest orthonormal matrix in Frobenius norm: U V' from the thin SVD of c.
// p >= r required; a numerically rank-deficient input sets the flag (ties
// broken by the SVD backend).
Eigen::MatrixXd procrustes(const Eigen::MatrixXd& c, bool* rank_deficient = nullptr);

struct SparseOrthOptions {
  double kappa = 1.0;     // augmentation weight of the B = W split
  double soc_rho = 1.0;   // augmentation weight of the orthogonality split
  double tol = 1e-7;      // primal residual ||B - W||_F and objective change
  int max_iter = 100;
  double soc_tol = 1e-9;  // ||B - Q||_F inside the orthogonality split
  int soc_max_iter = 50;
  double zero_cutoff = 1e-8;
};

struct SparseOrthResult {
  Eigen::MatrixXd solution;   // sparse, orthonormal up to the zero cutoff
  int iterations = 0;
  bool converged = false;
  double primal_residual = 0.0;  // final ||B - W||_F
  int restarted_columns = 0;
};

// l1-penalized least squares under an orthonormality constraint,
//   min (1/n)||y - X vec(B)||_2^2 + lambda_eff ||B||_1  s.t.  B'B = I,
// by operator splitting: a B-half that solves the orthogonality-constrained
// quadratic with an inner split (unconstrained solve + procrustes + dual),
// a soft-thresholding W-half, and a dual update. Returns the sparse W
// iterate re-orthonormalized, entries below the cutoff zeroed.
SparseOrthResult sparse_orthogonal_regress(const Eigen::VectorXd& y,
                                           const Eigen::MatrixXd& x,
                                           std::pair<Eigen::Index, Eigen::Index> shape,
                                           double lambda_eff,
                                           const SparseOrthOptions& opts = {});

struct ShorrOptions {
  std::array<double, 3> rho{1.0, 1.0, 1.0};  // core-splitting weights
  double outer_tol = 1e-6;
  int outer_max_iter = 500;
  SparseOrthOptions inner;
  double divergence_factor = 10.0;
  int divergence_patience = 20;
  // double the splitting weights when, over a stall_window of iterations,
  // the penalized objective rises (oscillation) or both the objective and
  // the primal residual have stopped moving
  bool adaptive_penalty = true;
  int stall_window = 10;
  double stall_factor = 0.9;
};

struct ShorrFit {
  TuckerDecompd decomp;  // all-orthogonal core, sparse near-orthonormal factors
  Tensor3d coeff;
  std::vector<double> objective_trace;  // penalized objective per outer cycle
  int iterations = 0;
  bool converged = false;
  double primal_residual = 0.0;        // final max_i ||G_(i) - D_i V_i'||_F
  double inner_primal_residual = 0.0;  // max over the last round of factor updates
  double lambda = 0.0;
  std::array<Eigen::MatrixXd, 3> support;  // 0/1 sparsity pattern of each factor
};

// Sparsity-inducing orthogonal Tucker VAR estimate: outer ADMM cycling
// penalized factor updates (joint penalty factorized as
// lambda_i = lambda * prod_{j != i} ||U_j||_1), an unconstrained core update
// augmented toward diagonal-times-orthonormal matricizations, closed-form
// D_i, procrustes V_i, and dual ascent. Stops when every core primal
// residual and the relative objective change fall below outer_tol.
ShorrFit fit_shorr(const Design& d, std::array<Eigen::Index, 3> ranks,
                   double lambda, const Tensor3d& init,
                   const ShorrOptions& opts = {});

// Default initialization: nuclear-norm estimate at the rate-based lambda.
ShorrFit fit_shorr(const Design& d, std::array<Eigen::Index, 3> ranks,
                   double lambda, const ShorrOptions& opts = {});

// Randomized restarts around the nuclear-norm estimate,
//   init_k = A_NN + sqrt(NP/T_eff) * T_k,  T_k entries iid N(0, 1/(N^2 P)),
// keeping the fit with the smallest penalized objective. Per-start failures
// are tolerated while at least one start completes.
ShorrFit shorr_multistart(const Design& d, std::array<Eigen::Index, 3> ranks,
                          double lambda, int n_starts, std::uint64_t seed,
                          const ShorrOptions& opts = {});

}  // namespace mlrvar
