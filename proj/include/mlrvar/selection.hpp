#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlrvar/regression_core.hpp"
#include "mlrvar/shorr.hpp"
#include "mlrvar/tensor3.hpp"

namespace mlrvar {

struct RankChoice {
  std::array<Eigen::Index, 3> ranks{0, 0, 0};
  std::array<std::vector<double>, 3> ratios;  // (sigma_{j+1}+c)/(sigma_j+c), j = 1..p_i-1
  double c = 0.0;
  std::string initial_estimator;
};

// Recommended ridge parameter sqrt(N P log(T) / (10 T)).
double auto_ridge_c(Eigen::Index T, Eigen::Index N, Eigen::Index P);

// Ridge-type ratio estimator of the multilinear ranks from a preliminary
// coefficient estimate: per mode, r_hat minimizes the c-regularized ratio of
// consecutive singular values of the matricization (first index on ties).
RankChoice select_ranks(const Tensor3d& init_est, double c);

// Convenience pipeline: nuclear-norm preliminary estimate at the rate-based
// default lambda, then the ratio estimator with the auto ridge parameter
// (T taken as T_eff + P, the length of the originating series).
RankChoice select_ranks_auto(const Design& d);

struct BicEntry {
  double lambda = 0.0;
  double bic = 0.0;
  double rss = 0.0;
  Eigen::Index df = 0;   // nonzeros in the core and the three factors
  bool converged = false;
  bool failed = false;
};

struct BicSelection {
  double lambda = 0.0;
  std::vector<BicEntry> table;
  ShorrFit best;
};

// Grid search for the sparsity penalty:
//   BIC(lambda) = log(RSS/(T_eff N)) + df log(T_eff)/T_eff,
// df counting nonzero entries of the fitted core and factors. Smallest
// lambda wins ties; throws when every fit fails.
BicSelection select_lambda_bic(const Design& d, std::array<Eigen::Index, 3> ranks,
                               const std::vector<double>& lambda_grid,
                               const ShorrOptions& opts = {},
                               std::optional<Tensor3d> init = std::nullopt);

}  // namespace mlrvar
