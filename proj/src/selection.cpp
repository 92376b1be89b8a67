#include "mlrvar/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double auto_ridge_c(Index T, Index N, Index P) {
  return std::sqrt(static_cast<double>(N * P) * std::log(static_cast<double>(T)) /
                   (10.0 * static_cast<double>(T)));
}

RankChoice select_ranks(const Tensor3d& init_est, double c) {
  if (c <= 0.0) throw std::invalid_argument("select_ranks: c must be positive");
  RankChoice choice;
  choice.c = c;
  for (int mode = 1; mode <= 3; ++mode) {
    const VectorXd sv =
        Eigen::JacobiSVD<MatrixXd>(matricize(init_est, mode)).singularValues();
    auto& ratios = choice.ratios[static_cast<std::size_t>(mode - 1)];
    const Index p = init_est.dim(mode);
    ratios.resize(static_cast<std::size_t>(p - 1));
    Index best = 0;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (Index j = 0; j + 1 < p; ++j) {
      const double hi = j < sv.size() ? sv(j) : 0.0;
      const double lo = j + 1 < sv.size() ? sv(j + 1) : 0.0;
      const double ratio = (lo + c) / (hi + c);
      ratios[static_cast<std::size_t>(j)] = ratio;
      if (ratio < best_ratio) {  // strict: first index wins ties
        best_ratio = ratio;
        best = j;
      }
    }
    choice.ranks[static_cast<std::size_t>(mode - 1)] = best + 1;
  }
  return choice;
}

RankChoice select_ranks_auto(const Design& d) {
  const Tensor3d pre = fit_nn(d, default_nn_lambda(d)).coeff;
  const Index t_full = d.t_eff() + d.P;
  RankChoice choice = select_ranks(pre, auto_ridge_c(t_full, d.n_series(), d.P));
  choice.initial_estimator = "nn";
  return choice;
}

namespace {

Index count_nonzeros(const ShorrFit& fit) {
  Index df = 0;
  for (Index i = 0; i < fit.decomp.core.size(); ++i)
    if (std::abs(fit.decomp.core.data()[i]) > 1e-8) ++df;
  for (const MatrixXd& u : {fit.decomp.U1, fit.decomp.U2, fit.decomp.U3})
    df += (u.cwiseAbs().array() > 0.0).count();
  return df;
}

}  // namespace

BicSelection select_lambda_bic(const Design& d, std::array<Index, 3> ranks,
                               const std::vector<double>& lambda_grid,
                               const ShorrOptions& opts,
                               std::optional<Tensor3d> init) {
  if (lambda_grid.empty())
    throw std::invalid_argument("select_lambda_bic: empty grid");
  for (double l : lambda_grid)
    if (l <= 0.0)
      throw std::invalid_argument("select_lambda_bic: grid values must be positive");

  const Tensor3d start = init ? *init : fit_nn(d, default_nn_lambda(d)).coeff;
  const double t_eff = static_cast<double>(d.t_eff());
  const double n = static_cast<double>(d.n_series());

  // ascending order so each fit can warm-start from the previous solution
  std::vector<double> grid = lambda_grid;
  std::sort(grid.begin(), grid.end());

  BicSelection sel;
  sel.table.reserve(grid.size());
  double best_bic = std::numeric_limits<double>::infinity();
  Tensor3d warm = start;
  for (double lambda : grid) {
    BicEntry entry;
    entry.lambda = lambda;
    try {
      ShorrFit fit = fit_shorr(d, ranks, lambda, warm, opts);
      warm = fit.coeff;
      entry.rss = (d.Y - d.X * matricize(fit.coeff, 1).transpose()).squaredNorm();
      entry.df = count_nonzeros(fit);
      entry.bic = std::log(entry.rss / (t_eff * n)) +
                  static_cast<double>(entry.df) * std::log(t_eff) / t_eff;
      entry.converged = fit.converged;
      if (entry.bic < best_bic) {  // strict: smallest lambda wins ties
        best_bic = entry.bic;
        sel.lambda = lambda;
        sel.best = std::move(fit);
      }
    } catch (const std::exception&) {
      entry.failed = true;
    }
    sel.table.push_back(entry);
  }
  if (!std::isfinite(best_bic))
    throw std::runtime_error("select_lambda_bic: every fit on the grid failed");
  return sel;
}

}  // namespace mlrvar
