#include "mlrvar/mlr.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mlrvar/detail/block_ls.hpp"
#include "mlrvar/rng.hpp"

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Symmetric PSD solve with a relative ridge fallback for near-singular
// Grams; sets the flag when the ridge was needed.
MatrixXd solve_psd(MatrixXd gram, const MatrixXd& rhs, double ridge,
                   bool* used_ridge) {
  Eigen::LDLT<MatrixXd> ldlt(gram);
  if (ldlt.info() == Eigen::Success && ldlt.rcond() > 1e-13)
    return ldlt.solve(rhs);
  const double bump = ridge * gram.trace();
  gram.diagonal().array() += std::max(bump, ridge);
  if (used_ridge) *used_ridge = true;
  return gram.ldlt().solve(rhs);
}

struct AlsState {
  Tensor3d core;
  MatrixXd u1, u2, u3;
};

MatrixXd coeff_mode1(const AlsState& s) {
  return s.u1 * matricize(s.core, 1) * kron(s.u3, s.u2).transpose();
}

// One full U1 -> U2 -> U3 -> core cycle of closed-form least squares
// updates, everything expressed through X'X and X'Y.
void als_cycle(AlsState& s, const DesignStats& stats, Index n, Index p,
               double ridge, bool* used_ridge) {
  const auto [r1, r2, r3] = s.core.dims();

  {
    const detail::VecLs ls = detail::u1_vec_ls(stats, s.core, s.u2, s.u3);
    const VectorXd theta = solve_psd(ls.gram, ls.rhs, ridge, used_ridge);
    s.u1 = Eigen::Map<const MatrixXd>(theta.data(), n, r1);
  }
  {
    const detail::VecLs ls = detail::u2_vec_ls(stats, s.core, s.u1, s.u3, n, p);
    const VectorXd theta = solve_psd(ls.gram, ls.rhs, ridge, used_ridge);
    s.u2 = Eigen::Map<const MatrixXd>(theta.data(), n, r2);
  }
  {
    const detail::VecLs ls = detail::u3_vec_ls(stats, s.core, s.u1, s.u2, n, p);
    const VectorXd theta = solve_psd(ls.gram, ls.rhs, ridge, used_ridge);
    s.u3 = Eigen::Map<const MatrixXd>(theta.data(), p, r3);
  }
  {
    const detail::VecLs ls = detail::core_vec_ls(stats, s.u1, s.u2, s.u3);
    const VectorXd theta = solve_psd(ls.gram, ls.rhs, ridge, used_ridge);
    const MatrixXd g1_new = Eigen::Map<const MatrixXd>(theta.data(), r1, r2 * r3);
    s.core = tensorize<double>(g1_new, {r1, r2, r3}, 1);
  }

  // rebalance: thin QR of each factor absorbed into the core, keeps the
  // unconstrained parameterization well conditioned without changing the
  // reconstruction
  {
    Eigen::HouseholderQR<MatrixXd> q1(s.u1), q2(s.u2), q3(s.u3);
    const MatrixXd r1m = q1.matrixQR().topRows(r1).triangularView<Eigen::Upper>();
    const MatrixXd r2m = q2.matrixQR().topRows(r2).triangularView<Eigen::Upper>();
    const MatrixXd r3m = q3.matrixQR().topRows(r3).triangularView<Eigen::Upper>();
    s.u1 = q1.householderQ() * MatrixXd::Identity(n, r1);
    s.u2 = q2.householderQ() * MatrixXd::Identity(n, r2);
    s.u3 = q3.householderQ() * MatrixXd::Identity(p, r3);
    s.core = mode_product<double>(
        mode_product<double>(mode_product<double>(s.core, r1m, 1), r2m, 2), r3m, 3);
  }
}

Tensor3d strategy_init(const Design& d, MlrInitStrategy strategy) {
  switch (strategy) {
    case MlrInitStrategy::ols: return fit_ols(d);
    case MlrInitStrategy::rrr: return fit_rrr(d, d.n_series());
    case MlrInitStrategy::nn: {
      ConvexOptions opts;
      opts.tol = 1e-8;
      return fit_nn(d, default_nn_lambda(d), opts).coeff;
    }
  }
  throw std::invalid_argument("fit_mlr: unknown init strategy");
}

}  // namespace

MlrFit fit_mlr(const Design& d, std::array<Index, 3> ranks, const Tensor3d& init,
               const MlrOptions& opts) {
  const Index n = d.n_series(), p = d.P;
  if (init.dim(1) != n || init.dim(2) != n || init.dim(3) != p)
    throw std::invalid_argument("fit_mlr: init tensor must be N x N x P");
  for (int i = 0; i < 3; ++i)
    if (ranks[static_cast<std::size_t>(i)] < 1 ||
        ranks[static_cast<std::size_t>(i)] > init.dim(i + 1))
      throw std::invalid_argument("fit_mlr: infeasible ranks");

  const DesignStats stats = compute_stats(d);
  const TuckerDecompd d0 = hosvd_truncated(init, ranks);
  AlsState state{d0.core, d0.U1, d0.U2, d0.U3};

  MlrFit fit;
  fit.objective_trace.push_back(ls_objective(stats, coeff_mode1(state)));
  for (int cycle = 1; cycle <= opts.max_cycles; ++cycle) {
    als_cycle(state, stats, n, p, opts.ridge, &fit.ridge_used);
    const double obj = ls_objective(stats, coeff_mode1(state));
    const double prev = fit.objective_trace.back();
    fit.objective_trace.push_back(obj);
    fit.iterations = cycle;
    if (std::abs(prev - obj) <= opts.tol * std::max(1.0, std::abs(prev))) {
      fit.converged = true;
      break;
    }
  }

  TuckerDecompd final_state{state.core, state.u1, state.u2, state.u3};
  fit.coeff = reconstruct(final_state);
  fit.decomp = hosvd_truncated(fit.coeff, ranks);
  return fit;
}

MlrFit fit_mlr(const Design& d, std::array<Index, 3> ranks,
               MlrInitStrategy strategy, const MlrOptions& opts) {
  return fit_mlr(d, ranks, strategy_init(d, strategy), opts);
}

MlrFit fit_mlr(const Design& d, std::array<Index, 3> ranks, const MlrOptions& opts) {
  const MlrInitStrategy strategy = d.t_eff() >= d.X.cols()
                                       ? MlrInitStrategy::rrr
                                       : MlrInitStrategy::nn;
  return fit_mlr(d, ranks, strategy, opts);
}

std::vector<Tensor3d> random_perturbed_init(const Tensor3d& pre, Index t_eff,
                                            int n_starts, std::uint64_t seed,
                                            double scale_override) {
  if (n_starts < 1)
    throw std::invalid_argument("random_perturbed_init: n_starts must be >= 1");
  const double scale = scale_override >= 0.0
                           ? scale_override
                           : 1.0 / std::sqrt(static_cast<double>(t_eff));
  Rng rng(seed);
  std::vector<Tensor3d> inits;
  inits.reserve(static_cast<std::size_t>(n_starts));
  for (int s = 0; s < n_starts; ++s) {
    Tensor3d t = pre;
    for (Index i = 0; i < t.size(); ++i) t.data()[i] += scale * rng.normal();
    inits.push_back(std::move(t));
  }
  return inits;
}

MlrFit fit_mlr_multistart(const Design& d, std::array<Index, 3> ranks,
                          const Tensor3d& pre, int n_starts, std::uint64_t seed,
                          const MlrOptions& opts) {
  auto inits = random_perturbed_init(pre, d.t_eff(), n_starts, seed);
  MlrFit best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (const Tensor3d& init : inits) {
    MlrFit fit = fit_mlr(d, ranks, init, opts);
    if (fit.objective_trace.back() < best_obj) {
      best_obj = fit.objective_trace.back();
      best = std::move(fit);
    }
  }
  return best;
}

namespace {

// Moore-Penrose pseudoinverse sandwich H (H' J H)^dagger H' for a symmetric
// PSD inner matrix, with the standard max_dim * eps * lambda_max rank cut.
MatrixXd projection_covariance(const MatrixXd& h, const MatrixXd& j) {
  const MatrixXd inner = h.transpose() * j * h;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (inner + inner.transpose()));
  const VectorXd ev = es.eigenvalues();
  const double cut = std::max(inner.rows(), inner.cols()) *
                     std::numeric_limits<double>::epsilon() *
                     std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  VectorXd inv = VectorXd::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cut) inv(i) = 1.0 / ev(i);
  const MatrixXd pinv = es.eigenvectors() * inv.asDiagonal() *
                        es.eigenvectors().transpose();
  return h * pinv * h.transpose();
}

}  // namespace

AsymptoticCov asymptotic_cov(const VarModel& model, const TuckerDecompd& decomp,
                             Index r1_for_rrr) {
  validate_model(model);
  const Index n = model.n_series(), p = model.lag_order();
  const Tensor3d recon = reconstruct(decomp);
  if ((recon - model.coeff).norm() > 1e-6 * std::max(1.0, model.coeff.norm()))
    throw std::invalid_argument("asymptotic_cov: decomposition does not match model coefficients");

  const Autocovariance ac = autocovariance(model, static_cast<int>(p));
  const MatrixXd gamma_star = ac.gamma_star;
  const MatrixXd sigma_inv = model.sigma_eps.llt().solve(MatrixXd::Identity(n, n));
  const MatrixXd gamma_inv =
      gamma_star.llt().solve(MatrixXd::Identity(gamma_star.rows(), gamma_star.cols()));

  AsymptoticCov out;
  out.J = kron(sigma_inv, gamma_star);
  out.sigma_ols = kron(model.sigma_eps, gamma_inv);

  // Jacobian of vec(A_(1)) in the tensor-native (response-fast) ordering,
  // assembled blockwise; the vec-permutation matrices re-route the mode-2
  // and mode-3 component derivatives into mode-1 coordinates.
  const MatrixXd g1 = matricize(decomp.core, 1);
  const MatrixXd g2 = matricize(decomp.core, 2);
  const MatrixXd g3 = matricize(decomp.core, 3);
  const auto [r1, r2, r3] = decomp.core.dims();
  const Index total = n * n * p;
  const Index cols = r1 * r2 * r3 + n * r1 + n * r2 + p * r3;
  MatrixXd h_native(total, cols);
  Index off = 0;
  h_native.middleCols(off, r1 * r2 * r3) = kron(decomp.U3, kron(decomp.U2, decomp.U1));
  off += r1 * r2 * r3;
  h_native.middleCols(off, n * r1) =
      kron(kron(decomp.U3, decomp.U2) * g1.transpose(), MatrixXd::Identity(n, n));
  off += n * r1;
  const Eigen::SparseMatrix<double> t21 = permutation_matrix({n, n, p}, 2, 1);
  h_native.middleCols(off, n * r2) =
      t21 * kron(kron(decomp.U3, decomp.U1) * g2.transpose(), MatrixXd::Identity(n, n));
  off += n * r2;
  const Eigen::SparseMatrix<double> t31 = permutation_matrix({n, n, p}, 3, 1);
  h_native.middleCols(off, p * r3) =
      t31 * kron(kron(decomp.U2, decomp.U1) * g3.transpose(), MatrixXd::Identity(p, p));

  // Commute into the ordering of J (predictor index fast), in which the OLS
  // covariance is exactly J^{-1}.
  const Eigen::SparseMatrix<double> commute = commutation_matrix(n, n * p);
  out.H = commute * h_native;
  out.sigma_mlr = projection_covariance(out.H, out.J);

  // SVD-parameterization Jacobian of the rank-r1 mode-1 constraint
  const MatrixXd a1 = matricize(model.coeff, 1);
  Eigen::JacobiSVD<MatrixXd> svd(a1, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const MatrixXd u = svd.matrixU().leftCols(r1_for_rrr);
  const MatrixXd v = svd.matrixV().leftCols(r1_for_rrr);
  const VectorXd dvals = svd.singularValues().head(r1_for_rrr);
  MatrixXd r_native(total, n * r1_for_rrr + r1_for_rrr + n * p * r1_for_rrr);
  off = 0;
  r_native.middleCols(off, n * r1_for_rrr) =
      kron(v * dvals.asDiagonal(), MatrixXd::Identity(n, n));
  off += n * r1_for_rrr;
  for (Index jcol = 0; jcol < r1_for_rrr; ++jcol)
    r_native.col(off + jcol) = kron(MatrixXd(v.col(jcol)), MatrixXd(u.col(jcol)));
  off += r1_for_rrr;
  r_native.middleCols(off, n * p * r1_for_rrr) =
      commutation_matrix(n * p, n) *
      kron(u * dvals.asDiagonal(), MatrixXd::Identity(n * p, n * p));
  const MatrixXd r_info = commute * r_native;
  out.sigma_rrr = projection_covariance(r_info, out.J);

  return out;
}

EmpiricalVsAsymptotic empirical_vs_asymptotic(const VarModel& dgp,
                                              std::array<Index, 3> ranks,
                                              Index T, int reps,
                                              std::uint64_t seed) {
  if (reps < 50)
    throw std::invalid_argument("empirical_vs_asymptotic: need at least 50 replications");
  validate_model(dgp);
  const Index n = dgp.n_series(), p = dgp.lag_order();
  const Index total = n * n * p;

  const TuckerDecompd truth = hosvd_truncated(dgp.coeff, ranks);
  const AsymptoticCov cov = asymptotic_cov(dgp, truth, ranks[0]);

  EmpiricalVsAsymptotic rep;
  rep.ols.avar = cov.sigma_ols.diagonal().mean();
  rep.rrr.avar = cov.sigma_rrr.diagonal().mean();
  rep.mlr.avar = cov.sigma_mlr.diagonal().mean();

  MatrixXd draws_ols(reps, total), draws_rrr(reps, total), draws_mlr(reps, total);
  Index t_eff = 0;
  int ok = 0;
  for (int r = 0; r < reps; ++r) {
    const std::uint64_t rep_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    try {
      TimeSeries ts = simulate(dgp, T, kDefaultBurnIn, rep_seed);
      Design d = build_design(ts, p);
      t_eff = d.t_eff();
      const Tensor3d est_ols = fit_ols(d);
      const Tensor3d est_rrr = fit_rrr(d, ranks[0]);
      const MlrFit est_mlr = fit_mlr(d, ranks, MlrInitStrategy::rrr);
      draws_ols.row(ok) = est_ols.vec().transpose();
      draws_rrr.row(ok) = est_rrr.vec().transpose();
      draws_mlr.row(ok) = est_mlr.coeff.vec().transpose();
      ++ok;
    } catch (const std::exception&) {
      ++rep.failures;
    }
  }
  if (ok == 0) throw std::runtime_error("empirical_vs_asymptotic: all replications failed");

  const VectorXd truth_vec = dgp.coeff.vec();
  auto summarize = [&](const MatrixXd& draws, EstimatorMoments& m) {
    const MatrixXd used = draws.topRows(ok);
    const VectorXd mean = used.colwise().mean();
    const MatrixXd centered = used.rowwise() - mean.transpose();
    const VectorXd var =
        centered.colwise().squaredNorm().transpose() / static_cast<double>(ok - 1);
    m.evar = static_cast<double>(t_eff) * var.mean();
    const double avg_bias = (mean - truth_vec).mean();
    m.sq_bias = avg_bias * avg_bias;
  };
  summarize(draws_ols, rep.ols);
  summarize(draws_rrr, rep.rrr);
  summarize(draws_mlr, rep.mlr);
  return rep;
}

}  // namespace mlrvar
