#include "mlrvar/shorr.hpp"
#include <cstdlib>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mlrvar/detail/block_ls.hpp"
#include "mlrvar/rng.hpp"

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd procrustes(const MatrixXd& c, bool* rank_deficient) {
  if (c.rows() < c.cols())
    throw std::invalid_argument("procrustes: need at least as many rows as columns");
  Eigen::JacobiSVD<MatrixXd> svd(c, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd sv = svd.singularValues();
  if (rank_deficient) {
    const double cutoff = sv(0) * c.cols() * std::numeric_limits<double>::epsilon();
    *rank_deficient = sv(sv.size() - 1) <= cutoff;
  }
  return svd.matrixU() * svd.matrixV().transpose();
}

namespace {

// q(theta) = theta' Q theta - 2 b' theta + const, the (1/n)-scaled least
// squares part of one factor subproblem.
struct QuadraticForm {
  MatrixXd q;
  VectorXd b;
  Index rows = 0, cols = 0;
};

MatrixXd soft_threshold_matrix(const MatrixXd& m, double thr) {
  return m.unaryExpr([thr](double x) { return soft_threshold(x, thr); });
}

double quad_value(const QuadraticForm& qf, const MatrixXd& b) {
  const Eigen::Map<const VectorXd> v(b.data(), b.size());
  return v.dot(qf.q * v) - 2.0 * qf.b.dot(v);
}

// Replaces all-zero columns of w by the dominant left singular direction of
// the unconstrained solution projected away from the live columns.
int repair_dead_columns(MatrixXd& w, const QuadraticForm& qf,
                        const Eigen::LDLT<MatrixXd>& solver) {
  int repaired = 0;
  for (Index j = 0; j < w.cols(); ++j) {
    if (w.col(j).cwiseAbs().maxCoeff() > 0.0) continue;
    const VectorXd theta = solver.solve(qf.b);
    MatrixXd resid = Eigen::Map<const MatrixXd>(theta.data(), w.rows(), w.cols());
    for (Index j2 = 0; j2 < w.cols(); ++j2) {
      if (j2 == j || w.col(j2).norm() == 0.0) continue;
      const VectorXd dir = w.col(j2) / w.col(j2).norm();
      resid -= dir * (dir.transpose() * resid);
    }
    Eigen::JacobiSVD<MatrixXd> svd(resid, Eigen::ComputeThinU);
    w.col(j) = svd.matrixU().col(0);
    ++repaired;
  }
  return repaired;
}

// Warm-startable split state: the scaled dual M and the augmentation weight
// kappa belong together (M rescales whenever kappa does).
struct SplitState {
  MatrixXd b, w, m;
  double kappa = 0.0;
};

// Inner ADMM on the split B = W; the B-half handles the orthogonality
// constraint by a second splitting (unconstrained ridge solve, procrustes
// projection, dual step). The augmentation weight is rebalanced against the
// primal/dual residual ratio, rescaling the dual accordingly; the LDLT
// factorization is reused until the weight changes.
SparseOrthResult sparse_orth_quad(const QuadraticForm& qf, const MatrixXd& init,
                                  double lambda_eff, const SparseOrthOptions& opts,
                                  SplitState* warm = nullptr) {
  const Index p = qf.rows, r = qf.cols;
  double kappa = opts.kappa;  // fresh each call, grows within the call only
  double soc_rho = kappa;
  Eigen::LDLT<MatrixXd> solver;
  auto refactor = [&] {
    MatrixXd gram = qf.q;
    gram.diagonal().array() += kappa + soc_rho;
    solver.compute(gram);
  };
  refactor();

  bool flag = false;
  MatrixXd b = procrustes(init, &flag);
  MatrixXd w = b;
  MatrixXd m = MatrixXd::Zero(p, r);
  if (warm && warm->m.size() == p * r) {
    w = warm->w;
    // the stored dual is scaled by its own kappa; rescale so the unscaled
    // dual carries over
    m = warm->m * (warm->kappa > 0.0 ? warm->kappa / kappa : 1.0);
  }

  SparseOrthResult out;
  double prev_obj = quad_value(qf, b) + lambda_eff * w.cwiseAbs().sum();
  double window_ref = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    // B-half: min q(B) + kappa ||B - (W - M)||_F^2 s.t. B'B = I
    const MatrixXd target = w - m;
    MatrixXd q_orth = b;
    MatrixXd z = MatrixXd::Zero(p, r);
    for (int soc = 0; soc < opts.soc_max_iter; ++soc) {
      const MatrixXd lin = qf.b.reshaped(p, r).eval() + kappa * target +
                           soc_rho * (q_orth - z);
      const VectorXd theta =
          solver.solve(Eigen::Map<const VectorXd>(lin.data(), lin.size()));
      b = Eigen::Map<const MatrixXd>(theta.data(), p, r);
      q_orth = procrustes(b + z, &flag);
      z += b - q_orth;
      if ((b - q_orth).norm() <= opts.soc_tol) break;
    }
    b = q_orth;

    // W-half: entrywise soft threshold of B + M at lambda_eff / (2 kappa)
    const MatrixXd w_prev = w;
    w = soft_threshold_matrix(b + m, lambda_eff / (2.0 * kappa));
    m += b - w;

    out.iterations = iter;
    out.primal_residual = (b - w).norm();
    const double dual_residual = kappa * (w - w_prev).norm();
    const double obj = quad_value(qf, b) + lambda_eff * w.cwiseAbs().sum();
    const bool obj_stalled =
        std::abs(prev_obj - obj) <= opts.tol * std::max(1.0, std::abs(prev_obj));
    prev_obj = obj;
    if (out.primal_residual < opts.tol && obj_stalled) {
      out.converged = true;
      break;
    }
    if (out.primal_residual >= opts.tol) {
      if (out.primal_residual > 10.0 * dual_residual && kappa < 1e6) {
        kappa *= 2.0;
        soc_rho = kappa;
        m *= 0.5;
        refactor();
      } else if (iter % 10 == 0) {
        // limit-cycle breaker: comparable residuals that refuse to contract
        if (out.primal_residual > 0.9 * window_ref && kappa < 1e6) {
          kappa *= 2.0;
          soc_rho = kappa;
          m *= 0.5;
          refactor();
        }
        window_ref = out.primal_residual;
      }
    }
  }

  out.restarted_columns = repair_dead_columns(w, qf, solver);
  if (warm) {
    warm->b = b;
    warm->w = w;
    warm->m = m;
    warm->kappa = kappa;
  }
  MatrixXd u = procrustes(w, &flag);
  u = (u.cwiseAbs().array() < opts.zero_cutoff).select(0.0, u);
  out.solution = u;
  return out;
}

QuadraticForm from_vec_ls(const detail::VecLs& ls, double n_obs, Index rows,
                          Index cols) {
  QuadraticForm qf;
  qf.q = ls.gram / n_obs;
  qf.b = ls.rhs / n_obs;
  qf.rows = rows;
  qf.cols = cols;
  return qf;
}

}  // namespace

SparseOrthResult sparse_orthogonal_regress(const VectorXd& y, const MatrixXd& x,
                                           std::pair<Index, Index> shape,
                                           double lambda_eff,
                                           const SparseOrthOptions& opts) {
  if (x.rows() != y.size() || x.cols() != shape.first * shape.second)
    throw std::invalid_argument("sparse_orthogonal_regress: inconsistent shapes");
  if (lambda_eff < 0.0 || opts.kappa <= 0.0)
    throw std::invalid_argument("sparse_orthogonal_regress: need lambda >= 0, kappa > 0");
  const double n = static_cast<double>(y.size());
  QuadraticForm qf;
  qf.q = x.transpose() * x / n;
  qf.b = x.transpose() * y / n;
  qf.rows = shape.first;
  qf.cols = shape.second;
  // neutral start: orthonormalized unconstrained ridge solution
  MatrixXd gram = qf.q;
  gram.diagonal().array() += 1e-8 * std::max(1.0, qf.q.trace());
  const VectorXd theta = gram.ldlt().solve(qf.b);
  const MatrixXd init = Eigen::Map<const MatrixXd>(theta.data(), qf.rows, qf.cols);
  return sparse_orth_quad(qf, init, lambda_eff, opts);
}

namespace {

struct ShorrState {
  Tensor3d core;
  std::array<MatrixXd, 3> u;
  std::array<VectorXd, 3> diag;   // D_i
  std::array<MatrixXd, 3> vmat;   // V_i, orthonormal columns
  std::array<MatrixXd, 3> dual;   // (C_i)_(i), mode-i matricized
  std::array<SplitState, 3> inner_state;  // warm starts for the factor solves
};

double penalized_objective(const DesignStats& stats, const ShorrState& s,
                           double lambda) {
  const MatrixXd a1 = s.u[0] * matricize(s.core, 1) * kron(s.u[2], s.u[1]).transpose();
  double pen = lambda;
  for (const MatrixXd& u : s.u) pen *= u.cwiseAbs().sum();
  return ls_objective(stats, a1) + (lambda == 0.0 ? 0.0 : pen);
}

}  // namespace

ShorrFit fit_shorr(const Design& d, std::array<Index, 3> ranks, double lambda,
                   const Tensor3d& init, const ShorrOptions& opts) {
  const Index n = d.n_series(), p = d.P;
  if (lambda < 0.0) throw std::invalid_argument("fit_shorr: lambda must be nonnegative");
  if (init.dim(1) != n || init.dim(2) != n || init.dim(3) != p)
    throw std::invalid_argument("fit_shorr: init tensor must be N x N x P");
  for (int i = 0; i < 3; ++i)
    if (ranks[static_cast<std::size_t>(i)] < 1 ||
        ranks[static_cast<std::size_t>(i)] > init.dim(i + 1))
      throw std::invalid_argument("fit_shorr: infeasible ranks");

  const DesignStats stats = compute_stats(d);
  const double n_obs = static_cast<double>(stats.t_eff);
  const auto [r1, r2, r3] = ranks;

  ShorrState s;
  {
    const TuckerDecompd d0 = hosvd_truncated(init, ranks);
    s.core = d0.core;
    s.u = {d0.U1, d0.U2, d0.U3};
    for (int i = 0; i < 3; ++i) {
      const MatrixXd g = matricize(s.core, i + 1);
      s.diag[static_cast<std::size_t>(i)] = g.rowwise().norm();
      // HOSVD cores are all-orthogonal, so rows of G_(i) normalize to V_i'
      MatrixXd v(g.cols(), g.rows());
      for (Index j = 0; j < g.rows(); ++j) {
        const double norm = g.row(j).norm();
        if (norm > 1e-14)
          v.col(j) = g.row(j).transpose() / norm;
        else
          v.col(j) = VectorXd::Unit(g.cols(), j % g.cols());
      }
      s.vmat[static_cast<std::size_t>(i)] = procrustes(v);
      s.dual[static_cast<std::size_t>(i)] = MatrixXd::Zero(g.rows(), g.cols());
    }
  }

  const std::array<Index, 3> u_rows{n, n, p};
  const std::array<std::array<Index, 2>, 3> core_mat_dims{
      std::array<Index, 2>{r1, r2 * r3}, {r2, r1 * r3}, {r3, r1 * r2}};

  ShorrFit fit;
  fit.lambda = lambda;
  fit.objective_trace.push_back(penalized_objective(stats, s, lambda));
  int diverged_streak = 0;
  // escalation of the core-splitting weights, triggered by objective
  // oscillation over a window or by a joint objective/primal stall; doubling
  // the weights halves the scaled duals so the unscaled duals are preserved
  double rho_scale = 1.0;
  double stall_reference = std::numeric_limits<double>::infinity();
  double window_obj_ref = fit.objective_trace.front();

  for (int iter = 1; iter <= opts.outer_max_iter; ++iter) {
    fit.inner_primal_residual = 0.0;

    // factor updates under the joint penalty, one block at a time
    for (int i = 0; i < 3; ++i) {
      double lambda_eff = lambda;
      for (int j = 0; j < 3; ++j)
        if (j != i) lambda_eff *= s.u[static_cast<std::size_t>(j)].cwiseAbs().sum();

      detail::VecLs ls;
      if (i == 0)
        ls = detail::u1_vec_ls(stats, s.core, s.u[1], s.u[2]);
      else if (i == 1)
        ls = detail::u2_vec_ls(stats, s.core, s.u[0], s.u[2], n, p);
      else
        ls = detail::u3_vec_ls(stats, s.core, s.u[0], s.u[1], n, p);
      const QuadraticForm qf = from_vec_ls(
          ls, n_obs, u_rows[static_cast<std::size_t>(i)], ranks[static_cast<std::size_t>(i)]);
      SparseOrthResult res =
          sparse_orth_quad(qf, s.u[static_cast<std::size_t>(i)], lambda_eff,
                           opts.inner, &s.inner_state[static_cast<std::size_t>(i)]);
      s.u[static_cast<std::size_t>(i)] = res.solution;
      fit.inner_primal_residual =
          std::max(fit.inner_primal_residual, res.primal_residual);
    }

    // core update: least squares plus the rho-weighted pull toward each
    // D_i V_i' (duals folded in), a permutation-invariant ridge in vec(G)
    {
      const detail::VecLs ls = detail::core_vec_ls(stats, s.u[0], s.u[1], s.u[2]);
      MatrixXd gram = ls.gram / n_obs;
      VectorXd rhs = ls.rhs / n_obs;
      double rho_total = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double rho = rho_scale * opts.rho[static_cast<std::size_t>(i)];
        rho_total += rho;
        const MatrixXd target =
            s.diag[static_cast<std::size_t>(i)].asDiagonal() *
                s.vmat[static_cast<std::size_t>(i)].transpose() -
            s.dual[static_cast<std::size_t>(i)];
        const Tensor3d target_tensor =
            tensorize<double>(target, {r1, r2, r3}, i + 1);
        rhs += rho * target_tensor.vec();
      }
      gram.diagonal().array() += rho_total;
      const VectorXd theta = gram.ldlt().solve(rhs);
      s.core = tensorize<double>(
          MatrixXd(Eigen::Map<const MatrixXd>(theta.data(), r1, r2 * r3)),
          {r1, r2, r3}, 1);
    }

    // D_i, V_i and dual updates
    fit.primal_residual = 0.0;
    for (int i = 0; i < 3; ++i) {
      const std::size_t ui = static_cast<std::size_t>(i);
      const MatrixXd g = matricize(s.core, i + 1);
      const MatrixXd shifted = g + s.dual[ui];
      s.diag[ui] = (shifted * s.vmat[ui]).diagonal();
      // a vanishing diagonal entry leaves its orthonormal direction
      // undetermined; bias such columns toward their previous direction so
      // the dual does not chase arbitrary sign/rotation flips
      MatrixXd target = shifted.transpose() * MatrixXd(s.diag[ui].asDiagonal());
      const double dmax = s.diag[ui].cwiseAbs().maxCoeff();
      for (Eigen::Index j = 0; j < s.diag[ui].size(); ++j)
        if (std::abs(s.diag[ui](j)) < 1e-8 * std::max(dmax, 1e-30))
          target.col(j) = std::max(dmax, 1e-12) * s.vmat[ui].col(j);
      s.vmat[ui] = procrustes(target);
      const MatrixXd dv = s.diag[ui].asDiagonal() * s.vmat[ui].transpose();
      s.dual[ui] += g - dv;
      fit.primal_residual = std::max(fit.primal_residual, (g - dv).norm());
    }

    const double obj = penalized_objective(stats, s, lambda);
    const double prev = fit.objective_trace.back();
    fit.objective_trace.push_back(obj);
    fit.iterations = iter;

    if (std::getenv("MLRVAR_SHORR_TRACE")) {
      const MatrixXd a1 =
          s.u[0] * matricize(s.core, 1) * kron(s.u[2], s.u[1]).transpose();
      std::fprintf(stderr,
                   "[trace] it=%3d obj=%10.5f ls=%10.5f n1=%6.3f n2=%6.3f n3=%6.3f "
                   "primal=%7.1e inner=%7.1e rho=%g gnorm=%6.3f\n",
                   iter, obj, ls_objective(stats, a1), s.u[0].cwiseAbs().sum(),
                   s.u[1].cwiseAbs().sum(), s.u[2].cwiseAbs().sum(),
                   fit.primal_residual, fit.inner_primal_residual, rho_scale,
                   matricize(s.core, 1).norm());
    }

    if (obj > opts.divergence_factor * std::max(fit.objective_trace.front(), 1e-12)) {
      if (++diverged_streak >= opts.divergence_patience)
        throw std::runtime_error(
            "fit_shorr: diverged (objective " + std::to_string(obj) + " vs initial " +
            std::to_string(fit.objective_trace.front()) + " for " +
            std::to_string(diverged_streak) + " iterations)");
    } else {
      diverged_streak = 0;
    }

    const bool obj_stalled =
        std::abs(prev - obj) <= opts.outer_tol * std::max(1.0, std::abs(prev));
    if (fit.primal_residual < opts.outer_tol && obj_stalled) {
      fit.converged = true;
      break;
    }

    if (opts.adaptive_penalty && iter % opts.stall_window == 0) {
      const double obj_scale = std::max(1.0, std::abs(window_obj_ref));
      const bool oscillating = obj > window_obj_ref + 1e-12 * obj_scale;
      const bool jointly_stalled =
          std::abs(window_obj_ref - obj) <= opts.outer_tol * obj_scale &&
          fit.primal_residual > opts.stall_factor * stall_reference;
      if ((oscillating || jointly_stalled) &&
          fit.primal_residual >= opts.outer_tol && rho_scale < 1e6) {
        rho_scale *= 2.0;
        for (auto& c : s.dual) c *= 0.5;
      }
      window_obj_ref = obj;
      stall_reference = fit.primal_residual;
    }
  }

  fit.decomp.core = s.core;
  fit.decomp.U1 = s.u[0];
  fit.decomp.U2 = s.u[1];
  fit.decomp.U3 = s.u[2];
  fit.coeff = reconstruct(fit.decomp);
  for (int i = 0; i < 3; ++i)
    fit.support[static_cast<std::size_t>(i)] =
        (s.u[static_cast<std::size_t>(i)].cwiseAbs().array() > 0.0).cast<double>().matrix();
  return fit;
}

ShorrFit fit_shorr(const Design& d, std::array<Index, 3> ranks, double lambda,
                   const ShorrOptions& opts) {
  const Tensor3d init = fit_nn(d, default_nn_lambda(d)).coeff;
  return fit_shorr(d, ranks, lambda, init, opts);
}

ShorrFit shorr_multistart(const Design& d, std::array<Index, 3> ranks,
                          double lambda, int n_starts, std::uint64_t seed,
                          const ShorrOptions& opts) {
  if (n_starts < 1)
    throw std::invalid_argument("shorr_multistart: n_starts must be >= 1");
  const Index n = d.n_series(), p = d.P;
  const Tensor3d pre = fit_nn(d, default_nn_lambda(d)).coeff;
  const double radius =
      std::sqrt(static_cast<double>(n * p) / static_cast<double>(d.t_eff()));
  const double entry_sd = 1.0 / std::sqrt(static_cast<double>(n * n * p));

  Rng rng(seed);
  ShorrFit best;
  double best_obj = std::numeric_limits<double>::infinity();
  bool any = false;
  std::string last_error = "no starts attempted";
  for (int start = 0; start < n_starts; ++start) {
    Tensor3d init = pre;
    if (start > 0) {  // first start is the unperturbed preliminary estimate
      for (Index i = 0; i < init.size(); ++i)
        init.data()[i] += radius * entry_sd * rng.normal();
    }
    try {
      ShorrFit fit = fit_shorr(d, ranks, lambda, init, opts);
      if (fit.objective_trace.back() < best_obj) {
        best_obj = fit.objective_trace.back();
        best = std::move(fit);
      }
      any = true;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  if (!any)
    throw std::runtime_error("shorr_multistart: every start failed; last error: " +
                             last_error);
  return best;
}

}  // namespace mlrvar
