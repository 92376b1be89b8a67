#include "mlrvar/regression_core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Design build_design(const TimeSeries& ts, Index P) {
  const Index T = ts.length(), n = ts.width();
  if (P < 1) throw std::invalid_argument("build_design: lag order must be >= 1");
  if (T <= P) throw std::invalid_argument("build_design: need T > P");
  Design d;
  d.P = P;
  d.Y = ts.values.bottomRows(T - P);
  d.X.resize(T - P, n * P);
  for (Index t = P; t < T; ++t)
    for (Index k = 1; k <= P; ++k)
      d.X.block(t - P, (k - 1) * n, 1, n) = ts.values.row(t - k);
  return d;
}

DesignStats compute_stats(const Design& d) {
  DesignStats s;
  s.sxx = d.X.transpose() * d.X;
  s.sxy = d.X.transpose() * d.Y;
  s.yty = d.Y.squaredNorm();
  s.t_eff = d.t_eff();
  return s;
}

double ls_objective(const DesignStats& s, const MatrixXd& a1) {
  const double quad = (a1 * s.sxx).cwiseProduct(a1).sum();
  const double cross = a1.cwiseProduct(s.sxy.transpose()).sum();
  return (s.yty - 2.0 * cross + quad) / static_cast<double>(s.t_eff);
}

namespace {

Tensor3d a1_to_tensor(const MatrixXd& a1, Index n, Index p) {
  return tensorize<double>(a1, {n, n, p}, 1);
}

MatrixXd ols_a1(const Design& d) {
  const MatrixXd sxx = d.X.transpose() * d.X;
  Eigen::JacobiSVD<MatrixXd> svd(sxx, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd sv = svd.singularValues();
  const double cutoff = sv(0) * sxx.rows() * std::numeric_limits<double>::epsilon();
  if (sv(sv.size() - 1) <= cutoff) {
    const double cond = sv(0) / std::max(sv(sv.size() - 1), 1e-300);
    throw std::runtime_error(
        "fit_ols: X'X numerically singular, condition number " + std::to_string(cond) +
        " (need T_eff >= N*P)");
  }
  return svd.solve(d.X.transpose() * d.Y).transpose();
}

}  // namespace

Tensor3d fit_ols(const Design& d) {
  return a1_to_tensor(ols_a1(d), d.n_series(), d.P);
}

Tensor3d fit_rrr(const Design& d, Index r1) {
  const Index n = d.n_series();
  if (r1 < 1 || r1 > n) throw std::invalid_argument("fit_rrr: rank out of range");
  const MatrixXd a_ols = ols_a1(d);
  const MatrixXd yhat = d.X * a_ols.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(yhat.transpose() * yhat);
  // eigenvalues ascending; take the top r1
  const MatrixXd v = es.eigenvectors().rightCols(r1);
  return a1_to_tensor(v * v.transpose() * a_ols, n, d.P);
}

MatrixXd svt(const MatrixXd& m, double lambda) {
  if (lambda < 0) throw std::invalid_argument("svt: lambda must be nonnegative");
  if (lambda == 0.0) return m;
  Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  VectorXd sv = svd.singularValues();
  for (Index i = 0; i < sv.size(); ++i) sv(i) = std::max(sv(i) - lambda, 0.0);
  return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

namespace {

// Shared proximal-gradient loop; prox maps (matrix, threshold) -> matrix and
// penalty evaluates the regularizer at a point.
ConvexFit proximal_gradient(
    const Design& d, double lambda, const ConvexOptions& opts,
    const std::function<MatrixXd(const MatrixXd&, double)>& prox,
    const std::function<double(const MatrixXd&)>& penalty) {
  if (lambda < 0) throw std::invalid_argument("proximal solver: lambda must be nonnegative");
  const Index n = d.n_series();
  const DesignStats stats = compute_stats(d);
  const double t_eff = static_cast<double>(stats.t_eff);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(stats.sxx, Eigen::EigenvaluesOnly);
  const double lip = 2.0 * std::max(es.eigenvalues().maxCoeff(), 1e-300) / t_eff;
  const double step = 1.0 / lip;

  auto grad = [&](const MatrixXd& b) -> MatrixXd {
    return 2.0 / t_eff * (b * stats.sxx - stats.sxy.transpose());
  };
  auto objective = [&](const MatrixXd& b) {
    return ls_objective(stats, b) + lambda * penalty(b);
  };

  MatrixXd b = MatrixXd::Zero(n, stats.sxx.rows());
  MatrixXd b_prev = b;
  MatrixXd momentum = b;
  double theta = 1.0;

  ConvexFit fit;
  fit.objective_trace.push_back(objective(b));
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    const double prev = fit.objective_trace.back();
    MatrixXd candidate = prox(momentum - step * grad(momentum), step * lambda);
    double obj = objective(candidate);
    if (obj > prev) {
      // momentum overshoot: restart from the last accepted iterate
      theta = 1.0;
      momentum = b;
      candidate = prox(momentum - step * grad(momentum), step * lambda);
      obj = objective(candidate);
    }
    if (obj > prev) {
      // plain step cannot improve within rounding; stop at the last iterate
      fit.converged = true;
      break;
    }
    b_prev = b;
    b = candidate;
    fit.iterations = iter;
    fit.objective_trace.push_back(obj);
    const bool obj_stalled = prev - obj <= opts.tol * std::max(1.0, std::abs(prev));
    const bool iter_stalled =
        (b - b_prev).norm() <= opts.tol * std::max(1.0, b.norm());
    if (obj_stalled && iter_stalled) {
      fit.converged = true;
      break;
    }
    if (opts.accelerate) {
      const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
      momentum = b + (theta - 1.0) / theta_next * (b - b_prev);
      theta = theta_next;
    } else {
      momentum = b;
    }
  }
  fit.coeff = a1_to_tensor(b, n, d.P);
  return fit;
}

}  // namespace

ConvexFit fit_nn(const Design& d, double lambda, const ConvexOptions& opts) {
  return proximal_gradient(
      d, lambda, opts, [](const MatrixXd& m, double thr) { return svt(m, thr); },
      [](const MatrixXd& m) {
        return Eigen::JacobiSVD<MatrixXd>(m).singularValues().sum();
      });
}

ConvexFit fit_lasso(const Design& d, double lambda, const ConvexOptions& opts) {
  return proximal_gradient(
      d, lambda, opts,
      [](const MatrixXd& m, double thr) {
        return m.unaryExpr([thr](double x) { return soft_threshold(x, thr); }).eval();
      },
      [](const MatrixXd& m) { return m.cwiseAbs().sum(); });
}

double robust_residual_scale(const Design& d) {
  const DesignStats s = compute_stats(d);
  const Index np = s.sxx.rows();
  MatrixXd gram = s.sxx;
  gram.diagonal().array() += 0.01 * s.sxx.trace() / static_cast<double>(np);
  const MatrixXd a1 = gram.ldlt().solve(s.sxy).transpose();
  MatrixXd resid = d.Y - d.X * a1.transpose();
  std::vector<double> mags(static_cast<std::size_t>(resid.size()));
  for (Index i = 0; i < resid.size(); ++i)
    mags[static_cast<std::size_t>(i)] = std::abs(resid.data()[i]);
  const std::size_t mid = mags.size() / 2;
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid), mags.end());
  return 1.4826 * mags[mid];
}

double default_nn_lambda(const Design& d) {
  const double n = static_cast<double>(d.n_series());
  const double np = static_cast<double>(d.X.cols());
  return robust_residual_scale(d) *
         std::sqrt((n + np) / static_cast<double>(d.t_eff()));
}

double default_lasso_lambda(const Design& d) {
  const double dim = static_cast<double>(d.n_series()) *
                     static_cast<double>(d.n_series()) * static_cast<double>(d.P);
  return robust_residual_scale(d) *
         std::sqrt(2.0 * std::log(dim) / static_cast<double>(d.t_eff()));
}

}  // namespace mlrvar
