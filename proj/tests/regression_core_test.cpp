#include "doctest.h"

#include <Eigen/Dense>

#include "mlrvar/regression_core.hpp"
#include "mlrvar/rng.hpp"
#include "mlrvar/tensor3.hpp"
#include "mlrvar/var_process.hpp"

using namespace mlrvar;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dgp small_dgp(std::uint64_t seed, Eigen::Index N = 5, Eigen::Index P = 2) {
  DgpParams params;
  params.N = N;
  params.P = P;
  params.ranks = {2, 2, 2};
  return make_dgp(DgpKind::scaled_random_core, params, seed);
}

}  // namespace

TEST_CASE("build_design: hand-constructed scalar example") {
  TimeSeries ts;
  ts.values.resize(3, 1);
  ts.values << 1.0, 2.0, 3.0;
  Design d = build_design(ts, 2);
  CHECK(d.t_eff() == 1);
  CHECK(d.Y(0, 0) == 3.0);
  CHECK(d.X(0, 0) == 2.0);  // most recent lag first
  CHECK(d.X(0, 1) == 1.0);
}

TEST_CASE("build_design: zero series and shape errors") {
  TimeSeries ts;
  ts.values = MatrixXd::Zero(10, 3);
  Design d = build_design(ts, 4);
  CHECK(d.X.cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.Y.cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.X.cols() == 12);
  CHECK_THROWS_AS(build_design(ts, 10), std::invalid_argument);
  CHECK_THROWS_AS(build_design(ts, 0), std::invalid_argument);
}

TEST_CASE("build_design residuals match per-observation loop") {
  Dgp dgp = small_dgp(3);
  TimeSeries ts = simulate(dgp.model, 60, 200, 8);
  Design d = build_design(ts, dgp.model.lag_order());
  const MatrixXd a1 = matricize(dgp.model.coeff, 1);
  MatrixXd resid = d.Y - d.X * a1.transpose();

  const Eigen::Index P = dgp.model.lag_order();
  for (Eigen::Index t = P; t < ts.length(); ++t) {
    VectorXd expect = ts.values.row(t).transpose();
    for (Eigen::Index k = 1; k <= P; ++k)
      expect -= dgp.model.coeff.slice(k - 1) * ts.values.row(t - k).transpose();
    CHECK((resid.row(t - P).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("fit_ols: recovers coefficients from noiseless data") {
  Dgp dgp = small_dgp(11);
  TimeSeries ts = simulate(dgp.model, 40, 300, 5);  // T_eff = 38 >= 10 + 10
  // strip the noise: rebuild a noiseless path from the same model
  TimeSeries noiseless = simulate(dgp.model, 40, 0, 5, 1.0);
  Design d = build_design(noiseless, dgp.model.lag_order());
  // noiseless here means: refit on exact linear relation Y = X A1' + E with E
  // the innovations; instead simulate with noise then verify interpolation on
  // an exactly generated response
  d.Y = d.X * matricize(dgp.model.coeff, 1).transpose();
  Tensor3d est = fit_ols(d);
  CHECK((est - dgp.model.coeff).norm() <= 1e-8 * dgp.model.coeff.norm());
}

TEST_CASE("fit_ols: zero response gives zero tensor") {
  Dgp dgp = small_dgp(13);
  TimeSeries ts = simulate(dgp.model, 50, 100, 21);
  Design d = build_design(ts, 2);
  d.Y.setZero();
  CHECK(fit_ols(d).norm() == 0.0);
}

TEST_CASE("fit_ols: residuals orthogonal to regressors") {
  Dgp dgp = small_dgp(17);
  TimeSeries ts = simulate(dgp.model, 80, 100, 31);
  Design d = build_design(ts, 2);
  Tensor3d est = fit_ols(d);
  MatrixXd resid = d.Y - d.X * matricize(est, 1).transpose();
  const double scale = d.X.cwiseAbs().maxCoeff() * d.Y.cwiseAbs().maxCoeff();
  CHECK((d.X.transpose() * resid).cwiseAbs().maxCoeff() <= 1e-8 * scale);
}

TEST_CASE("fit_ols: rank-deficient design reports condition number") {
  TimeSeries ts;
  ts.values = MatrixXd::Zero(8, 2);  // all-zero X'X
  Design d = build_design(ts, 2);
  CHECK_THROWS_WITH_AS(fit_ols(d), doctest::Contains("condition"), std::runtime_error);
}

TEST_CASE("fit_rrr: full rank equals OLS") {
  Dgp dgp = small_dgp(19);
  TimeSeries ts = simulate(dgp.model, 100, 100, 41);
  Design d = build_design(ts, 2);
  Tensor3d ols = fit_ols(d);
  Tensor3d rrr = fit_rrr(d, d.n_series());
  CHECK((ols - rrr).norm() <= 1e-10 * ols.norm());
}

TEST_CASE("fit_rrr: rank constraint holds") {
  Dgp dgp = small_dgp(23);
  TimeSeries ts = simulate(dgp.model, 100, 100, 43);
  Design d = build_design(ts, 2);
  Tensor3d rrr = fit_rrr(d, 2);
  VectorXd sv = Eigen::JacobiSVD<MatrixXd>(matricize(rrr, 1)).singularValues();
  for (Eigen::Index j = 2; j < sv.size(); ++j) CHECK(sv(j) <= 1e-8 * sv(0));
}

TEST_CASE("fit_rrr: no rank-2 candidate from random perturbations does better") {
  Dgp dgp = small_dgp(29);
  TimeSeries ts = simulate(dgp.model, 120, 100, 47);
  Design d = build_design(ts, 2);
  DesignStats stats = compute_stats(d);
  Tensor3d ols = fit_ols(d);
  Tensor3d rrr = fit_rrr(d, 2);
  const double obj_rrr = ls_objective(stats, matricize(rrr, 1));
  CHECK(obj_rrr >= ls_objective(stats, matricize(ols, 1)) - 1e-12);

  Rng rng(71);
  const MatrixXd base = matricize(rrr, 1);
  for (int rep = 0; rep < 100; ++rep) {
    // random rank-2 candidate near the solution
    MatrixXd left = rng.normal_matrix(d.n_series(), 2);
    MatrixXd right = rng.normal_matrix(base.cols(), 2);
    MatrixXd cand = base + 0.05 * left * right.transpose();
    Eigen::JacobiSVD<MatrixXd> svd(cand, Eigen::ComputeThinU | Eigen::ComputeThinV);
    MatrixXd trunc = svd.matrixU().leftCols(2) *
                     svd.singularValues().head(2).asDiagonal() *
                     svd.matrixV().leftCols(2).transpose();
    CHECK(ls_objective(stats, trunc) >= obj_rrr - 1e-10);
  }
}

TEST_CASE("soft_threshold basics") {
  CHECK(soft_threshold(1.7, 0.0) == 1.7);
  CHECK(soft_threshold(0.4, 0.5) == 0.0);
  CHECK(soft_threshold(-0.4, 0.5) == 0.0);
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
}

TEST_CASE("svt: identity at zero, annihilation above top singular value") {
  Rng rng(5);
  MatrixXd m = rng.normal_matrix(4, 6);
  CHECK((svt(m, 0.0) - m).cwiseAbs().maxCoeff() == 0.0);
  const double top = Eigen::JacobiSVD<MatrixXd>(m).singularValues()(0);
  CHECK(svt(m, top * 1.0000001).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("svt: constructed spectrum (3,1) with lambda 2 gives rank one") {
  Rng rng(7);
  MatrixXd u = random_orthonormal(5, 2, 1), v = random_orthonormal(4, 2, 2);
  VectorXd sv(2);
  sv << 3.0, 1.0;
  MatrixXd m = u * sv.asDiagonal() * v.transpose();
  MatrixXd out = svt(m, 2.0);
  VectorXd sv_out = Eigen::JacobiSVD<MatrixXd>(out).singularValues();
  CHECK(sv_out(0) == doctest::Approx(1.0).epsilon(1e-10));
  for (Eigen::Index j = 1; j < sv_out.size(); ++j) CHECK(sv_out(j) <= 1e-10);
}

TEST_CASE("svt is nonexpansive") {
  Rng rng(9);
  for (int rep = 0; rep < 25; ++rep) {
    MatrixXd a = rng.normal_matrix(5, 7), b = rng.normal_matrix(5, 7);
    const double lambda = 0.3 + rep * 0.05;
    CHECK((svt(a, lambda) - svt(b, lambda)).norm() <= (a - b).norm() + 1e-12);
  }
}

TEST_CASE("fit_nn: lambda zero matches OLS") {
  Dgp dgp = small_dgp(31);
  TimeSeries ts = simulate(dgp.model, 120, 100, 53);
  Design d = build_design(ts, 2);
  ConvexFit fit = fit_nn(d, 0.0);
  Tensor3d ols = fit_ols(d);
  CHECK(fit.converged);
  CHECK((fit.coeff - ols).norm() <= 1e-6 * std::max(1.0, ols.norm()));
}

TEST_CASE("fit_nn: large lambda collapses to zero (prox fixed point at 0)") {
  Dgp dgp = small_dgp(37);
  TimeSeries ts = simulate(dgp.model, 100, 100, 59);
  Design d = build_design(ts, 2);
  const double lam = 2.0 * Eigen::JacobiSVD<MatrixXd>(d.X.transpose() * d.Y)
                               .singularValues()(0) /
                     static_cast<double>(d.t_eff());
  ConvexFit fit = fit_nn(d, lam * 1.001);
  CHECK(fit.coeff.norm() <= 1e-10);
}

TEST_CASE("fit_nn: prox fixed-point residual small at solution") {
  Dgp dgp = small_dgp(41);
  TimeSeries ts = simulate(dgp.model, 150, 100, 61);
  Design d = build_design(ts, 2);
  const double lambda = 0.05;
  ConvexFit fit = fit_nn(d, lambda, {1e-12, 20000, true});
  DesignStats stats = compute_stats(d);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(stats.sxx, Eigen::EigenvaluesOnly);
  const double step = static_cast<double>(stats.t_eff) / (2.0 * es.eigenvalues().maxCoeff());
  const MatrixXd b = matricize(fit.coeff, 1);
  const MatrixXd grad = 2.0 / stats.t_eff * (b * stats.sxx - stats.sxy.transpose());
  const MatrixXd fixed_point = svt(b - step * grad, step * lambda);
  CHECK((fixed_point - b).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, b.cwiseAbs().maxCoeff()));
}

TEST_CASE("fit_nn objective trace is nonincreasing") {
  Dgp dgp = small_dgp(43);
  TimeSeries ts = simulate(dgp.model, 100, 100, 67);
  Design d = build_design(ts, 2);
  ConvexFit fit = fit_nn(d, 0.02);
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-12);
}

TEST_CASE("fit_lasso: lambda zero matches OLS, huge lambda gives zero") {
  Dgp dgp = small_dgp(47);
  TimeSeries ts = simulate(dgp.model, 120, 100, 71);
  Design d = build_design(ts, 2);
  ConvexFit fit0 = fit_lasso(d, 0.0);
  Tensor3d ols = fit_ols(d);
  CHECK((fit0.coeff - ols).norm() <= 1e-6 * std::max(1.0, ols.norm()));

  const double lam_max =
      2.0 * (d.X.transpose() * d.Y).cwiseAbs().maxCoeff() / d.t_eff();
  ConvexFit fit_big = fit_lasso(d, lam_max * 1.01);
  CHECK(fit_big.coeff.norm() == 0.0);
}

TEST_CASE("fit_lasso satisfies the KKT conditions") {
  Dgp dgp = small_dgp(53);
  TimeSeries ts = simulate(dgp.model, 150, 100, 73);
  Design d = build_design(ts, 2);
  const double lambda = 0.05;
  ConvexFit fit = fit_lasso(d, lambda, {1e-12, 20000, true});
  DesignStats stats = compute_stats(d);
  const MatrixXd b = matricize(fit.coeff, 1);
  const MatrixXd grad = 2.0 / stats.t_eff * (b * stats.sxx - stats.sxy.transpose());
  const double scale = std::max(1.0, grad.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      if (b(i, j) != 0.0)
        CHECK(std::abs(grad(i, j) + lambda * (b(i, j) > 0 ? 1.0 : -1.0)) <= 1e-5 * scale);
      else
        CHECK(std::abs(grad(i, j)) <= lambda + 1e-5 * scale);
    }
}

TEST_CASE("convex fits are deterministic functions of the design") {
  Dgp dgp = small_dgp(59);
  TimeSeries ts = simulate(dgp.model, 100, 100, 79);
  Design d = build_design(ts, 2);
  ConvexFit a = fit_nn(d, 0.03), b = fit_nn(d, 0.03);
  CHECK((a.coeff - b.coeff).norm() == 0.0);
}
