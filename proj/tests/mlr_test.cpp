#include "doctest.h"

#include <cmath>

#include <Eigen/Dense>

#include "mlrvar/mlr.hpp"
#include "mlrvar/regression_core.hpp"
#include "mlrvar/rng.hpp"
#include "mlrvar/var_process.hpp"

using namespace mlrvar;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dgp rank222_dgp(std::uint64_t seed, Eigen::Index N = 6, Eigen::Index P = 3) {
  DgpParams params;
  params.N = N;
  params.P = P;
  params.ranks = {2, 2, 2};
  return make_dgp(DgpKind::scaled_random_core, params, seed);
}

Design noiseless_design(const VarModel& model, Eigen::Index T, std::uint64_t seed) {
  TimeSeries ts = simulate(model, T, 300, seed);
  Design d = build_design(ts, model.lag_order());
  d.Y = d.X * matricize(model.coeff, 1).transpose();
  return d;
}

}  // namespace

TEST_CASE("fit_mlr: exact recovery from noiseless rank-(2,2,2) data") {
  Dgp dgp = rank222_dgp(1);
  Design d = noiseless_design(dgp.model, 60, 3);
  MlrFit fit = fit_mlr(d, {2, 2, 2}, MlrInitStrategy::ols);
  CHECK(fit.converged);
  CHECK((fit.coeff - dgp.model.coeff).norm() <= 1e-6 * dgp.model.coeff.norm());
}

TEST_CASE("fit_mlr: objective trace nonincreasing and below the init objective") {
  Dgp dgp = rank222_dgp(5);
  TimeSeries ts = simulate(dgp.model, 150, 300, 7);
  Design d = build_design(ts, dgp.model.lag_order());
  MlrFit fit = fit_mlr(d, {2, 2, 2}, MlrInitStrategy::rrr);
  REQUIRE(fit.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-10);
  CHECK(fit.objective_trace.back() <= fit.objective_trace.front() + 1e-10);
}

TEST_CASE("fit_mlr: matricization ranks respect the constraint") {
  Dgp dgp = rank222_dgp(9);
  TimeSeries ts = simulate(dgp.model, 200, 300, 11);
  Design d = build_design(ts, dgp.model.lag_order());
  MlrFit fit = fit_mlr(d, {2, 2, 2}, MlrInitStrategy::rrr);
  for (int mode = 1; mode <= 3; ++mode) {
    VectorXd sv = Eigen::JacobiSVD<MatrixXd>(matricize(fit.coeff, mode)).singularValues();
    for (Eigen::Index j = 2; j < sv.size(); ++j) CHECK(sv(j) <= 1e-8 * sv(0));
  }
}

TEST_CASE("fit_mlr: finalized factors orthonormal with positive leading entries") {
  Dgp dgp = rank222_dgp(13);
  TimeSeries ts = simulate(dgp.model, 150, 300, 17);
  Design d = build_design(ts, dgp.model.lag_order());
  MlrFit fit = fit_mlr(d, {2, 2, 2});
  for (const MatrixXd& u : {fit.decomp.U1, fit.decomp.U2, fit.decomp.U3}) {
    CHECK((u.transpose() * u - MatrixXd::Identity(u.cols(), u.cols()))
              .cwiseAbs()
              .maxCoeff() <= 1e-10);
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      for (Eigen::Index i = 0; i < u.rows(); ++i)
        if (std::abs(u(i, j)) > 1e-12 * u.col(j).cwiseAbs().maxCoeff()) {
          CHECK(u(i, j) > 0.0);
          break;
        }
    }
  }
  CHECK((fit.coeff - reconstruct(fit.decomp)).norm() <= 1e-10 * fit.coeff.norm());
}

TEST_CASE("fit_mlr: each block update zeroes its own gradient") {
  // after a converged run the gradient of the objective with respect to each
  // vectorized block vanishes at the final iterate
  Dgp dgp = rank222_dgp(19);
  TimeSeries ts = simulate(dgp.model, 200, 300, 23);
  Design d = build_design(ts, dgp.model.lag_order());
  MlrOptions tight;
  tight.tol = 1e-12;
  tight.max_cycles = 2000;
  MlrFit fit = fit_mlr(d, {2, 2, 2}, MlrInitStrategy::rrr, tight);
  const DesignStats stats = compute_stats(d);

  // numerical directional derivatives of the objective at the solution
  const TuckerDecompd& dec = fit.decomp;
  auto objective_of = [&](const TuckerDecompd& t) {
    return ls_objective(stats, matricize(reconstruct(t), 1));
  };
  const double base = objective_of(dec);
  const double scale = std::max(1.0, std::abs(base));
  Rng rng(71);
  for (int trial = 0; trial < 5; ++trial) {
    TuckerDecompd bumped = dec;
    const double h = 1e-6;
    bumped.U1 += h * rng.normal_matrix(dec.U1.rows(), dec.U1.cols());
    CHECK(objective_of(bumped) >= base - 1e-6 * scale * h);
  }
}

TEST_CASE("random_perturbed_init: zero override returns the preliminary estimate") {
  Tensor3d pre(3, 3, 2);
  pre(1, 2, 0) = 4.0;
  auto inits = random_perturbed_init(pre, 100, 1, 5, 0.0);
  REQUIRE(inits.size() == 1);
  CHECK((inits[0] - pre).norm() == 0.0);
}

TEST_CASE("random_perturbed_init: perturbation norm concentrates at the Gaussian mean") {
  Tensor3d pre(10, 10, 5);
  const Eigen::Index t_eff = 400;
  const double dim = static_cast<double>(pre.size());
  double mean_norm = 0.0;
  const int draws = 200;
  for (int s = 0; s < draws; ++s) {
    auto inits = random_perturbed_init(pre, t_eff, 1, 1000 + s);
    mean_norm += (inits[0] - pre).norm();
  }
  mean_norm /= draws;
  // ||N(0, I_dim)|| concentrates at sqrt(dim) for dim = N^2 P >> 1
  const double expected = std::sqrt(dim / static_cast<double>(t_eff));
  CHECK(std::abs(mean_norm - expected) <= 0.05 * expected);
}

TEST_CASE("multistart objective no worse than a single start") {
  Dgp dgp = rank222_dgp(29);
  TimeSeries ts = simulate(dgp.model, 120, 300, 31);
  Design d = build_design(ts, dgp.model.lag_order());
  const Tensor3d pre = fit_rrr(d, 2);
  MlrFit single = fit_mlr(d, {2, 2, 2}, pre);
  MlrFit multi = fit_mlr_multistart(d, {2, 2, 2}, pre, 4, 99);
  CHECK(multi.objective_trace.back() <= single.objective_trace.back() + 1e-9);
}

TEST_CASE("asymptotic_cov: Jacobian matches finite differences of the Tucker map") {
  // orientation check for the permutation-matrix blocks
  DgpParams params;
  params.N = 3;
  params.P = 2;
  params.ranks = {2, 2, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 41);
  const TuckerDecompd dec = hosvd_truncated(dgp.model.coeff, {2, 2, 2});
  AsymptoticCov cov = asymptotic_cov(dgp.model, dec, 2);

  const Eigen::Index n = 3, p = 2;
  auto map_vec = [&](const TuckerDecompd& t) {
    // same ordering as H: vec of the transposed mode-1 matricization
    MatrixXd a1t = matricize(reconstruct(t), 1).transpose();
    return VectorXd(Eigen::Map<VectorXd>(a1t.data(), a1t.size()));
  };
  const VectorXd base = map_vec(dec);
  const double h = 1e-7;
  Eigen::Index col = 0;
  auto check_block = [&](auto mutate, Eigen::Index count) {
    for (Eigen::Index idx = 0; idx < count; ++idx, ++col) {
      TuckerDecompd bumped = dec;
      mutate(bumped, idx, h);
      const VectorXd fd = (map_vec(bumped) - base) / h;
      CHECK((fd - cov.H.col(col)).cwiseAbs().maxCoeff() <= 1e-5);
    }
  };
  check_block([](TuckerDecompd& t, Eigen::Index idx, double eps) {
    t.core.data()[idx] += eps;
  }, 8);
  check_block([](TuckerDecompd& t, Eigen::Index idx, double eps) {
    t.U1.data()[idx] += eps;
  }, 6);
  check_block([](TuckerDecompd& t, Eigen::Index idx, double eps) {
    t.U2.data()[idx] += eps;
  }, 6);
  check_block([](TuckerDecompd& t, Eigen::Index idx, double eps) {
    t.U3.data()[idx] += eps;
  }, 4);
}

TEST_CASE("asymptotic_cov: PSD ordering MLR <= RRR <= OLS") {
  DgpParams params;
  params.N = 10;
  params.P = 5;
  params.ranks = {3, 3, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 43);
  const TuckerDecompd dec = hosvd_truncated(dgp.model.coeff, {3, 3, 2});
  AsymptoticCov cov = asymptotic_cov(dgp.model, dec, 3);

  auto min_eig = [](const MatrixXd& m) {
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (m + m.transpose()),
                                                   Eigen::EigenvaluesOnly)
        .eigenvalues()
        .minCoeff();
  };
  const double scale = cov.sigma_ols.diagonal().maxCoeff();
  CHECK(min_eig(cov.sigma_rrr - cov.sigma_mlr) >= -1e-7 * scale);
  CHECK(min_eig(cov.sigma_ols - cov.sigma_rrr) >= -1e-7 * scale);
  CHECK(min_eig(cov.sigma_mlr) >= -1e-8 * scale);

  // J^{-1} Kronecker identity
  const MatrixXd jinv = cov.J.ldlt().solve(MatrixXd::Identity(cov.J.rows(), cov.J.cols()));
  CHECK((jinv - cov.sigma_ols).cwiseAbs().maxCoeff() <= 1e-8 * scale);
}

TEST_CASE("asymptotic_cov: saturated parameterization recovers the OLS covariance") {
  Rng rng(47);
  VarModel model;
  MatrixXd a1 = rng.normal_matrix(3, 3);
  a1 *= 0.5 / Eigen::EigenSolver<MatrixXd>(a1).eigenvalues().cwiseAbs().maxCoeff();
  model.coeff = tensorize<double>(a1, {3, 3, 1}, 1);
  model.sigma_eps = MatrixXd::Identity(3, 3);
  const TuckerDecompd dec = hosvd_truncated(model.coeff, {3, 3, 1});
  AsymptoticCov cov = asymptotic_cov(model, dec, 3);
  const double scale = cov.sigma_ols.cwiseAbs().maxCoeff();
  CHECK((cov.sigma_mlr - cov.sigma_ols).cwiseAbs().maxCoeff() <= 1e-6 * scale);
}

TEST_CASE("asymptotic_cov: projection matrix is idempotent") {
  DgpParams params;
  params.N = 5;
  params.P = 3;
  params.ranks = {2, 2, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 53);
  const TuckerDecompd dec = hosvd_truncated(dgp.model.coeff, {2, 2, 2});
  AsymptoticCov cov = asymptotic_cov(dgp.model, dec, 2);
  const MatrixXd pi = cov.sigma_mlr * cov.J;
  CHECK((pi * pi - pi).cwiseAbs().maxCoeff() <= 1e-8 * pi.cwiseAbs().maxCoeff());
}

TEST_CASE("zero-residual designs give zero estimator variance across replications") {
  // the zero-noise limit: response replaced by its exact conditional mean
  DgpParams params;
  params.N = 4;
  params.P = 2;
  params.ranks = {2, 2, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 59);
  MatrixXd draws(10, dgp.model.coeff.size());
  for (int r = 0; r < 10; ++r) {
    Design d = noiseless_design(dgp.model, 60, 100 + static_cast<std::uint64_t>(r));
    draws.row(r) = fit_mlr(d, {2, 2, 2}, MlrInitStrategy::ols).coeff.vec().transpose();
  }
  const VectorXd mean = draws.colwise().mean();
  const MatrixXd centered = draws.rowwise() - mean.transpose();
  CHECK(centered.cwiseAbs().maxCoeff() <= 1e-7);  // variance ~ 0
  CHECK((mean - dgp.model.coeff.vec()).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("empirical_vs_asymptotic: EVar tracks AVar for OLS at moderate T") {
  DgpParams params;
  params.N = 4;
  params.P = 2;
  params.ranks = {2, 2, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 67);
  auto rep = empirical_vs_asymptotic(dgp.model, {2, 2, 2}, 2000, 60, 71);
  CHECK(std::abs(rep.ols.evar - rep.ols.avar) <= 0.35 * rep.ols.avar);
  CHECK(rep.mlr.evar <= rep.ols.evar);
}
