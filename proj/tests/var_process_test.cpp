#include "doctest.h"

#include <cmath>
#include <complex>

#include <Eigen/Dense>

#include "mlrvar/rng.hpp"
#include "mlrvar/tensor3.hpp"
#include "mlrvar/var_process.hpp"

using namespace mlrvar;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VarModel scalar_ar1(double a, double sigma2 = 1.0) {
  VarModel m;
  m.coeff = Tensor3d(1, 1, 1);
  m.coeff(0, 0, 0) = a;
  m.sigma_eps = MatrixXd::Constant(1, 1, sigma2);
  return m;
}

}  // namespace

TEST_CASE("is_stationary: zero coefficients") {
  Tensor3d zero(4, 4, 3);
  auto rep = is_stationary(zero);
  CHECK(rep.stationary);
  CHECK(rep.spectral_radius == 0.0);
}

TEST_CASE("is_stationary: P=1 reduces to spectral radius of A1") {
  Tensor3d half(3, 3, 1);
  for (int i = 0; i < 3; ++i) half(i, i, 0) = 0.5;
  auto rep = is_stationary(half);
  CHECK(rep.stationary);
  CHECK(rep.spectral_radius == doctest::Approx(0.5).epsilon(1e-12));

  Tensor3d eye(3, 3, 1);
  for (int i = 0; i < 3; ++i) eye(i, i, 0) = 1.0;
  CHECK_FALSE(is_stationary(eye).stationary);
}

TEST_CASE("is_stationary: scalar AR(2) radius matches polynomial-root oracle") {
  Tensor3d coeff(1, 1, 2);
  coeff(0, 0, 0) = 0.5;
  coeff(0, 0, 1) = 0.3;
  auto rep = is_stationary(coeff);
  // roots of 1 - 0.5 z - 0.3 z^2 = 0, i.e. 0.3 z^2 + 0.5 z - 1 = 0;
  // companion eigenvalues are their inverses
  const double r1 = (-0.5 + std::sqrt(0.25 + 1.2)) / 0.6;
  const double r2 = (-0.5 - std::sqrt(0.25 + 1.2)) / 0.6;
  const double min_root = std::min(std::abs(r1), std::abs(r2));
  CHECK(rep.spectral_radius == doctest::Approx(1.0 / min_root).epsilon(1e-10));
  CHECK(rep.stationary);
}

TEST_CASE("autocovariance: white noise") {
  VarModel m;
  m.coeff = Tensor3d(2, 2, 1);
  m.sigma_eps = MatrixXd::Identity(2, 2) * 2.0;
  auto ac = autocovariance(m, 3);
  CHECK((ac.gamma[0] - m.sigma_eps).cwiseAbs().maxCoeff() <= 1e-14);
  for (int j = 1; j <= 3; ++j)
    CHECK(ac.gamma[static_cast<std::size_t>(j)].cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("autocovariance: scalar AR(1) closed form") {
  auto ac = autocovariance(scalar_ar1(0.5), 2);
  CHECK(ac.gamma[0](0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(ac.gamma[1](0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(ac.gamma[2](0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("autocovariance: gamma_star symmetric positive definite") {
  DgpParams params;
  params.N = 4;
  params.P = 3;
  params.ranks = {2, 2, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 99);
  auto ac = autocovariance(dgp.model, 2);
  CHECK((ac.gamma_star - ac.gamma_star.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
  Eigen::LLT<MatrixXd> llt(ac.gamma_star);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("autocovariance rejects non-stationary models") {
  VarModel m;
  m.coeff = Tensor3d(1, 1, 1);
  m.coeff(0, 0, 0) = 1.0;
  m.sigma_eps = MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(autocovariance(m, 1), std::domain_error);
}

TEST_CASE("autocovariance matches a long-simulation sample estimate") {
  DgpParams params;
  params.N = 3;
  params.P = 2;
  params.ranks = {2, 2, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 12345);
  auto ac = autocovariance(dgp.model, 0);

  const Eigen::Index T = 200000;
  TimeSeries ts = simulate(dgp.model, T, 500, 777);
  MatrixXd centered = ts.values.rowwise() - ts.values.colwise().mean();
  MatrixXd sample = centered.transpose() * centered / static_cast<double>(T);
  CHECK((sample - ac.gamma[0]).cwiseAbs().maxCoeff() <=
        0.02 * ac.gamma[0].cwiseAbs().maxCoeff());
}

TEST_CASE("simulate: zero coefficients with zeroed innovations") {
  VarModel m;
  m.coeff = Tensor3d(3, 3, 2);
  m.sigma_eps = MatrixXd::Identity(3, 3);
  TimeSeries ts = simulate(m, 50, 100, 1, /*noise_scale=*/0.0);
  CHECK(ts.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulate: deterministic given seed") {
  auto m = scalar_ar1(0.7);
  TimeSeries a = simulate(m, 100, 50, 42);
  TimeSeries b = simulate(m, 100, 50, 42);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  TimeSeries c = simulate(m, 100, 50, 43);
  CHECK((a.values - c.values).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("simulate: AR(1) lag-1 autocorrelation near 0.5") {
  auto m = scalar_ar1(0.5);
  TimeSeries ts = simulate(m, 100000, 500, 2024);
  VectorXd y = ts.values.col(0);
  const double mean = y.mean();
  double num = 0.0, den = 0.0;
  for (Eigen::Index t = 1; t < y.size(); ++t)
    num += (y(t) - mean) * (y(t - 1) - mean);
  for (Eigen::Index t = 0; t < y.size(); ++t) den += (y(t) - mean) * (y(t) - mean);
  CHECK(std::abs(num / den - 0.5) <= 0.01);
}

TEST_CASE("mu_extremes: identity polynomial when coefficients vanish") {
  Tensor3d zero(3, 3, 2);
  auto [lo, hi] = mu_extremes(zero, 128);
  CHECK(lo == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mu_extremes: scalar closed form (1 -+ a)^2") {
  Tensor3d a(1, 1, 1);
  a(0, 0, 0) = 0.5;
  auto [lo, hi] = mu_extremes(a, 1024);
  CHECK(lo == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(hi == doctest::Approx(2.25).epsilon(1e-6));
}

TEST_CASE("mu_extremes: ordering and nested-grid monotonicity") {
  Rng rng(5);
  Tensor3d t(3, 3, 2);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 0.2 * rng.normal();
  auto [lo64, hi64] = mu_extremes(t, 64);
  auto [lo128, hi128] = mu_extremes(t, 128);
  auto [lo256, hi256] = mu_extremes(t, 256);
  CHECK(lo64 <= hi64);
  CHECK(lo128 <= lo64);
  CHECK(lo256 <= lo128);
  CHECK(hi128 >= hi64);
}

TEST_CASE("random_orthonormal: orthonormal, deterministic, unit determinant") {
  MatrixXd u = random_orthonormal(6, 4, 11);
  CHECK((u.transpose() * u - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-10);
  MatrixXd v = random_orthonormal(6, 4, 11);
  CHECK((u - v).cwiseAbs().maxCoeff() == 0.0);

  MatrixXd sq = random_orthonormal(5, 5, 13);
  CHECK(std::abs(std::abs(sq.determinant()) - 1.0) <= 1e-8);
  CHECK_THROWS_AS(random_orthonormal(3, 4, 1), std::invalid_argument);
}

TEST_CASE("generate_sparse_factors: template pattern for (2,2,2,3,3,2)") {
  SparseFactorSpec spec;
  spec.N = 10;
  spec.P = 5;
  spec.ranks = {2, 2, 2};
  spec.sparsity = {3, 3, 2};
  auto us = generate_sparse_factors(spec, 7);

  // U3 = [1 0; 0 e; 0 0] with e a unit 2-vector
  const MatrixXd& u3 = us[2];
  CHECK(u3(0, 0) == 1.0);
  CHECK(u3.col(0).tail(4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(u3(0, 1) == 0.0);
  CHECK(u3.col(1).segment(1, 2).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(u3.col(1).tail(2).cwiseAbs().maxCoeff() == 0.0);

  for (int i = 0; i < 3; ++i) {
    const MatrixXd& u = us[static_cast<std::size_t>(i)];
    MatrixXd gram = u.transpose() * u;
    for (Eigen::Index a = 0; a < gram.rows(); ++a)
      for (Eigen::Index b = 0; b < gram.cols(); ++b) {
        if (a == b)
          CHECK(gram(a, b) == doctest::Approx(1.0).epsilon(1e-12));
        else
          CHECK(gram(a, b) == 0.0);  // disjoint supports: exactly zero
      }
    const Eigen::Index s = spec.sparsity[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < u.cols(); ++j)
      CHECK((u.col(j).array() != 0.0).count() <= s);
  }
}

TEST_CASE("generate_sparse_factors rejects infeasible specs") {
  SparseFactorSpec spec;
  spec.N = 5;
  spec.P = 3;
  spec.ranks = {2, 2, 2};
  spec.sparsity = {3, 3, 3};  // 3*2 > 5
  CHECK_THROWS_AS(generate_sparse_factors(spec, 1), std::invalid_argument);
}

TEST_CASE("make_dgp superdiagonal: matricization singular values equal the diagonal") {
  DgpParams params;
  params.N = 10;
  params.P = 5;
  params.superdiagonal = VectorXd{{2.0, 2.0, 2.0}};
  Dgp dgp = make_dgp(DgpKind::superdiagonal_core, params, 31);
  CHECK(is_stationary(dgp.model.coeff).stationary);
  for (int mode = 1; mode <= 3; ++mode) {
    VectorXd sv = Eigen::JacobiSVD<MatrixXd>(matricize(dgp.model.coeff, mode))
                      .singularValues();
    for (int j = 0; j < 3; ++j) CHECK(sv(j) == doctest::Approx(2.0).epsilon(1e-10));
    for (Eigen::Index j = 3; j < sv.size(); ++j) CHECK(sv(j) <= 1e-10);
  }
}

TEST_CASE("make_dgp scaled_random_core: smallest retained singular value is one") {
  DgpParams params;
  params.N = 10;
  params.P = 5;
  params.ranks = {3, 3, 2};
  Dgp dgp = make_dgp(DgpKind::scaled_random_core, params, 17);
  REQUIRE(dgp.truth.has_value());
  double smin = std::numeric_limits<double>::infinity();
  for (int mode = 1; mode <= 3; ++mode) {
    VectorXd sv = Eigen::JacobiSVD<MatrixXd>(matricize(dgp.truth->core, mode))
                      .singularValues();
    smin = std::min(smin, sv(dgp.truth->core.dim(mode) - 1));
  }
  CHECK(smin == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("make_dgp dfm1: unit-norm loading and scalar transition 0.5") {
  DgpParams params;
  params.N = 10;
  Dgp dgp = make_dgp(DgpKind::dfm1, params, 23);
  REQUIRE(dgp.dfm.has_value());
  CHECK(dgp.dfm->loadings.rows() == 10);
  CHECK(dgp.dfm->loadings.cols() == 1);
  CHECK(dgp.dfm->loadings.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dgp.dfm->transition(0, 0) == 0.5);
  CHECK((dgp.dfm->sigma_obs - 0.5 * MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("make_dgp outputs are stationary across kinds and seeds") {
  DgpParams params;
  params.N = 10;
  params.P = 5;
  params.ranks = {3, 3, 3};
  params.sparsity = {3, 3, 2};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (auto kind : {DgpKind::scaled_random_core, DgpKind::sparse_factor}) {
      Dgp dgp = make_dgp(kind, params, seed);
      CHECK(is_stationary(dgp.model.coeff).stationary);
    }
  }
}

TEST_CASE("one_step_forecast: scalar model reads last observation") {
  Tensor3d a(1, 1, 1);
  a(0, 0, 0) = 0.8;
  MatrixXd values(3, 1);
  values << 1.0, 2.0, 5.0;
  VectorXd f = one_step_forecast(a, values);
  CHECK(f(0) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("simulate_dfm: deterministic and correctly shaped") {
  DgpParams params;
  params.N = 10;
  Dgp dgp = make_dgp(DgpKind::dfm2, params, 5);
  auto sim1 = simulate_dfm(*dgp.dfm, 200, 100, 9);
  auto sim2 = simulate_dfm(*dgp.dfm, 200, 100, 9);
  CHECK(sim1.ys.values.rows() == 200);
  CHECK(sim1.factors.cols() == 3);
  CHECK((sim1.ys.values - sim2.ys.values).cwiseAbs().maxCoeff() == 0.0);
}
