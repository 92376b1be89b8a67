#include "mlrvar/var_process.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "mlrvar/rng.hpp"

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd companion_matrix(const Tensor3d& coeff) {
  const Index n = coeff.dim(1), p = coeff.dim(3);
  if (coeff.dim(2) != n)
    throw std::invalid_argument("companion_matrix: coefficient tensor must be N x N x P");
  MatrixXd f = MatrixXd::Zero(n * p, n * p);
  f.topRows(n) = matricize(coeff, 1);
  if (p > 1) f.block(n, 0, n * (p - 1), n * (p - 1)).setIdentity();
  return f;
}

StationarityReport is_stationary(const Tensor3d& coeff, double tol_margin) {
  StationarityReport rep;
  const MatrixXd f = companion_matrix(coeff);
  if (f.cwiseAbs().maxCoeff() == 0.0) {
    rep.spectral_radius = 0.0;
    rep.stationary = true;
    return rep;
  }
  Eigen::EigenSolver<MatrixXd> es(f, /*computeEigenvectors=*/false);
  rep.spectral_radius = es.eigenvalues().cwiseAbs().maxCoeff();
  rep.stationary = rep.spectral_radius < 1.0 - tol_margin;
  return rep;
}

void validate_model(const VarModel& model) {
  const Index n = model.coeff.dim(1);
  if (model.coeff.dim(2) != n)
    throw std::invalid_argument("VarModel: coefficient tensor must be N x N x P");
  if (model.sigma_eps.rows() != n || model.sigma_eps.cols() != n)
    throw std::invalid_argument("VarModel: sigma_eps must be N x N");
  const double scale = std::max(1.0, model.sigma_eps.cwiseAbs().maxCoeff());
  if ((model.sigma_eps - model.sigma_eps.transpose()).cwiseAbs().maxCoeff() >
      1e-12 * scale)
    throw std::invalid_argument("VarModel: sigma_eps must be symmetric");
  if (model.sigma_eps.cwiseAbs().maxCoeff() > 0.0) {
    Eigen::LLT<MatrixXd> llt(model.sigma_eps);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("VarModel: sigma_eps must be positive definite");
  }
}

namespace {

// Discrete Lyapunov solve X = F X F' + Q by doubling:
//   X <- X + F X F',  F <- F F
// covers 2^k terms of the series after k steps; quadratic convergence for
// spectral radius < 1.
MatrixXd solve_discrete_lyapunov(const MatrixXd& f, const MatrixXd& q) {
  MatrixXd x = q;
  MatrixXd fk = f;
  for (int iter = 0; iter < 128; ++iter) {
    const MatrixXd incr = fk * x * fk.transpose();
    x += incr;
    const double rel = incr.cwiseAbs().maxCoeff() /
                       std::max(1e-300, x.cwiseAbs().maxCoeff());
    if (rel < 1e-16) return 0.5 * (x + x.transpose());
    fk = fk * fk;
  }
  throw std::runtime_error("solve_discrete_lyapunov: no convergence (model too close to the unit circle)");
}

}  // namespace

Autocovariance autocovariance(const VarModel& model, int maxlag) {
  validate_model(model);
  const auto rep = is_stationary(model.coeff);
  if (!rep.stationary)
    throw std::domain_error("autocovariance: model is not stationary (radius " +
                            std::to_string(rep.spectral_radius) + ")");
  const Index n = model.n_series(), p = model.lag_order();
  const MatrixXd f = companion_matrix(model.coeff);
  MatrixXd q = MatrixXd::Zero(n * p, n * p);
  q.topLeftCorner(n, n) = model.sigma_eps;

  Autocovariance out;
  out.gamma_star = solve_discrete_lyapunov(f, q);

  out.gamma.reserve(static_cast<std::size_t>(maxlag) + 1);
  for (int j = 0; j <= maxlag; ++j) {
    if (j < p) {
      out.gamma.push_back(out.gamma_star.block(0, n * j, n, n));
    } else {
      // Yule-Walker recursion Gamma_j = sum_k A_k Gamma_{j-k}
      MatrixXd g = MatrixXd::Zero(n, n);
      for (Index k = 1; k <= p; ++k) {
        const int lag = j - static_cast<int>(k);
        const MatrixXd gl = lag >= 0
            ? out.gamma[static_cast<std::size_t>(lag)]
            : MatrixXd(out.gamma[static_cast<std::size_t>(-lag)].transpose());
        g += model.coeff.slice(k - 1) * gl;
      }
      out.gamma.push_back(g);
    }
  }
  return out;
}

TimeSeries simulate(const VarModel& model, Index T, Index burn_in,
                    std::uint64_t seed, double noise_scale) {
  validate_model(model);
  if (T < 1) throw std::invalid_argument("simulate: T must be positive");
  const auto rep = is_stationary(model.coeff);
  if (!rep.stationary)
    throw std::domain_error("simulate: model is not stationary (radius " +
                            std::to_string(rep.spectral_radius) + ")");
  const Index n = model.n_series(), p = model.lag_order();
  Eigen::LLT<MatrixXd> llt(model.sigma_eps);
  const MatrixXd chol = llt.matrixL();

  Rng rng(seed);
  MatrixXd history = MatrixXd::Zero(p, n);  // last p observations, newest last
  TimeSeries ts;
  ts.values.resize(T, n);
  for (Index t = 0; t < burn_in + T; ++t) {
    VectorXd y = VectorXd::Zero(n);
    for (Index k = 0; k < p; ++k)
      y += model.coeff.slice(k) * history.row(p - 1 - k).transpose();
    if (noise_scale != 0.0) y += noise_scale * (chol * rng.normal_vector(n));
    if (p > 1) history.topRows(p - 1) = history.bottomRows(p - 1).eval();
    history.row(p - 1) = y.transpose();
    if (t >= burn_in) ts.values.row(t - burn_in) = y.transpose();
  }
  return ts;
}

std::pair<double, double> mu_extremes(const Tensor3d& coeff, int grid_size) {
  if (grid_size < 64)
    throw std::invalid_argument("mu_extremes: grid_size must be at least 64");
  const Index n = coeff.dim(1), p = coeff.dim(3);
  double mu_min = std::numeric_limits<double>::infinity();
  double mu_max = -std::numeric_limits<double>::infinity();
  for (int g = 0; g < grid_size; ++g) {
    const double theta = -M_PI + 2.0 * M_PI * g / grid_size;
    MatrixXcd m = MatrixXcd::Identity(n, n);
    for (Index k = 1; k <= p; ++k)
      m -= coeff.slice(k - 1) * std::exp(std::complex<double>(0.0, k * theta));
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(m.adjoint() * m,
                                                Eigen::EigenvaluesOnly);
    mu_min = std::min(mu_min, es.eigenvalues().minCoeff());
    mu_max = std::max(mu_max, es.eigenvalues().maxCoeff());
  }
  return {mu_min, mu_max};
}

MatrixXd random_orthonormal(Index m, Index n, std::uint64_t seed) {
  Rng rng(seed);
  if (m < n) throw std::invalid_argument("random_orthonormal: need m >= n");
  MatrixXd g = rng.normal_matrix(m, m);
  Eigen::JacobiSVD<MatrixXd> svd(g, Eigen::ComputeThinU);
  MatrixXd u = svd.matrixU().leftCols(n);
  normalize_column_signs(u);
  return u;
}

namespace {

VectorXd unit_normal_vector(Index len, Rng& rng) {
  VectorXd v = rng.normal_vector(len);
  return v / v.norm();
}

std::array<MatrixXd, 3> sparse_factors_impl(const SparseFactorSpec& spec, Rng& rng) {
  const auto [r1, r2, r3] = spec.ranks;
  const auto [s1, s2, s3] = spec.sparsity;
  if (s1 < 1 || s2 < 1 || s3 < 1 || r1 < 1 || r2 < 1 || r3 < 1)
    throw std::invalid_argument("generate_sparse_factors: ranks and sparsity must be positive");
  if (s1 * r1 > spec.N || s2 * r2 > spec.N)
    throw std::invalid_argument("generate_sparse_factors: disjoint supports do not fit in N");
  if (1 + (r3 - 1) * s3 > spec.P)
    throw std::invalid_argument("generate_sparse_factors: disjoint supports do not fit in P");

  std::array<MatrixXd, 3> us;
  for (int mode = 0; mode < 2; ++mode) {
    const Index r = mode == 0 ? r1 : r2, s = mode == 0 ? s1 : s2;
    MatrixXd u = MatrixXd::Zero(spec.N, r);
    for (Index j = 0; j < r; ++j)
      u.block(j * s, j, s, 1) = unit_normal_vector(s, rng);
    us[static_cast<std::size_t>(mode)] = std::move(u);
  }
  MatrixXd u3 = MatrixXd::Zero(spec.P, r3);
  u3(0, 0) = 1.0;
  for (Index j = 1; j < r3; ++j)
    u3.block(1 + (j - 1) * s3, j, s3, 1) = unit_normal_vector(s3, rng);
  us[2] = std::move(u3);
  return us;
}

}  // namespace

std::array<MatrixXd, 3> generate_sparse_factors(const SparseFactorSpec& spec,
                                                std::uint64_t seed) {
  Rng rng(seed);
  return sparse_factors_impl(spec, rng);
}

DfmSimulation simulate_dfm(const DfmSpec& spec, Index T, Index burn_in,
                           std::uint64_t seed) {
  const Index n = spec.loadings.rows(), r = spec.loadings.cols();
  Rng rng(seed);
  Eigen::LLT<MatrixXd> lobs(spec.sigma_obs), lfac(spec.sigma_factor);
  const MatrixXd cobs = lobs.matrixL(), cfac = lfac.matrixL();

  DfmSimulation sim;
  sim.ys.values.resize(T, n);
  sim.factors.resize(T, r);
  VectorXd f = VectorXd::Zero(r);
  for (Index t = 0; t < burn_in + T; ++t) {
    f = spec.transition * f + cfac * rng.normal_vector(r);
    const VectorXd y = spec.loadings * f + cobs * rng.normal_vector(n);
    if (t >= burn_in) {
      sim.factors.row(t - burn_in) = f.transpose();
      sim.ys.values.row(t - burn_in) = y.transpose();
    }
  }
  return sim;
}

namespace {

Tensor3d random_core(std::array<Index, 3> ranks, Rng& rng) {
  Tensor3d g(ranks[0], ranks[1], ranks[2]);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  double smin = std::numeric_limits<double>::infinity();
  for (int mode = 1; mode <= 3; ++mode) {
    Eigen::JacobiSVD<MatrixXd> svd(matricize(g, mode));
    smin = std::min(smin, svd.singularValues()(ranks[static_cast<std::size_t>(mode - 1)] - 1));
  }
  g *= 1.0 / smin;  // min_i sigma_{r_i}(G_(i)) = 1
  return g;
}

}  // namespace

Dgp make_dgp(DgpKind kind, const DgpParams& params, std::uint64_t seed) {
  Rng rng(seed);
  Dgp dgp;
  dgp.kind = kind;

  if (kind == DgpKind::dfm1 || kind == DgpKind::dfm2) {
    DfmSpec spec;
    if (kind == DgpKind::dfm1) {
      spec.loadings = unit_normal_vector(params.N, rng);
      spec.transition = MatrixXd::Constant(1, 1, 0.5);
      spec.sigma_factor = MatrixXd::Identity(1, 1);
    } else {
      MatrixXd g = rng.normal_matrix(params.N, params.N);
      Eigen::JacobiSVD<MatrixXd> svd(g, Eigen::ComputeThinU);
      spec.loadings = svd.matrixU().leftCols(3);
      spec.transition = VectorXd{{0.6, 0.5, 0.4}}.asDiagonal();
      spec.sigma_factor = MatrixXd::Identity(3, 3);
    }
    spec.sigma_obs = 0.5 * MatrixXd::Identity(params.N, params.N);
    dgp.dfm = std::move(spec);
    return dgp;
  }

  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    TuckerDecompd d;
    std::array<Index, 3> ranks = params.ranks;
    if (kind == DgpKind::superdiagonal_core) {
      if (params.superdiagonal.size() == 0)
        throw std::invalid_argument("make_dgp: superdiagonal values required");
      const Index r = params.superdiagonal.size();
      ranks = {r, r, r};
      d.core = Tensor3d(r, r, r);
      for (Index j = 0; j < r; ++j) d.core(j, j, j) = params.superdiagonal(j);
    } else {
      d.core = random_core(ranks, rng);
    }

    if (kind == DgpKind::sparse_factor) {
      SparseFactorSpec sp;
      sp.N = params.N;
      sp.P = params.P;
      sp.ranks = ranks;
      sp.sparsity = params.sparsity;
      auto us = sparse_factors_impl(sp, rng);
      d.U1 = std::move(us[0]);
      d.U2 = std::move(us[1]);
      d.U3 = std::move(us[2]);
    } else {
      auto orth = [&](Index m, Index r) {
        MatrixXd g = rng.normal_matrix(m, m);
        Eigen::JacobiSVD<MatrixXd> svd(g, Eigen::ComputeThinU);
        MatrixXd u = svd.matrixU().leftCols(r);
        normalize_column_signs(u);
        return u;
      };
      d.U1 = orth(params.N, ranks[0]);
      d.U2 = orth(params.N, ranks[1]);
      d.U3 = orth(params.P, ranks[2]);
    }

    Tensor3d coeff = reconstruct(d);
    if (is_stationary(coeff).stationary) {
      dgp.model.coeff = std::move(coeff);
      dgp.model.sigma_eps = MatrixXd::Identity(params.N, params.N);
      dgp.truth = std::move(d);
      return dgp;
    }
  }
  throw std::runtime_error("make_dgp: no stationary draw within max_attempts");
}

VectorXd one_step_forecast(const Tensor3d& coeff, const MatrixXd& values) {
  const Index n = coeff.dim(1), p = coeff.dim(3);
  if (values.cols() != n || values.rows() < p)
    throw std::invalid_argument("one_step_forecast: series shape incompatible with model");
  const Index t = values.rows();
  VectorXd y = VectorXd::Zero(n);
  for (Index k = 0; k < p; ++k)
    y += coeff.slice(k) * values.row(t - 1 - k).transpose();
  return y;
}

}  // namespace mlrvar
