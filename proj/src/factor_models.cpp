#include "mlrvar/factor_models.hpp"

#include <cmath>
#include <stdexcept>

#include "mlrvar/regression_core.hpp"

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

SfmFit fit_sfm(const TimeSeries& ts, Index r) {
  const Index t = ts.length(), n = ts.width();
  if (r < 1 || r > std::min(t, n))
    throw std::invalid_argument("fit_sfm: factor count out of range");
  Eigen::JacobiSVD<MatrixXd> svd(ts.values, Eigen::ComputeThinU);
  MatrixXd u = svd.matrixU().leftCols(r);
  SfmFit fit;
  fit.factors = std::sqrt(static_cast<double>(t)) * u;
  fit.loadings = ts.values.transpose() * fit.factors / static_cast<double>(t);
  // sign convention on the loadings, factors flipped in tandem
  for (Index j = 0; j < r; ++j) {
    const double cutoff = 1e-12 * fit.loadings.col(j).cwiseAbs().maxCoeff();
    for (Index i = 0; i < n; ++i) {
      if (std::abs(fit.loadings(i, j)) > cutoff) {
        if (fit.loadings(i, j) < 0) {
          fit.loadings.col(j) = -fit.loadings.col(j);
          fit.factors.col(j) = -fit.factors.col(j);
        }
        break;
      }
    }
  }
  return fit;
}

namespace {

MatrixXd orthonormal_basis(const MatrixXd& a) {
  if (a.cols() == 0 || a.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("subspace_distance: zero or empty input");
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinU);
  const VectorXd sv = svd.singularValues();
  const double cutoff = sv(0) * std::max(a.rows(), a.cols()) *
                        std::numeric_limits<double>::epsilon();
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  return svd.matrixU().leftCols(rank);
}

}  // namespace

double subspace_distance(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("subspace_distance: row dimensions differ");
  const MatrixXd qa = orthonormal_basis(a);
  const MatrixXd qb = orthonormal_basis(b);
  return (qa * qa.transpose() - qb * qb.transpose()).norm();
}

DfmForecast dfm_forecast(const TimeSeries& ts, Index r, Index var_order) {
  if (var_order < 1)
    throw std::invalid_argument("dfm_forecast: var_order must be >= 1");
  DfmForecast out;
  out.sfm = fit_sfm(ts, r);

  TimeSeries factor_series;
  factor_series.values = out.sfm.factors;
  Design d = build_design(factor_series, var_order);
  const MatrixXd sxx = d.X.transpose() * d.X;
  const MatrixXd sxy = d.X.transpose() * d.Y;
  Eigen::LDLT<MatrixXd> ldlt(sxx);
  MatrixXd coeff;  // r x (r * var_order), stacked (B_1, ..., B_P)
  if (ldlt.info() == Eigen::Success && ldlt.rcond() > 1e-12) {
    coeff = ldlt.solve(sxy).transpose();
  } else {
    MatrixXd ridged = sxx;
    ridged.diagonal().array() += 1e-8 * std::max(1.0, sxx.trace());
    coeff = ridged.ldlt().solve(sxy).transpose();
    out.ridge_fallback = true;
  }
  out.factor_coeff = coeff;

  const Index t = out.sfm.factors.rows();
  VectorXd f_next = VectorXd::Zero(r);
  for (Index k = 1; k <= var_order; ++k)
    f_next += coeff.middleCols((k - 1) * r, r) *
              out.sfm.factors.row(t - k).transpose();
  out.forecast = out.sfm.loadings * f_next;
  return out;
}

SfmRepresentationReport sfm_representation_check(const VarModel& model,
                                                 const TuckerDecompd& decomp,
                                                 const TimeSeries& ts) {
  const Index p = model.lag_order();
  const Index r1 = decomp.core.dim(1);
  Design d = build_design(ts, p);
  const double t_eff = static_cast<double>(d.t_eff());

  // conditional-mean factor construction from the model structure
  const MatrixXd signal =
      d.X * kron(decomp.U3, decomp.U2) * matricize(decomp.core, 1).transpose();
  Eigen::JacobiSVD<MatrixXd> svd(signal, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const MatrixXd f = std::sqrt(t_eff) * svd.matrixU().leftCols(r1);
  const MatrixXd lambda = decomp.U1 * svd.matrixV().leftCols(r1) *
                          svd.singularValues().head(r1).asDiagonal() /
                          std::sqrt(t_eff);

  SfmRepresentationReport rep;
  rep.factor_normalization_gap =
      (f.transpose() * f / t_eff - MatrixXd::Identity(r1, r1)).cwiseAbs().maxCoeff();
  const MatrixXd gram = lambda.transpose() * lambda;
  rep.loading_gram_offdiag =
      (gram - MatrixXd(gram.diagonal().asDiagonal())).cwiseAbs().maxCoeff();
  rep.span_distance = subspace_distance(lambda, decomp.U1);
  const MatrixXd resid_var = d.Y - d.X * matricize(model.coeff, 1).transpose();
  const MatrixXd resid_sfm = d.Y - f * lambda.transpose();
  rep.residual_gap = (resid_sfm - resid_var).cwiseAbs().maxCoeff();
  const double tol = 1e-8;
  rep.pass = rep.factor_normalization_gap <= tol &&
             rep.loading_gram_offdiag <= tol * std::max(1.0, gram.cwiseAbs().maxCoeff()) &&
             rep.span_distance <= tol && rep.residual_gap <= tol;
  return rep;
}

}  // namespace mlrvar
