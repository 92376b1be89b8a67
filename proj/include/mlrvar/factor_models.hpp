#pragma once

#include <Eigen/Dense>

#include "mlrvar/tensor3.hpp"
#include "mlrvar/var_process.hpp"

namespace mlrvar {

// Static factor model fit, normalized so F'F/T = I and Lambda'Lambda is
// diagonal, first nonzero loading entry positive per column.
struct SfmFit {
  Eigen::MatrixXd loadings;  // N x r
  Eigen::MatrixXd factors;   // T x r
};

// Principal components: factors are sqrt(T) times the top left singular
// vectors of the data matrix, loadings Y' F / T.
SfmFit fit_sfm(const TimeSeries& ts, Eigen::Index r);

// || P_A - P_B ||_F for the orthogonal projectors onto the column spaces;
// rank-deficient inputs are orthonormalized first.
double subspace_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct DfmForecast {
  Eigen::VectorXd forecast;     // one-step prediction of y_{T+1}
  SfmFit sfm;
  Eigen::MatrixXd factor_coeff; // stacked VAR coefficients of the factor process
  bool ridge_fallback = false;
};

// Two-step dynamic factor forecast: principal-component factors, then a
// VAR(var_order) fitted to them by least squares (ridge fallback on a
// degenerate factor design, flagged).
DfmForecast dfm_forecast(const TimeSeries& ts, Eigen::Index r,
                         Eigen::Index var_order);

struct SfmRepresentationReport {
  double factor_normalization_gap = 0.0;  // ||F'F/T - I||_max
  double loading_gram_offdiag = 0.0;      // max off-diagonal of Lambda'Lambda
  double span_distance = 0.0;             // projector distance to span(U1)
  double residual_gap = 0.0;              // ||(Y - F Lambda') - E||_max
  bool pass = false;                      // all four at 1e-8
};

// Executes the static-factor construction implied by the Tucker form of the
// model on a generated sample: F and Lambda from the SVD of
// X (U3 (x) U2) G_(1)', then checks the normalizations, the span identity
// span(Lambda) = span(U1), and that Y - F Lambda' reproduces the VAR
// residuals.
SfmRepresentationReport sfm_representation_check(const VarModel& model,
                                                 const TuckerDecompd& decomp,
                                                 const TimeSeries& ts);

}  // namespace mlrvar
