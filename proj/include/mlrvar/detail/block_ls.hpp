#pragma once

#include <Eigen/Dense>

#include "mlrvar/regression_core.hpp"
#include "mlrvar/tensor3.hpp"

// Normal-equation pieces for the four block least squares subproblems of the
// Tucker-structured VAR objective sum_t ||y_t - A_(1) x_t||^2, each linear in
// one block with the others fixed. All quantities contract against X'X and
// X'Y only, so cost is independent of T. Unknown ordering is the
// column-major vec of the block.

namespace mlrvar::detail {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct VecLs {
  MatrixXd gram;  // sum_t Phi_t' Phi_t
  VectorXd rhs;   // sum_t Phi_t' y_t
};

// vec(U1): predictions (z_t' (x) I_N) vec(U1) with z_t = G1 (U3 (x) U2)' x_t.
inline VecLs u1_vec_ls(const DesignStats& stats, const Tensor3d& core,
                       const MatrixXd& u2, const MatrixXd& u3) {
  const MatrixXd zb = kron(u3, u2) * matricize(core, 1).transpose();  // NP x r1
  const MatrixXd ztz = zb.transpose() * stats.sxx * zb;
  const MatrixXd yz = stats.sxy.transpose() * zb;  // N x r1
  const Index n = stats.sxy.cols();
  VecLs out;
  out.gram = kron(ztz, MatrixXd::Identity(n, n));
  out.rhs = Eigen::Map<const VectorXd>(yz.data(), yz.size());
  return out;
}

// vec(U2): the Gram contracts (U3 (x) I)' X'X (U3 (x) I) against the core
// Gram G1' U1'U1 G1, blockwise over the mode-3 index.
inline VecLs u2_vec_ls(const DesignStats& stats, const Tensor3d& core,
                       const MatrixXd& u1, const MatrixXd& u3, Index n, Index p) {
  const auto [r1, r2, r3] = core.dims();
  const MatrixXd g1 = matricize(core, 1);
  const MatrixXd kcore = g1.transpose() * (u1.transpose() * u1) * g1;
  const MatrixXd u3i = kron(u3, MatrixXd::Identity(n, n));  // NP x r3 N
  const MatrixXd sw = u3i.transpose() * stats.sxx * u3i;
  const MatrixXd psi = stats.sxy * (u1 * g1);  // NP x r2 r3

  VecLs out;
  out.gram = MatrixXd::Zero(n * r2, n * r2);
  for (Index i = 0; i < r2; ++i)
    for (Index i2 = 0; i2 < r2; ++i2)
      for (Index k = 0; k < r3; ++k)
        for (Index k2 = 0; k2 < r3; ++k2)
          out.gram.block(n * i, n * i2, n, n) +=
              kcore(i + r2 * k, i2 + r2 * k2) * sw.block(n * k, n * k2, n, n);

  MatrixXd rhs = MatrixXd::Zero(n, r2);
  for (Index k = 0; k < r3; ++k)
    for (Index q = 0; q < p; ++q)
      rhs += u3(q, k) * psi.block(n * q, r2 * k, n, r2);
  out.rhs = Eigen::Map<const VectorXd>(rhs.data(), rhs.size());
  return out;
}

// vec(U3): Gram entries contract the U2-compressed core Gram against the
// N x N lag blocks of X'X.
inline VecLs u3_vec_ls(const DesignStats& stats, const Tensor3d& core,
                       const MatrixXd& u1, const MatrixXd& u2, Index n, Index p) {
  const auto [r1, r2, r3] = core.dims();
  const MatrixXd g1 = matricize(core, 1);
  const MatrixXd kcore = g1.transpose() * (u1.transpose() * u1) * g1;
  const MatrixXd m1 = u1 * g1;  // N x r2 r3

  VecLs out;
  out.gram.resize(p * r3, p * r3);
  for (Index k = 0; k < r3; ++k)
    for (Index k2 = 0; k2 < r3; ++k2) {
      const MatrixXd c = u2 * kcore.block(r2 * k, r2 * k2, r2, r2) * u2.transpose();
      for (Index q = 0; q < p; ++q)
        for (Index q2 = 0; q2 < p; ++q2)
          out.gram(q + p * k, q2 + p * k2) =
              c.cwiseProduct(stats.sxx.block(n * q, n * q2, n, n)).sum();
    }

  out.rhs.resize(p * r3);
  for (Index k = 0; k < r3; ++k) {
    const MatrixXd ck = u2 * m1.middleCols(r2 * k, r2).transpose();  // N x N
    for (Index q = 0; q < p; ++q)
      out.rhs(q + p * k) = ck.cwiseProduct(stats.sxy.middleRows(n * q, n)).sum();
  }
  return out;
}

// vec(G_(1)): Kronecker-structured Gram (B' X'X B) (x) (U1'U1).
inline VecLs core_vec_ls(const DesignStats& stats, const MatrixXd& u1,
                         const MatrixXd& u2, const MatrixXd& u3) {
  const MatrixXd b = kron(u3, u2);
  VecLs out;
  out.gram = kron(MatrixXd(b.transpose() * stats.sxx * b),
                  MatrixXd(u1.transpose() * u1));
  const MatrixXd rhs = u1.transpose() * stats.sxy.transpose() * b;  // r1 x r2 r3
  out.rhs = Eigen::Map<const VectorXd>(rhs.data(), rhs.size());
  return out;
}

}  // namespace mlrvar::detail
