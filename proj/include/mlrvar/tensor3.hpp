#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace mlrvar {

// Dense order-3 tensor with a single contiguous buffer, mode-1-fastest
// layout: entry (i,j,k) lives at offset i + p1*j + p1*p2*k. Indices are
// 0-based in code (1-based in the math notation of the docs). Immutable
// use is intended: operations below are pure functions returning fresh
// tensors.
template <typename Scalar>
class Tensor3 {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Tensor3() : p1_(0), p2_(0), p3_(0) {}

  Tensor3(Eigen::Index p1, Eigen::Index p2, Eigen::Index p3)
      : p1_(p1), p2_(p2), p3_(p3), data_(p1 * p2 * p3, Scalar(0)) {
    if (p1 <= 0 || p2 <= 0 || p3 <= 0)
      throw std::invalid_argument("Tensor3: dimensions must be positive");
  }

  static Tensor3 zero(Eigen::Index p1, Eigen::Index p2, Eigen::Index p3) {
    return Tensor3(p1, p2, p3);
  }

  Eigen::Index dim(int mode) const {
    switch (mode) {
      case 1: return p1_;
      case 2: return p2_;
      case 3: return p3_;
      default: throw std::invalid_argument("Tensor3::dim: mode must be 1, 2 or 3");
    }
  }
  std::array<Eigen::Index, 3> dims() const { return {p1_, p2_, p3_}; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(data_.size()); }

  Scalar& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return data_[i + p1_ * j + p1_ * p2_ * k];
  }
  Scalar operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return data_[i + p1_ * j + p1_ * p2_ * k];
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  // The buffer viewed as vec of the mode-1 matricization (identical memory).
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> vec() const {
    return {data_.data(), size()};
  }

  Scalar norm() const {
    Scalar s = 0;
    for (const Scalar& v : data_) s += v * v;
    return std::sqrt(s);
  }

  Tensor3& operator+=(const Tensor3& o) {
    check_same_dims(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    check_same_dims(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor3& operator*=(Scalar c) {
    for (Scalar& v : data_) v *= c;
    return *this;
  }
  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend Tensor3 operator*(Tensor3 a, Scalar c) { return a *= c; }
  friend Tensor3 operator*(Scalar c, Tensor3 a) { return a *= c; }

  // Frontal slice A_k = t(:,:,k) as a p1 x p2 matrix.
  Matrix slice(Eigen::Index k) const {
    return Eigen::Map<const Matrix>(data_.data() + p1_ * p2_ * k, p1_, p2_);
  }

  static Tensor3 from_slices(const std::vector<Matrix>& slices) {
    if (slices.empty()) throw std::invalid_argument("from_slices: empty list");
    const Eigen::Index p1 = slices[0].rows(), p2 = slices[0].cols();
    Tensor3 t(p1, p2, static_cast<Eigen::Index>(slices.size()));
    for (std::size_t k = 0; k < slices.size(); ++k) {
      if (slices[k].rows() != p1 || slices[k].cols() != p2)
        throw std::invalid_argument("from_slices: inconsistent slice shapes");
      Eigen::Map<Matrix>(t.data() + p1 * p2 * k, p1, p2) = slices[k];
    }
    return t;
  }

 private:
  void check_same_dims(const Tensor3& o) const {
    if (p1_ != o.p1_ || p2_ != o.p2_ || p3_ != o.p3_)
      throw std::invalid_argument("Tensor3: dimension mismatch");
  }

  Eigen::Index p1_, p2_, p3_;
  std::vector<Scalar> data_;
};

using Tensor3d = Tensor3<double>;

// Mode-m matricization, standard (Kolda-Bader) column ordering: the index
// of the lower-numbered free mode varies fastest. For an N x N x P tensor
// built from frontal slices A_1..A_P this gives
//   mode 1: (A_1, ..., A_P)
//   mode 2: (A_1', ..., A_P')
//   mode 3: (vec(A_1), ..., vec(A_P))'
template <typename Scalar>
typename Tensor3<Scalar>::Matrix matricize(const Tensor3<Scalar>& t, int mode) {
  using Matrix = typename Tensor3<Scalar>::Matrix;
  const auto [p1, p2, p3] = t.dims();
  switch (mode) {
    case 1:
      return Eigen::Map<const Matrix>(t.data(), p1, p2 * p3);
    case 2: {
      Matrix m(p2, p1 * p3);
      for (Eigen::Index k = 0; k < p3; ++k)
        m.block(0, k * p1, p2, p1) = t.slice(k).transpose();
      return m;
    }
    case 3:
      return Eigen::Map<const Matrix>(t.data(), p1 * p2, p3).transpose();
    default:
      throw std::invalid_argument("matricize: mode must be 1, 2 or 3");
  }
}

// Exact inverse of matricize for the given mode.
template <typename Scalar>
Tensor3<Scalar> tensorize(const typename Tensor3<Scalar>::Matrix& m,
                          std::array<Eigen::Index, 3> dims, int mode) {
  using Matrix = typename Tensor3<Scalar>::Matrix;
  const auto [p1, p2, p3] = dims;
  const Eigen::Index rows_expected = dims[static_cast<std::size_t>(mode - 1)];
  if (mode < 1 || mode > 3)
    throw std::invalid_argument("tensorize: mode must be 1, 2 or 3");
  if (m.rows() != rows_expected || m.size() != p1 * p2 * p3)
    throw std::invalid_argument("tensorize: shape inconsistent with dims/mode");
  Tensor3<Scalar> t(p1, p2, p3);
  switch (mode) {
    case 1:
      Eigen::Map<Matrix>(t.data(), p1, p2 * p3) = m;
      break;
    case 2:
      for (Eigen::Index k = 0; k < p3; ++k)
        Eigen::Map<Matrix>(t.data() + p1 * p2 * k, p1, p2) =
            m.block(0, k * p1, p2, p1).transpose();
      break;
    case 3:
      Eigen::Map<Matrix>(t.data(), p1 * p2, p3) = m.transpose();
      break;
  }
  return t;
}

// Mode-m product t x_m M: replaces the mode-m dimension by M.rows().
template <typename Scalar>
Tensor3<Scalar> mode_product(const Tensor3<Scalar>& t,
                             const typename Tensor3<Scalar>::Matrix& m,
                             int mode) {
  if (mode < 1 || mode > 3)
    throw std::invalid_argument("mode_product: mode must be 1, 2 or 3");
  if (m.cols() != t.dim(mode))
    throw std::invalid_argument("mode_product: matrix columns must match mode dimension");
  auto dims = t.dims();
  dims[static_cast<std::size_t>(mode - 1)] = m.rows();
  return tensorize<Scalar>(m * matricize(t, mode), dims, mode);
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Tucker decomposition: core G (r1 x r2 x r3) and factors U_i (p_i x r_i).
template <typename Scalar>
struct TuckerDecomp {
  using Matrix = typename Tensor3<Scalar>::Matrix;
  Tensor3<Scalar> core;
  Matrix U1, U2, U3;

  std::array<Eigen::Index, 3> ranks() const { return core.dims(); }
};

using TuckerDecompd = TuckerDecomp<double>;

// G x_1 U1 x_2 U2 x_3 U3. Mode-1 matricization equals U1 G_(1) (U3 (x) U2)'.
template <typename Scalar>
Tensor3<Scalar> reconstruct(const TuckerDecomp<Scalar>& d) {
  const auto [r1, r2, r3] = d.core.dims();
  if (d.U1.cols() != r1 || d.U2.cols() != r2 || d.U3.cols() != r3)
    throw std::invalid_argument("reconstruct: factor shapes inconsistent with core");
  Tensor3<Scalar> t = mode_product(d.core, d.U1, 1);
  t = mode_product(t, d.U2, 2);
  t = mode_product(t, d.U3, 3);
  return t;
}

// Flips singular-vector columns so the first entry that is nonzero (at a
// relative 1e-12 cutoff) is positive. Sign convention used everywhere
// singular vectors are exposed, so decompositions are deterministic.
template <typename Derived>
void normalize_column_signs(Eigen::MatrixBase<Derived>& u) {
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    const double cutoff = 1e-12 * u.col(j).cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double v = u(i, j);
      if (std::abs(v) > cutoff) {
        if (v < 0) u.col(j) = -u.col(j);
        break;
      }
    }
  }
}

// Truncated higher-order SVD. U_i holds the top r_i left singular vectors
// of the mode-i matricization (sign-normalized); the core is
// t x_1 U1' x_2 U2' x_3 U3' and has pairwise-orthogonal rows in every
// matricization when the requested ranks equal the true multilinear ranks,
// in which case the reconstruction is exact.
template <typename Scalar>
TuckerDecomp<Scalar> hosvd_truncated(const Tensor3<Scalar>& t,
                                     std::array<Eigen::Index, 3> ranks) {
  using Matrix = typename Tensor3<Scalar>::Matrix;
  TuckerDecomp<Scalar> d;
  std::array<Matrix, 3> factors;
  for (int mode = 1; mode <= 3; ++mode) {
    const Eigen::Index r = ranks[static_cast<std::size_t>(mode - 1)];
    if (r < 1 || r > t.dim(mode))
      throw std::invalid_argument("hosvd_truncated: rank out of range");
    Matrix m = matricize(t, mode);
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU);
    if (svd.info() != Eigen::Success)
      throw std::runtime_error("hosvd_truncated: SVD failed");
    Matrix u = svd.matrixU().leftCols(r);
    normalize_column_signs(u);
    factors[static_cast<std::size_t>(mode - 1)] = std::move(u);
  }
  d.U1 = std::move(factors[0]);
  d.U2 = std::move(factors[1]);
  d.U3 = std::move(factors[2]);
  Tensor3<Scalar> core = mode_product<Scalar>(t, d.U1.transpose(), 1);
  core = mode_product<Scalar>(core, d.U2.transpose(), 2);
  core = mode_product<Scalar>(core, d.U3.transpose(), 3);
  d.core = std::move(core);
  return d;
}

namespace detail {

// Offset of entry (i,j,k) within vec of the mode-m matricization.
inline Eigen::Index vec_index(std::array<Eigen::Index, 3> dims, int mode,
                              Eigen::Index i, Eigen::Index j, Eigen::Index k) {
  const auto [p1, p2, p3] = dims;
  switch (mode) {
    case 1: return i + p1 * j + p1 * p2 * k;
    case 2: return j + p2 * i + p2 * p1 * k;
    case 3: return k + p3 * i + p3 * p1 * j;
    default: throw std::invalid_argument("vec_index: bad mode");
  }
}

}  // namespace detail

// Vec-permutation matrix T_ij with vec(A_(j)) = T_ij vec(A_(i)) for every
// tensor of the given dimensions. 0/1 entries, one per row and column.
inline Eigen::SparseMatrix<double> permutation_matrix(
    std::array<Eigen::Index, 3> dims, int from_mode, int to_mode) {
  if (from_mode < 1 || from_mode > 3 || to_mode < 1 || to_mode > 3)
    throw std::invalid_argument("permutation_matrix: modes must be 1, 2 or 3");
  const Eigen::Index n = dims[0] * dims[1] * dims[2];
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < dims[2]; ++k)
    for (Eigen::Index j = 0; j < dims[1]; ++j)
      for (Eigen::Index i = 0; i < dims[0]; ++i)
        trips.emplace_back(detail::vec_index(dims, to_mode, i, j, k),
                           detail::vec_index(dims, from_mode, i, j, k), 1.0);
  Eigen::SparseMatrix<double> t(n, n);
  t.setFromTriplets(trips.begin(), trips.end());
  return t;
}

// Commutation matrix K_{m,n}: vec(M') = K_{m,n} vec(M) for M in R^{m x n}.
inline Eigen::SparseMatrix<double> commutation_matrix(Eigen::Index m,
                                                      Eigen::Index n) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(m * n));
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < m; ++i)
      trips.emplace_back(j + n * i, i + m * j, 1.0);
  Eigen::SparseMatrix<double> k(m * n, m * n);
  k.setFromTriplets(trips.begin(), trips.end());
  return k;
}

}  // namespace mlrvar
