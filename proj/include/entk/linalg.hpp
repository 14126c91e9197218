#pragma once

// Dense symmetric eigendecomposition and block subspace iteration.
//
// Everything here is templated on the scalar type; the rest of the library
// instantiates it with double only.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <utility>

#include "entk/errors.hpp"

namespace entk {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Largest |m(i,j) - m(j,i)| relative to max|m|. Zero matrix reports 0.
template <typename Derived>
typename Derived::Scalar relative_asymmetry(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Scalar scale = m.cwiseAbs().maxCoeff();
  if (scale == Scalar(0)) return Scalar(0);
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

/// A real symmetric matrix. Construction symmetrizes the input as (M + M^T)/2.
template <typename Scalar = double>
class SymMatrix {
 public:
  using Matrix = MatrixX<Scalar>;

  SymMatrix() = default;

  template <typename Derived>
  explicit SymMatrix(const Eigen::MatrixBase<Derived>& m) {
    if (m.rows() != m.cols()) {
      std::ostringstream msg;
      msg << "SymMatrix requires a square matrix, got " << m.rows() << "x" << m.cols();
      throw ShapeError(msg.str());
    }
    m_ = (m + m.transpose()) / Scalar(2);
  }

  static SymMatrix zero(Index dim) { return SymMatrix(Matrix::Zero(dim, dim)); }
  static SymMatrix identity(Index dim) { return SymMatrix(Matrix::Identity(dim, dim)); }

  Index dim() const noexcept { return m_.rows(); }
  const Matrix& matrix() const noexcept { return m_; }
  Scalar operator()(Index i, Index j) const { return m_(i, j); }

  bool all_finite() const { return m_.allFinite(); }

  Matrix apply(const Matrix& v) const { return m_ * v; }

  friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
    SymMatrix out;
    out.m_ = a.m_ + b.m_;
    return out;
  }

 private:
  Matrix m_;
};

enum class SolverTag { dense, iterative };

/// Descending eigenvalues with column-orthonormal eigenvectors.
template <typename Scalar = double>
struct Spectrum {
  VectorX<Scalar> eigenvalues;
  MatrixX<Scalar> eigenvectors;
  SolverTag solver = SolverTag::dense;

  Index k() const noexcept { return eigenvalues.size(); }
  Index dim() const noexcept { return eigenvectors.rows(); }
};

/// Flip each column so that its largest-magnitude entry is positive
/// (ties resolved to the lowest index).
template <typename Scalar>
void normalize_signs(MatrixX<Scalar>& vectors) {
  for (Index j = 0; j < vectors.cols(); ++j) {
    Index best = 0;
    Scalar best_abs = Scalar(-1);
    for (Index i = 0; i < vectors.rows(); ++i) {
      const Scalar a = std::abs(vectors(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (vectors.rows() > 0 && vectors(best, j) < Scalar(0)) vectors.col(j) *= Scalar(-1);
  }
}

/// Thin Q factor of a Householder QR.
template <typename Derived>
MatrixX<typename Derived::Scalar> orthonormalize_columns(const Eigen::MatrixBase<Derived>& m) {
  using Matrix = MatrixX<typename Derived::Scalar>;
  Eigen::HouseholderQR<Matrix> qr(m);
  return qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
}

/// Sine of the largest principal angle between span(u) and span(v).
/// Both inputs must be column-orthonormal.
template <typename Scalar>
Scalar max_principal_angle_sine(const MatrixX<Scalar>& u, const MatrixX<Scalar>& v) {
  const MatrixX<Scalar> residual = v - u * (u.transpose() * v);
  if (residual.size() == 0) return Scalar(0);
  Eigen::JacobiSVD<MatrixX<Scalar>> svd(residual);
  return svd.singularValues()(0);
}

/// Full spectrum of a symmetric matrix, descending.
template <typename Scalar>
Spectrum<Scalar> eigh_descending(const SymMatrix<Scalar>& m) {
  if (!m.all_finite()) throw NonFiniteInput("eigh_descending: matrix has non-finite entries");
  Spectrum<Scalar> out;
  out.solver = SolverTag::dense;
  const Index n = m.dim();
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(m.matrix(), Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) throw ConvergenceFailure("eigh_descending: dense solver failed", 0.0);
  out.eigenvalues = es.eigenvalues().reverse();
  out.eigenvectors = es.eigenvectors().rowwise().reverse();
  normalize_signs(out.eigenvectors);
  return out;
}

/// Eigenvalues only, descending.
template <typename Scalar>
VectorX<Scalar> eigenvalues_descending(const SymMatrix<Scalar>& m) {
  if (!m.all_finite()) throw NonFiniteInput("eigenvalues_descending: matrix has non-finite entries");
  if (m.dim() == 0) return {};
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(m.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

struct TopkOptions {
  Index max_iter = 1000;
  double tol = 1e-8;
  /// Extra block columns beyond k; negative selects max(10, k/2).
  Index oversample = -1;
  std::uint64_t seed = 0;
};

/// Top-k eigenpairs of the symmetric operator `apply` (V -> A V) on R^dim by
/// block subspace iteration with a Rayleigh-Ritz projection every sweep.
///
/// The operator must be positive semidefinite (or dominated in magnitude by
/// its algebraically largest eigenvalues); every kernel in this library is.
/// Convergence means ||A v_i - lambda_i v_i|| <= tol * max(1, |lambda_1|) for
/// all i < k.
template <typename Scalar, typename Apply>
Spectrum<Scalar> eigh_topk_operator(Apply&& apply, Index dim, Index k, const TopkOptions& opts = {}) {
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;
  if (k < 1 || k > dim) {
    std::ostringstream msg;
    msg << "eigh_topk: need 1 <= k <= dim, got k=" << k << " dim=" << dim;
    throw ShapeError(msg.str());
  }
  const Index extra = opts.oversample >= 0 ? opts.oversample : std::max<Index>(10, k / 2);
  const Index block = std::min(dim, k + extra);

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix v(dim, block);
  for (Index j = 0; j < block; ++j)
    for (Index i = 0; i < dim; ++i) v(i, j) = static_cast<Scalar>(gauss(rng));
  v = orthonormalize_columns(v);

  double last_residual = std::numeric_limits<double>::infinity();
  for (Index it = 0; it < opts.max_iter; ++it) {
    Matrix av = apply(v);
    if (!av.allFinite()) throw NonFiniteInput("eigh_topk: operator produced non-finite values");
    Matrix h = v.transpose() * av;
    h = (h + h.transpose()) / Scalar(2);
    Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::ComputeEigenvectors);
    const Vector theta = es.eigenvalues().reverse();
    const Matrix s = es.eigenvectors().rowwise().reverse();
    Matrix ritz = v * s;
    Matrix aritz = av * s;

    const Scalar scale = std::max<Scalar>(Scalar(1), std::abs(theta(0)));
    Scalar worst = 0;
    for (Index i = 0; i < k; ++i)
      worst = std::max(worst, (aritz.col(i) - theta(i) * ritz.col(i)).norm());
    last_residual = static_cast<double>(worst);
    if (worst <= static_cast<Scalar>(opts.tol) * scale) {
      Spectrum<Scalar> out;
      out.solver = SolverTag::iterative;
      out.eigenvalues = theta.head(k);
      out.eigenvectors = ritz.leftCols(k);
      normalize_signs(out.eigenvectors);
      return out;
    }
    v = orthonormalize_columns(aritz);
  }
  std::ostringstream msg;
  msg << "eigh_topk: no convergence after " << opts.max_iter << " iterations (residual " << last_residual
      << ")";
  throw ConvergenceFailure(msg.str(), last_residual);
}

template <typename Scalar>
Spectrum<Scalar> eigh_topk(const SymMatrix<Scalar>& m, Index k, Index max_iter = 1000, double tol = 1e-8) {
  if (!m.all_finite()) throw NonFiniteInput("eigh_topk: matrix has non-finite entries");
  TopkOptions opts;
  opts.max_iter = max_iter;
  opts.tol = tol;
  return eigh_topk_operator<Scalar>([&m](const MatrixX<Scalar>& v) { return m.apply(v); }, m.dim(), k, opts);
}

}  // namespace entk
