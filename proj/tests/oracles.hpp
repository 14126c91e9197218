#pragma once

// Reference implementations the library is checked against. Nothing here
// calls into the code under test except for plain data types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

/// Cyclic Jacobi eigensolver; eigenvalues descending, vectors as columns.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> jacobi_eigh(Eigen::MatrixXd a, int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
  Eigen::VectorXd vals(n);
  Eigen::MatrixXd vecs(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    vals(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    vecs.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return {vals, vecs};
}

/// Central-difference gradient of a scalar function.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian (outputs x params) of a vector function.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const Eigen::VectorXd fp = f(xp);
    xp(i) = x(i) - h;
    const Eigen::VectorXd fm = f(xp);
    xp(i) = x(i);
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

/// Sum over the lattice of (v(a + da, b + db) - v(a, b))^2, indices mod p,
/// v indexed as a * p + b.
inline double lattice_difference_energy(const Eigen::VectorXd& v, int p, int da, int db) {
  double total = 0.0;
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) {
      const int a2 = ((a + da) % p + p) % p, b2 = ((b + db) % p + p) % p;
      const double d = v(a2 * p + b2) - v(a * p + b);
      total += d * d;
    }
  return total;
}

/// Two-sided binomial tail bound: |count - n q| <= z * sqrt(n q (1 - q)).
inline bool within_binomial(long count, long n, double q, double z = 6.0) {
  const double mean = static_cast<double>(n) * q;
  const double sd = std::sqrt(static_cast<double>(n) * q * (1.0 - q));
  return std::abs(static_cast<double>(count) - mean) <= z * std::max(sd, 1e-12);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

inline Eigen::MatrixXd random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

/// Largest absolute entry difference relative to the largest entry of `ref`.
inline double max_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  const double scale = std::max(ref.cwiseAbs().maxCoeff(), 1e-300);
  return (a - ref).cwiseAbs().maxCoeff() / scale;
}

/// Fourier family vectors over the full lattice, unnormalized: column 2(k-1)
/// is cos(2 pi k s / p), column 2(k-1)+1 is sin, s = a, b, a+b or a-b.
inline Eigen::MatrixXd fourier_family(int p, int which) {
  const int m = p / 2;
  Eigen::MatrixXd f(p * p, 2 * m);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) {
      const int s = which == 0 ? a : which == 1 ? b : which == 2 ? a + b : a - b;
      for (int k = 1; k <= m; ++k) {
        const double t = 2.0 * M_PI * k * s / p;
        f(a * p + b, 2 * (k - 1)) = std::cos(t);
        f(a * p + b, 2 * (k - 1) + 1) = std::sin(t);
      }
    }
  return f;
}

}  // namespace oracle
