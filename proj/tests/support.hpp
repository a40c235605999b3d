#pragma once

#include <random>

#include "linode/identifiability.hpp"
#include "linode/linalg.hpp"
#include "linode/ode_model.hpp"

namespace linode::testing {

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, int n, double lo = -1.0, double hi = 1.0) {
  return random_matrix(rng, n, 1, lo, hi);
}

/// Distinct values in [lo, hi] with pairwise gaps of at least min_gap.
inline Vector distinct_values(std::mt19937_64& rng, int d, double lo, double hi, double min_gap) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (;;) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = u(rng);
    bool ok = true;
    for (int i = 0; i < d && ok; ++i)
      for (int j = i + 1; j < d && ok; ++j) ok = std::abs(v(i) - v(j)) >= min_gap;
    if (ok) return v;
  }
}

/// A = Q diag(lambdas) Q^{-1} with a moderately conditioned Q.
inline Matrix matrix_with_spectrum(std::mt19937_64& rng, const Vector& lambdas, double max_cond = 50.0) {
  const int d = static_cast<int>(lambdas.size());
  for (;;) {
    const Matrix q = random_matrix(rng, d, d);
    Eigen::JacobiSVD<Matrix> svd(q);
    const Vector s = svd.singularValues();
    if (s(d - 1) <= 0 || s(0) / s(d - 1) > max_cond) continue;
    return q * lambdas.asDiagonal() * q.inverse();
  }
}

/// Random system passing A1 and A2 with eigenvalues in [lo, hi].
inline SystemParams random_identifiable(std::mt19937_64& rng, int d, double lo = -1.5, double hi = 1.5,
                                        double min_gap = 0.1) {
  for (;;) {
    SystemParams p;
    p.A = matrix_with_spectrum(rng, distinct_values(rng, d, lo, hi, min_gap));
    p.x0 = random_vector(rng, d);
    const IdentifiabilityReport rep = check_identifiable(p);
    if (!rep.verdict) continue;
    const Matrix k = krylov_matrix(p);
    Eigen::JacobiSVD<Matrix> svd(k);
    if (svd.singularValues()(d - 1) < 1e-3 * svd.singularValues()(0)) continue;
    return p;
  }
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

inline SystemParams a2_star() {
  SystemParams p;
  p.x0 = Vector(2);
  p.x0 << 1.87, -0.98;
  p.A = Matrix(2, 2);
  p.A << 1.76, -0.1, 0.98, 0.0;
  return p;
}

}  // namespace linode::testing
