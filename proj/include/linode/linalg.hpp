#pragma once

// Dense small-matrix kernels: matrix exponential, real eigendecomposition,
// real logarithm, Frechet derivative of expm, and a shared propagator that
// evaluates e^{At} for many t from a single decomposition of A.

#include <cmath>
#include <optional>

#include <Eigen/Dense>

namespace linode {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Default relative eigenvalue separation for A2 checks.
inline constexpr double kDefaultSeparationTol = 1e-8;

/// Real eigendecomposition A = Q diag(lambdas) Q^{-1}.
struct EigenDecomp {
  Matrix Q;
  Vector lambdas;
  Matrix Q_inv;
  double min_separation = 0.0;

  Matrix reconstruct() const;
  double spectral_radius() const { return lambdas.cwiseAbs().maxCoeff(); }
};

/// Throws ErrorCode::Dimension unless m is square with finite entries.
void require_square(const Matrix& m, const char* what);

Matrix expm(const Matrix& m);

/// Throws ComplexSpectrum or NearDegenerate when A2 fails.
/// Eigenvector columns of Q are normalized to unit 2-norm.
EigenDecomp eig_real(const Matrix& m, double separation_tol = kDefaultSeparationTol);

/// Unique real logarithm of a matrix with distinct positive real eigenvalues;
/// positive multiples of the identity are also accepted.
Matrix logm_real(const Matrix& m);

double min_singular_value(const Matrix& m);

/// Frechet derivative L(X, E) of expm at X in direction E, read off the
/// upper-right block of expm([[X, E], [0, X]]).
Matrix expm_frechet(const Matrix& x, const Matrix& e);

/// U(t) with diagonal t e^{l_i t} and off-diagonal divided differences
/// (e^{l_i t} - e^{l_j t}) / (l_i - l_j), evaluated through expm1 so close
/// eigenvalues do not cancel.
Matrix divided_difference_matrix(const Vector& lambdas, double t);

/// One entry of U(t) given e_p = e^{l_p t} and e_q = e^{l_q t}.
inline double divided_difference(double lp, double lq, double ep, double eq, double t) {
  const double gap = lp - lq;
  if (gap == 0.0) return t * ep;
  if (std::abs(gap * t) > 0.1) return (ep - eq) / gap;
  return lp < lq ? ep * std::expm1(-gap * t) / (-gap) : eq * std::expm1(gap * t) / gap;
}

/// e^{At} for many t. Uses Q e^{Lambda t} Q^{-1} when A has a
/// well-separated real spectrum with a well-conditioned eigenbasis, otherwise
/// falls back to scaling-and-squaring per call.
class Propagator {
 public:
  explicit Propagator(Matrix a, double separation_tol = kDefaultSeparationTol);

  const Matrix& a() const { return a_; }
  int dim() const { return static_cast<int>(a_.rows()); }

  /// Null when the fallback path is active.
  const EigenDecomp* spectral() const { return spectral_ ? &*spectral_ : nullptr; }

  Matrix at(double t) const;
  Vector apply(double t, const Vector& x) const;

  /// Condition number cap on Q beyond which the spectral path is refused.
  static constexpr double kMaxBasisCondition = 1e4;

 private:
  Matrix a_;
  std::optional<EigenDecomp> spectral_;
};

}  // namespace linode
