#include "linode/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <sstream>

#include "linode/error.hpp"

namespace linode {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Dimension: return "DimensionError";
    case ErrorCode::Domain: return "DomainError";
    case ErrorCode::Shape: return "ShapeError";
    case ErrorCode::ComplexSpectrum: return "ComplexSpectrum";
    case ErrorCode::NearDegenerate: return "NearDegenerate";
    case ErrorCode::NonPositiveEigenvalue: return "NonPositiveEigenvalue";
    case ErrorCode::SingularWindow: return "SingularWindow";
    case ErrorCode::SingularAggregationSum: return "SingularAggregationSum";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyOutput: return "EmptyOutput";
    case ErrorCode::EmptySummary: return "EmptySummary";
    case ErrorCode::UnknownPreset: return "UnknownPreset";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::Io: return "IoError";
  }
  return "Error";
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() < 1 || m.rows() != m.cols()) {
    std::ostringstream os;
    os << what << ": expected a square matrix, got " << m.rows() << "x" << m.cols();
    throw Error(ErrorCode::Dimension, os.str());
  }
  if (!m.allFinite()) throw Error(ErrorCode::Dimension, std::string(what) + ": non-finite entries");
}

Matrix EigenDecomp::reconstruct() const { return Q * lambdas.asDiagonal() * Q_inv; }

namespace {

// Pade [13/13] coefficients.
constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};

Matrix pade13(const Matrix& a) {
  const auto n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const auto& b = kPade13;
  const Matrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                         b[3] * a2 + b[1] * id;
  const Matrix u = a * u_inner;
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
                   b[2] * a2 + b[0] * id;
  return (v - u).partialPivLu().solve(v + u);
}

}  // namespace

Matrix expm(const Matrix& m) {
  require_square(m, "expm");
  const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();  // infinity norm
  if (norm == 0.0) return Matrix::Identity(m.rows(), m.cols());
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  Matrix r = pade13(m / std::ldexp(1.0, squarings));
  for (int i = 0; i < squarings; ++i) r = r * r;
  return r;
}

EigenDecomp eig_real(const Matrix& m, double separation_tol) {
  require_square(m, "eig_real");
  const auto d = m.rows();
  Eigen::EigenSolver<Matrix> solver(m, true);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorCode::NearDegenerate, "eigensolver did not converge");

  const Eigen::VectorXcd values = solver.eigenvalues();
  const double radius = values.cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, radius);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::abs(values(i).imag()) > 1e-9 * scale) {
      std::ostringstream os;
      os << "eigenvalue " << values(i).real() << (values(i).imag() < 0 ? "-" : "+")
         << std::abs(values(i).imag()) << "i is not real";
      throw Error(ErrorCode::ComplexSpectrum, os.str());
    }
  }

  EigenDecomp out;
  out.lambdas = values.real();
  out.min_separation = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j)
      out.min_separation = std::min(out.min_separation, std::abs(out.lambdas(i) - out.lambdas(j)));
  if (d > 1 && out.min_separation < separation_tol * scale) {
    std::ostringstream os;
    os << "eigenvalue separation " << out.min_separation << " below " << separation_tol * scale;
    throw Error(ErrorCode::NearDegenerate, os.str());
  }

  out.Q = solver.eigenvectors().real();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double nrm = out.Q.col(j).norm();
    if (nrm > 0) out.Q.col(j) /= nrm;
  }
  Eigen::PartialPivLU<Matrix> lu(out.Q);
  out.Q_inv = lu.inverse();
  if (!out.Q_inv.allFinite()) throw Error(ErrorCode::NearDegenerate, "eigenvector basis is singular");
  return out;
}

Matrix logm_real(const Matrix& m) {
  require_square(m, "logm_real");
  const auto d = m.rows();
  // A positive multiple of the identity has the principal logarithm ln(c) I.
  const double c = d > 0 ? m(0, 0) : 0.0;
  if (d > 1 && c > 0.0 && (m - c * Matrix::Identity(d, d)).cwiseAbs().maxCoeff() <= 1e-15 * c)
    return std::log(c) * Matrix::Identity(d, d);
  const EigenDecomp eig = eig_real(m);
  for (Eigen::Index i = 0; i < eig.lambdas.size(); ++i) {
    if (eig.lambdas(i) <= 0.0) {
      std::ostringstream os;
      os << "eigenvalue " << eig.lambdas(i) << " has no real logarithm";
      throw Error(ErrorCode::NonPositiveEigenvalue, os.str());
    }
  }
  return eig.Q * eig.lambdas.array().log().matrix().asDiagonal() * eig.Q_inv;
}

double min_singular_value(const Matrix& m) {
  require_square(m, "min_singular_value");
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues().minCoeff();
}

Matrix expm_frechet(const Matrix& x, const Matrix& e) {
  require_square(x, "expm_frechet");
  const auto d = x.rows();
  if (e.rows() != d || e.cols() != d) throw Error(ErrorCode::Dimension, "expm_frechet: direction shape");
  Matrix block = Matrix::Zero(2 * d, 2 * d);
  block.topLeftCorner(d, d) = x;
  block.topRightCorner(d, d) = e;
  block.bottomRightCorner(d, d) = x;
  return expm(block).topRightCorner(d, d);
}

Matrix divided_difference_matrix(const Vector& lambdas, double t) {
  const auto d = lambdas.size();
  const Vector growth = (lambdas * t).array().exp();
  Matrix u(d, d);
  for (Eigen::Index p = 0; p < d; ++p) {
    u(p, p) = t * growth(p);
    for (Eigen::Index q = 0; q < p; ++q) {
      const double v = divided_difference(lambdas(p), lambdas(q), growth(p), growth(q), t);
      u(p, q) = v;
      u(q, p) = v;
    }
  }
  return u;
}

Propagator::Propagator(Matrix a, double separation_tol) : a_(std::move(a)) {
  require_square(a_, "Propagator");
  try {
    EigenDecomp eig = eig_real(a_, separation_tol);
    const double cond = eig.Q.norm() * eig.Q_inv.norm();
    if (cond < kMaxBasisCondition) spectral_ = std::move(eig);
  } catch (const Error& e) {
    if (!e.is_spectrum_error()) throw;
  }
}

Matrix Propagator::at(double t) const {
  if (spectral_) {
    const Vector growth = (spectral_->lambdas * t).array().exp();
    return spectral_->Q * growth.asDiagonal() * spectral_->Q_inv;
  }
  return expm(a_ * t);
}

Vector Propagator::apply(double t, const Vector& x) const {
  if (spectral_) {
    const Vector growth = (spectral_->lambdas * t).array().exp();
    return spectral_->Q * growth.cwiseProduct(spectral_->Q_inv * x);
  }
  return expm(a_ * t) * x;
}

}  // namespace linode
