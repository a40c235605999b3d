#include "linode/identifiability.hpp"

#include <sstream>

#include "linode/error.hpp"

namespace linode {

Matrix krylov_matrix(const SystemParams& params) {
  params.validate();
  const int d = params.dim();
  Matrix k(d, d);
  Vector col = params.x0;
  for (int j = 0; j < d; ++j) {
    k.col(j) = col;
    col = params.A * col;
  }
  return k;
}

IdentifiabilityReport check_identifiable(const SystemParams& params, const ToleranceSet& tol) {
  IdentifiabilityReport r;
  const Matrix k = krylov_matrix(params);
  const Eigen::JacobiSVD<Matrix> svd(k);
  const Vector& sv = svd.singularValues();
  r.a1_min_singular = sv.minCoeff();
  r.a1_holds = sv.maxCoeff() > 0.0 && r.a1_min_singular > tol.rank_rel * sv.maxCoeff();

  try {
    const EigenDecomp eig = eig_real(params.A, tol.separation);
    r.a2_holds = true;
    r.a2_detail = SpectrumStatus::Ok;
    r.min_separation = eig.min_separation;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ComplexSpectrum) {
      r.a2_detail = SpectrumStatus::Complex;
    } else if (e.code() == ErrorCode::NearDegenerate) {
      r.a2_detail = SpectrumStatus::Repeated;
      const Eigen::VectorXd ev = Eigen::EigenSolver<Matrix>(params.A, false).eigenvalues().real();
      r.min_separation = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < ev.size(); ++i)
        for (Eigen::Index j = i + 1; j < ev.size(); ++j)
          r.min_separation = std::min(r.min_separation, std::abs(ev(i) - ev(j)));
    } else {
      throw;
    }
  }
  r.verdict = r.a1_holds && r.a2_holds;
  return r;
}

SystemParams recover_exact(const ObservationSet& obs, const ToleranceSet& tol) {
  const int d = obs.dim();
  if (obs.size() < d + 1) {
    std::ostringstream os;
    os << "recover_exact: need " << d + 1 << " observations, have " << obs.size();
    throw Error(ErrorCode::Dimension, os.str());
  }
  const Matrix x1 = obs.values().leftCols(d);
  const Matrix x2 = obs.values().middleCols(1, d);

  const Eigen::JacobiSVD<Matrix> svd(x1);
  const Vector& sv = svd.singularValues();
  if (!(sv.maxCoeff() > 0.0) || sv.minCoeff() <= tol.rank_rel * sv.maxCoeff()) {
    std::ostringstream os;
    os << "first " << d << " observations are linearly dependent (sigma_min = " << sv.minCoeff() << ")";
    throw Error(ErrorCode::SingularWindow, os.str());
  }

  // Phi X1 = X2  <=>  X1^T Phi^T = X2^T
  const Matrix phi = x1.transpose().partialPivLu().solve(x2.transpose()).transpose();
  SystemParams out;
  out.A = logm_real(phi) / obs.delta_t();
  const double t1 = obs.time(0);
  out.x0 = (t1 == 0.0) ? Vector(x1.col(0)) : Vector(expm(-out.A * t1) * x1.col(0));
  return out;
}

}  // namespace linode
