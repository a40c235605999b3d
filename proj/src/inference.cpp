#include "linode/inference.hpp"

#include <cmath>
#include <sstream>

#include "linode/error.hpp"
#include "linode/identifiability.hpp"
#include "linode/nls.hpp"
#include "linode/quantiles.hpp"

namespace linode {

namespace {

// Returns a new matrix; (m + m^T) assigned back into m would alias.
Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix sensitivity_with(const SystemParams& p, const Propagator& prop, double t) {
  const int d = p.dim();
  Matrix s(d, d + d * d);
  if (const EigenDecomp* eig = prop.spectral()) {
    const Vector growth = (eig->lambdas * t).array().exp();
    s.leftCols(d) = eig->Q * growth.asDiagonal() * eig->Q_inv;
    const Matrix u = divided_difference_matrix(eig->lambdas, t);
    const Vector x_hat = eig->Q_inv * p.x0;
    // Z_jk x0 = Q (Q^{-1}_{.j} o (U (Q_{k.}^T o x_hat)))
    for (int k = 0; k < d; ++k) {
      const Vector v = u * eig->Q.row(k).transpose().cwiseProduct(x_hat);
      for (int j = 0; j < d; ++j) s.col(ThetaVec::index_of(d, j, k)) = eig->Q * eig->Q_inv.col(j).cwiseProduct(v);
    }
    return s;
  }
  s.leftCols(d) = expm(p.A * t);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) s.col(ThetaVec::index_of(d, j, k)) = dexpm_da_block(p.A, t, j, k) * p.x0;
  return s;
}

struct Grams {
  Matrix plain;     // (1/T) int S^T S
  Matrix weighted;  // (1/T) int S^T diag(w) S
};

Grams simpson_grams(const ThetaVec& theta, double T, const Vector* weights, int panels) {
  if (!(T > 0.0) || !std::isfinite(T)) throw Error(ErrorCode::Domain, "quadrature: T must be positive");
  if (panels < 2 || panels % 2 != 0) throw Error(ErrorCode::Domain, "quadrature: panels must be even and >= 2");
  const SystemParams p = theta.unpack();
  const Propagator prop(p.A);
  const int m = static_cast<int>(theta.size());
  Grams g{Matrix::Zero(m, m), Matrix::Zero(m, m)};
  const double h = T / panels;
  Vector root_w;
  if (weights) root_w = weights->cwiseSqrt();
  for (int i = 0; i <= panels; ++i) {
    const double t = (i == panels) ? T : i * h;
    const double c = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const Matrix s = sensitivity_with(p, prop, t);
    g.plain.noalias() += c * (s.transpose() * s);
    if (weights) {
      const Matrix r = root_w.asDiagonal() * s;
      g.weighted.noalias() += c * (r.transpose() * r);
    }
  }
  const double scale = h / 3.0 / T;
  g.plain = symmetrized(g.plain) * scale;
  g.weighted = symmetrized(g.weighted) * scale;
  return g;
}

void require_variances(const Vector& sigma2, int d) {
  if (sigma2.size() != d) throw Error(ErrorCode::Dimension, "noise variance vector has wrong length");
  if (!(sigma2.array() > 0.0).all()) throw Error(ErrorCode::Domain, "noise variances must be positive");
}

Eigen::LLT<Matrix> cholesky(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, std::string(what) + " is not positive definite");
  return llt;
}

}  // namespace

int quadrature_panels_for(const ThetaVec& theta, double T) {
  if (!(T > 0.0) || !std::isfinite(T)) throw Error(ErrorCode::Domain, "quadrature: T must be positive");
  const Matrix a = theta.unpack().A;
  const double rho = std::max(1.0, Eigen::EigenSolver<Matrix>(a, false).eigenvalues().cwiseAbs().maxCoeff());
  const double wanted = std::ceil(2.0 * rho * T / 0.01);
  if (wanted > 1e7) throw Error(ErrorCode::Domain, "quadrature: horizon too long for the spectrum");
  const int panels = static_cast<int>(wanted);
  return std::max(kDefaultPanels, panels + panels % 2);
}

Matrix sensitivity(const ThetaVec& theta, double t) {
  if (!(t >= 0.0)) throw Error(ErrorCode::Domain, "sensitivity: t must be non-negative");
  const SystemParams p = theta.unpack();
  return sensitivity_with(p, Propagator(p.A), t);
}

Matrix h_matrix(const ThetaVec& theta, double T, int panels) {
  return 2.0 * simpson_grams(theta, T, nullptr, panels).plain;
}

Matrix v_matrix(const ThetaVec& theta, double T, const Vector& sigma2, int panels) {
  require_variances(sigma2, theta.dim());
  return 4.0 * simpson_grams(theta, T, &sigma2, panels).weighted;
}

int SampleGrid::n_effective(const std::optional<DegradedSpec>& spec) const {
  if (spec && spec->mode == DegradeMode::Aggregated) return n / spec->agg_factor();
  return n;
}

CovarianceReport sandwich(const ThetaVec& theta, double T, const Vector& sigma2,
                          const std::optional<DegradedSpec>& spec, const SampleGrid& grid, int panels) {
  require_variances(sigma2, theta.dim());
  CovarianceReport rep;
  rep.theta_at = theta;
  rep.sigma_used = sigma2;
  rep.quadrature_panels = panels;
  rep.identifiable = check_identifiable(theta.unpack()).verdict;

  ThetaVec theta_eval = theta;
  double t_eval = T;
  double v_divisor = 1.0;
  std::optional<Matrix> G;
  if (spec) {
    DegradedSpec s = *spec;
    rep.k = s.k;
    if (s.mode == DegradeMode::Aggregated) {
      rep.path = CovariancePath::Aggregated;
      if (grid.n < 2) throw Error(ErrorCode::Domain, "sandwich: aggregated path needs the original sample count");
      const int k = s.agg_factor();
      s.base_delta_t = T / (grid.n - 1);
      const int n_tilde = grid.n / k;
      if (k > 1 && n_tilde < 2) throw Error(ErrorCode::Domain, "sandwich: fewer than two aggregated samples");
      t_eval = (k == 1) ? T : static_cast<double>(n_tilde - 1) * k * T / (grid.n - 1);
      v_divisor = k;
    } else {
      rep.path = CovariancePath::TimeScaled;
      t_eval = s.k * T;
    }
    theta_eval = forward_params(theta, s);
    G = g_gradient(theta_eval, s);
  }
  rep.T_effective = t_eval;

  const Grams grams = simpson_grams(theta_eval, t_eval, &sigma2, panels);
  rep.H = 2.0 * grams.plain;
  rep.V = 4.0 * grams.weighted / v_divisor;

  const auto llt = cholesky(rep.H, "H");
  const Matrix hinv_v = llt.solve(rep.V);
  const Matrix inner = symmetrized(llt.solve(hinv_v.transpose()));  // H^{-1} V H^{-1}
  rep.sigma_n = G ? symmetrized(*G * inner * G->transpose()) : inner;
  return rep;
}

CrTest cr_test(const ThetaVec& theta_hat, const ThetaVec& theta_ref, const CovarianceReport& cov, int n,
               double alpha) {
  if (theta_hat.size() != theta_ref.size() || theta_hat.size() != cov.sigma_n.rows())
    throw Error(ErrorCode::Dimension, "cr_test: parameter and covariance sizes differ");
  if (n < 1) throw Error(ErrorCode::Domain, "cr_test: n must be positive");
  const auto llt = cholesky(cov.sigma_n, "sigma_n");
  const Vector delta = theta_hat.values() - theta_ref.values();
  CrTest out;
  out.statistic = n * delta.dot(llt.solve(delta));
  out.critical = chi2_quantile(static_cast<int>(theta_hat.size()), 1.0 - alpha);
  out.inside = out.statistic <= out.critical;
  return out;
}

IntervalSet pointwise_cis(const ThetaVec& theta_hat, const CovarianceReport& cov, int n, double alpha) {
  if (theta_hat.size() != cov.sigma_n.rows()) throw Error(ErrorCode::Dimension, "pointwise_cis: size mismatch");
  if (n < 1) throw Error(ErrorCode::Domain, "pointwise_cis: n must be positive");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  IntervalSet out;
  Vector var = cov.sigma_n.diagonal();
  if ((var.array() < 0.0).any()) {
    out.clamped_negative_variance = true;
    var = var.cwiseMax(0.0);
  }
  const Vector half = z * (var / n).cwiseSqrt();
  out.lower = theta_hat.values() - half;
  out.upper = theta_hat.values() + half;
  return out;
}

EdgeMatrix edge_test(const ThetaVec& theta_hat, const CovarianceReport& cov, int n, double alpha) {
  if (theta_hat.size() != cov.sigma_n.rows()) throw Error(ErrorCode::Dimension, "edge_test: size mismatch");
  if (n < 1) throw Error(ErrorCode::Domain, "edge_test: n must be positive");
  const int d = theta_hat.dim();
  const double z = normal_quantile(1.0 - alpha / 2.0);
  EdgeMatrix out(d, d);
  for (int j = 0; j < d; ++j) {
    for (int k = 0; k < d; ++k) {
      const Eigen::Index idx = ThetaVec::index_of(d, j, k);
      const double var = std::max(0.0, cov.sigma_n(idx, idx));
      out(j, k) = std::abs(theta_hat[idx]) > z * std::sqrt(var / n);
    }
  }
  return out;
}

InferenceOutcome infer(const ThetaVec& theta_hat, const std::optional<ThetaVec>& theta_ref,
                       const CovarianceReport& cov, int n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::Domain, "alpha must lie in (0, 1)");
  InferenceOutcome out;
  const CrTest cr = cr_test(theta_hat, theta_ref.value_or(theta_hat), cov, n, alpha);
  out.cr_statistic = cr.statistic;
  out.cr_critical = cr.critical;
  out.theta_in_cr = cr.inside;
  const IntervalSet ci = pointwise_cis(theta_hat, cov, n, alpha);
  out.ci_lower = ci.lower;
  out.ci_upper = ci.upper;
  out.variance_clamped = ci.clamped_negative_variance;
  out.edge_rejections = edge_test(theta_hat, cov, n, alpha);
  out.alpha = alpha;
  out.n_used = n;
  return out;
}

Vector estimate_noise_variances(const ThetaVec& theta, const ObservationSet& obs) {
  if (theta.dim() != obs.dim()) throw Error(ErrorCode::Dimension, "estimate_noise_variances: dimension mismatch");
  const SystemParams p = theta.unpack();
  const Matrix fitted = trajectory(p, obs.times());
  return (obs.values() - fitted).array().square().rowwise().mean();
}

}  // namespace linode
