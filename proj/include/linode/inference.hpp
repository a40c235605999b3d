#pragma once

// Sandwich covariance H^{-1} V H^{-1} of sqrt(n)(theta_hat - theta*) and the
// tests built on it: simultaneous confidence region, pointwise intervals and
// per-entry tests of a_jk = 0.

#include <optional>

#include "linode/degraded.hpp"
#include "linode/linalg.hpp"
#include "linode/ode_model.hpp"

namespace linode {

inline constexpr int kDefaultPanels = 1024;

/// Panel count keeping the Simpson step below 0.01 / (2 max(1, |lambda|max))
/// on [0, T], never fewer than kDefaultPanels.
int quadrature_panels_for(const ThetaVec& theta, double T);

/// Jacobian of t -> e^{At} x0 with respect to theta: (e^{At}, Z_11 x0, ..., Z_dd x0).
Matrix sensitivity(const ThetaVec& theta, double t);

/// 2/T * integral_0^T S^T S dt by composite Simpson, symmetrized.
Matrix h_matrix(const ThetaVec& theta, double T, int panels = kDefaultPanels);
/// 4/T * integral_0^T S^T diag(sigma2) S dt, symmetrized.
Matrix v_matrix(const ThetaVec& theta, double T, const Vector& sigma2, int panels = kDefaultPanels);

enum class CovariancePath { Original, Aggregated, TimeScaled };

struct CovarianceReport {
  Matrix H;
  Matrix V;
  Matrix sigma_n;
  CovariancePath path = CovariancePath::Original;
  double k = 1.0;
  double T_effective = 0.0;
  ThetaVec theta_at;  // original parameterization
  Vector sigma_used;  // noise variances
  int quadrature_panels = kDefaultPanels;
  bool identifiable = true;  // check_identifiable verdict at theta_at
};

struct SampleGrid {
  int n = 0;    // original sample count
  int k = 1;    // aggregation factor, 1 otherwise

  int n_effective(const std::optional<DegradedSpec>& spec) const;
};

/// theta is in the original parameterization. Aggregated path: H and V at
/// forward_params(theta) on [0, T~] with T~ = (floor(n/k)-1) k T/(n-1), V
/// divided by k, mapped through G = g_gradient. Time-scaled path: H, V on
/// [0, kT] at (x0, A/k) with G = diag(I, k I). Throws NotPositiveDefinite if
/// the Cholesky factorization of H fails.
CovarianceReport sandwich(const ThetaVec& theta, double T, const Vector& sigma2,
                          const std::optional<DegradedSpec>& spec, const SampleGrid& grid,
                          int panels = kDefaultPanels);

struct CrTest {
  double statistic = 0.0;
  double critical = 0.0;
  bool inside = false;
};

/// n (theta_hat - theta_ref)^T sigma_n^{-1} (theta_hat - theta_ref) against
/// the chi-square (1 - alpha) quantile with d + d^2 degrees of freedom.
CrTest cr_test(const ThetaVec& theta_hat, const ThetaVec& theta_ref, const CovarianceReport& cov, int n,
               double alpha);

struct IntervalSet {
  Vector lower;
  Vector upper;
  bool clamped_negative_variance = false;
};

IntervalSet pointwise_cis(const ThetaVec& theta_hat, const CovarianceReport& cov, int n, double alpha);

using EdgeMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// (j, k) is true when |a_jk| exceeds z_{alpha/2} sqrt(sigma_n[idx, idx] / n).
EdgeMatrix edge_test(const ThetaVec& theta_hat, const CovarianceReport& cov, int n, double alpha);

struct InferenceOutcome {
  double cr_statistic = 0.0;
  double cr_critical = 0.0;
  bool theta_in_cr = false;
  Vector ci_lower;
  Vector ci_upper;
  EdgeMatrix edge_rejections;
  double alpha = 0.05;
  int n_used = 0;
  bool variance_clamped = false;
};

/// Runs all three procedures; theta_ref defaults to theta_hat (statistic 0).
InferenceOutcome infer(const ThetaVec& theta_hat, const std::optional<ThetaVec>& theta_ref,
                       const CovarianceReport& cov, int n, double alpha);

/// Per-coordinate mean squared residual at theta, as a plug-in for the
/// noise variances when they are not known.
Vector estimate_noise_variances(const ThetaVec& theta, const ObservationSet& obs);

}  // namespace linode
