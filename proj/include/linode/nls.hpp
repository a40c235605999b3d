#pragma once

// Nonlinear least-squares objective M_n(theta) = (1/n) sum ||y_i - e^{A t_i} x0||^2,
// its analytic gradient and a box-constrained projected quasi-Newton solver.

#include <vector>

#include "linode/linalg.hpp"
#include "linode/ode_model.hpp"

namespace linode {

double objective(const ThetaVec& theta, const ObservationSet& obs);
ThetaVec gradient(const ThetaVec& theta, const ObservationSet& obs);

struct ObjectiveEval {
  double value = 0.0;
  Vector grad;  // packed like ThetaVec; empty when not requested
};

/// One pass over the data for both value and gradient.
ObjectiveEval evaluate_objective(const ThetaVec& theta, const ObservationSet& obs, bool with_gradient);

/// Z_jk(t) = d e^{At} / d a_jk (0-based j, k). Closed form through the
/// eigendecomposition when available, otherwise the block-expm route.
Matrix dexpm_da(const Matrix& A, double t, int j, int k);
/// Q [ (Q^{-1} E_jk Q) o U(t) ] Q^{-1}.
Matrix dexpm_da_spectral(const EigenDecomp& eig, double t, int j, int k);
/// Upper-right block of expm([[A, E_jk], [0, A]] t).
Matrix dexpm_da_block(const Matrix& A, double t, int j, int k);

struct FitOptions {
  Vector lower;
  Vector upper;
  ThetaVec init;
  double grad_tol = 1e-10;
  double step_tol = 1e-12;
  int max_iters = 500;
  int memory = 24;  // secant pairs kept; >= d + d^2 for d <= 4

  /// Box center +- halfwidth, starting at center - offset.
  static FitOptions around(const ThetaVec& center, double halfwidth, double offset);
  /// +-10 box around init, used when the caller supplies no bounds.
  static FitOptions with_default_bounds(const ThetaVec& init);
  /// Throws ErrorCode::Domain if the invariants do not hold.
  void validate() const;
};

struct EstimationResult {
  ThetaVec theta_hat;
  double objective = 0.0;
  double grad_norm = 0.0;  // infinity norm of the projected gradient in box coordinates
  int iterations = 0;
  bool converged = false;
  std::vector<Eigen::Index> active_bounds;
  std::vector<double> history;  // objective at every accepted iterate, init first
};

/// Projected L-BFGS with backtracking Armijo search along the projection arc.
/// Iterates live in box coordinates u = (theta - lower) / (upper - lower), and
/// grad_tol and step_tol apply there.
/// Throws ErrorCode::NonFinite when an accepted iterate yields a non-finite
/// objective or gradient.
EstimationResult fit(const ObservationSet& obs, const FitOptions& opts);

}  // namespace linode
