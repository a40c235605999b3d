#pragma once

// Conditions A1 (Krylov independence) and A2 (distinct real spectrum), and
// closed-form recovery of (x0, A) from d+1 equally-spaced noise-free samples.

#include "linode/linalg.hpp"
#include "linode/ode_model.hpp"

namespace linode {

struct ToleranceSet {
  double rank_rel = 1e-10;
  double separation = kDefaultSeparationTol;
};

enum class SpectrumStatus { Ok, Complex, Repeated };

struct IdentifiabilityReport {
  bool a1_holds = false;
  double a1_min_singular = 0.0;
  bool a2_holds = false;
  SpectrumStatus a2_detail = SpectrumStatus::Ok;
  double min_separation = 0.0;  // meaningful for Ok and Repeated
  bool verdict = false;
};

/// Columns x0, A x0, ..., A^{d-1} x0.
Matrix krylov_matrix(const SystemParams& params);

IdentifiabilityReport check_identifiable(const SystemParams& params, const ToleranceSet& tol = {});

/// Uses the first d+1 columns only: Phi = X2 X1^{-1}, A = log(Phi)/dt,
/// x0 = e^{-A t_1} x_1. Throws SingularWindow when X1 is numerically
/// singular and propagates spectrum errors from the logarithm.
SystemParams recover_exact(const ObservationSet& obs, const ToleranceSet& tol = {});

}  // namespace linode
