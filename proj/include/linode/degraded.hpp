#pragma once

// Aggregated and time-scaled observation pipelines with the maps between the
// original and the degraded parameterizations.
//
// Aggregated blocks are stamped at the time of their FIRST constituent sample,
// not the block midpoint; the degraded initial condition depends on this.

#include "linode/linalg.hpp"
#include "linode/ode_model.hpp"

namespace linode {

enum class DegradeMode { Aggregated, TimeScaled };

struct DegradedSpec {
  DegradeMode mode = DegradeMode::TimeScaled;
  double k = 1.0;            // integer >= 2 when aggregated (1 allowed internally), > 0 when time-scaled
  double base_delta_t = 0.0; // original grid spacing; required for aggregated maps

  static DegradedSpec aggregated(int k, double base_delta_t);
  static DegradedSpec time_scaled(double k);
  int agg_factor() const { return static_cast<int>(k); }
  /// Throws ErrorCode::Domain on an invalid factor.
  void validate() const;
  std::string to_string() const;
};

/// Parses "aggregated:k" / "timescale:k" (base_delta_t left at 0).
DegradedSpec parse_degraded_spec(const std::string& text);

/// floor(n/k) block means; remainder samples are dropped.
ObservationSet aggregate(const ObservationSet& obs, int k);
ObservationSet time_scale(const ObservationSet& obs, double k);

/// Aggregated: (x0 (I + e^{A dt} + ... + e^{A(k-1)dt}) / k, A).
/// Time-scaled: (x0, A / k).
SystemParams forward_params(const SystemParams& params, const DegradedSpec& spec);
ThetaVec forward_params(const ThetaVec& theta, const DegradedSpec& spec);

/// Inverse of forward_params. Throws SingularAggregationSum when the
/// propagator sum cannot be inverted.
ThetaVec g_map(const ThetaVec& theta_tilde, const DegradedSpec& spec);

/// Jacobian of g_map, rows = outputs, columns = inputs, both in ThetaVec order.
/// Aggregated mode evaluates each Z_pq through the block-expm route.
Matrix g_gradient(const ThetaVec& theta_tilde, const DegradedSpec& spec);
/// Aggregated-mode Jacobian with Z_pq from the eigendecomposition; throws
/// spectrum errors when A-tilde has no usable real eigenbasis.
Matrix g_gradient_spectral(const ThetaVec& theta_tilde, const DegradedSpec& spec);

}  // namespace linode
