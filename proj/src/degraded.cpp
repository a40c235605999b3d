#include "linode/degraded.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "linode/error.hpp"
#include "linode/nls.hpp"

namespace linode {

DegradedSpec DegradedSpec::aggregated(int k, double base_delta_t) {
  DegradedSpec s{DegradeMode::Aggregated, static_cast<double>(k), base_delta_t};
  s.validate();
  return s;
}

DegradedSpec DegradedSpec::time_scaled(double k) {
  DegradedSpec s{DegradeMode::TimeScaled, k, 0.0};
  s.validate();
  return s;
}

void DegradedSpec::validate() const {
  if (mode == DegradeMode::Aggregated) {
    if (k < 1.0 || k != std::floor(k)) throw Error(ErrorCode::Domain, "aggregation factor must be an integer >= 2");
  } else if (!(k > 0.0) || !std::isfinite(k)) {
    throw Error(ErrorCode::Domain, "time-scaling factor must be positive");
  }
}

std::string DegradedSpec::to_string() const {
  std::ostringstream os;
  os << (mode == DegradeMode::Aggregated ? "aggregated:" : "timescale:") << k;
  return os.str();
}

DegradedSpec parse_degraded_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::Parse, "degrade spec must look like aggregated:k or timescale:k");
  const std::string mode = text.substr(0, colon);
  const std::string value = text.substr(colon + 1);
  double k = 0.0;
  try {
    std::size_t used = 0;
    k = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
  } catch (const std::exception&) {
    throw Error(ErrorCode::Parse, "bad degrade factor '" + value + "'");
  }
  if (mode == "aggregated") {
    if (k < 2.0 || k != std::floor(k)) throw Error(ErrorCode::Domain, "aggregation factor must be an integer >= 2");
    return DegradedSpec{DegradeMode::Aggregated, k, 0.0};
  }
  if (mode == "timescale" || mode == "time_scaled") return DegradedSpec::time_scaled(k);
  throw Error(ErrorCode::Parse, "unknown degrade mode '" + mode + "'");
}

ObservationSet aggregate(const ObservationSet& obs, int k) {
  if (k < 1) throw Error(ErrorCode::Domain, "aggregate: k must be positive");
  const int n_tilde = obs.size() / k;
  if (n_tilde < 1) {
    std::ostringstream os;
    os << "aggregate: k = " << k << " exceeds sample count " << obs.size();
    throw Error(ErrorCode::EmptyOutput, os.str());
  }
  Matrix values(obs.dim(), n_tilde);
  for (int j = 0; j < n_tilde; ++j) values.col(j) = obs.values().middleCols(j * k, k).rowwise().mean();
  const double t_end = obs.time((n_tilde - 1) * k);
  return ObservationSet(std::move(values), obs.t_start(), k * obs.delta_t(), t_end,
                        ObsLabel{ObsKind::Aggregated, static_cast<double>(k)});
}

ObservationSet time_scale(const ObservationSet& obs, double k) {
  if (!(k > 0.0)) throw Error(ErrorCode::Domain, "time_scale: k must be positive");
  if (k == 1.0) return obs;
  return ObservationSet(obs.values(), k * obs.t_start(), k * obs.delta_t(), k * obs.t_end(),
                        ObsLabel{ObsKind::TimeScaled, k});
}

namespace {

void require_base_dt(const DegradedSpec& spec) {
  if (spec.mode == DegradeMode::Aggregated && !(spec.base_delta_t > 0.0))
    throw Error(ErrorCode::Domain, "aggregated maps need the original grid spacing");
}

// I + e^{A dt} + ... + e^{A (k-1) dt}
Matrix propagator_sum(const Matrix& a, int k, double dt) {
  const Propagator prop(a);
  Matrix sum = Matrix::Identity(a.rows(), a.cols());
  for (int l = 1; l < k; ++l) sum += prop.at(l * dt);
  return sum;
}

// Jacobian of g given a routine producing Z_pq(t).
Matrix g_gradient_with(const ThetaVec& theta_tilde, const DegradedSpec& spec,
                       const std::function<Matrix(double, int, int)>& zeta) {
  const int d = theta_tilde.dim();
  const int m = d + d * d;
  const double kd = spec.k;
  Matrix G = Matrix::Zero(m, m);
  if (spec.mode == DegradeMode::TimeScaled) {
    G.topLeftCorner(d, d).setIdentity();
    G.bottomRightCorner(d * d, d * d) = kd * Matrix::Identity(d * d, d * d);
    return G;
  }
  const SystemParams p = theta_tilde.unpack();
  const int k = spec.agg_factor();
  const Eigen::PartialPivLU<Matrix> lu(propagator_sum(p.A, k, spec.base_delta_t));
  G.topLeftCorner(d, d) = kd * lu.inverse();
  const Vector x0 = kd * lu.solve(p.x0);  // g's x0 component
  for (int pp = 0; pp < d; ++pp) {
    for (int q = 0; q < d; ++q) {
      Matrix dsum = Matrix::Zero(d, d);
      for (int l = 1; l < k; ++l) dsum += zeta(l * spec.base_delta_t, pp, q);
      // d(S^{-1}) = -S^{-1} dS S^{-1}
      G.block(0, ThetaVec::index_of(d, pp, q), d, 1) = -lu.solve(dsum * x0);
    }
  }
  G.bottomRightCorner(d * d, d * d).setIdentity();
  return G;
}

}  // namespace

SystemParams forward_params(const SystemParams& params, const DegradedSpec& spec) {
  spec.validate();
  params.validate();
  if (spec.mode == DegradeMode::TimeScaled) return SystemParams{params.x0, params.A / spec.k};
  require_base_dt(spec);
  const Matrix sum = propagator_sum(params.A, spec.agg_factor(), spec.base_delta_t);
  return SystemParams{sum * params.x0 / spec.k, params.A};
}

ThetaVec forward_params(const ThetaVec& theta, const DegradedSpec& spec) {
  return ThetaVec::pack(forward_params(theta.unpack(), spec));
}

ThetaVec g_map(const ThetaVec& theta_tilde, const DegradedSpec& spec) {
  spec.validate();
  const SystemParams p = theta_tilde.unpack();
  if (spec.mode == DegradeMode::TimeScaled) return ThetaVec::pack(SystemParams{p.x0, spec.k * p.A});
  require_base_dt(spec);
  const Matrix sum = propagator_sum(p.A, spec.agg_factor(), spec.base_delta_t);
  const Eigen::JacobiSVD<Matrix> svd(sum);
  const Vector& sv = svd.singularValues();
  if (!(sv.minCoeff() > 1e-12 * sv.maxCoeff()))
    throw Error(ErrorCode::SingularAggregationSum, "propagator sum is numerically singular");
  return ThetaVec::pack(SystemParams{spec.k * sum.partialPivLu().solve(p.x0), p.A});
}

Matrix g_gradient(const ThetaVec& theta_tilde, const DegradedSpec& spec) {
  spec.validate();
  require_base_dt(spec);
  const Matrix a = theta_tilde.unpack().A;
  return g_gradient_with(theta_tilde, spec,
                         [&a](double t, int p, int q) { return dexpm_da_block(a, t, p, q); });
}

Matrix g_gradient_spectral(const ThetaVec& theta_tilde, const DegradedSpec& spec) {
  spec.validate();
  require_base_dt(spec);
  if (spec.mode == DegradeMode::TimeScaled) return g_gradient(theta_tilde, spec);
  const EigenDecomp eig = eig_real(theta_tilde.unpack().A);
  return g_gradient_with(theta_tilde, spec,
                         [&eig](double t, int p, int q) { return dexpm_da_spectral(eig, t, p, q); });
}

}  // namespace linode
