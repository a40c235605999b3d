#include <random>

#include "doctest.h"
#include "linode/degraded.hpp"
#include "linode/error.hpp"
#include "linode/harness.hpp"
#include "linode/nls.hpp"
#include "support.hpp"

using namespace linode;
using namespace linode::testing;

namespace {

Vector fd_gradient(const ThetaVec& theta, const ObservationSet& obs, double h = 1e-6) {
  Vector g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vector plus = theta.values(), minus = plus;
    plus(i) += h;
    minus(i) -= h;
    g(i) = (objective(ThetaVec(plus), obs) - objective(ThetaVec(minus), obs)) / (2 * h);
  }
  return g;
}

Matrix fd_dexpm(const Matrix& a, double t, int j, int k, double h = 1e-6) {
  Matrix plus = a, minus = a;
  plus(j, k) += h;
  minus(j, k) -= h;
  return (expm(plus * t) - expm(minus * t)) / (2 * h);
}

ObservationSet single(double y, double t) {
  return ObservationSet(Matrix::Constant(1, 1, y), t, 1.0, {ObsKind::Noisy, 1.0});
}

}  // namespace

TEST_CASE("objective identities") {
  const SystemParams p = preset_params("d3");
  const ThetaVec theta = ThetaVec::pack(p);
  const ObservationSet clean = simulate_observations(p, 80, 1.0, NoiseSpec::noise_free());
  CHECK(objective(theta, clean) <= 1e-18 * clean.values().squaredNorm());

  const ObservationSet noisy = simulate_observations(p, 80, 1.0, NoiseSpec(Vector::Constant(3, 0.05), 4));
  const double eps = (noisy.values() - clean.values()).colwise().squaredNorm().mean();
  CHECK(objective(theta, noisy) == doctest::Approx(eps).epsilon(1e-12));

  SystemParams s{Vector::Ones(1), Matrix::Zero(1, 1)};
  CHECK(objective(ThetaVec::pack(s), single(2.5, 0.7)) == doctest::Approx(1.5 * 1.5));

  CHECK(objective(ThetaVec::pack(theta.unpack()), noisy) == objective(theta, noisy));
}

TEST_CASE("scalar gradient matches the hand-derived formula") {
  const double x0 = 0.8, a = -0.6, y = 1.3, t = 0.9;
  SystemParams s{Vector::Constant(1, x0), Matrix::Constant(1, 1, a)};
  const Vector g = gradient(ThetaVec::pack(s), single(y, t)).values();
  const double e = std::exp(a * t);
  CHECK(g(0) == doctest::Approx(-2 * (y - e * x0) * e).epsilon(1e-13));
  CHECK(g(1) == doctest::Approx(-2 * y * t * e * x0 + 2 * x0 * x0 * t * e * e).epsilon(1e-13));
}

TEST_CASE("gradient vanishes at the truth on clean data") {
  const SystemParams p = preset_params("d3");
  const ObservationSet clean = simulate_observations(p, 50, 1.0, NoiseSpec::noise_free());
  CHECK(gradient(ThetaVec::pack(p), clean).values().cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(51);
  const SystemParams p = preset_params("d3");
  const ObservationSet obs = simulate_observations(p, 50, 1.0, NoiseSpec(Vector::Constant(3, 0.05), 5));
  for (int trial = 0; trial < 10; ++trial) {
    const ThetaVec theta(ThetaVec::pack(p).values() + 0.05 * random_vector(rng, 12));
    CHECK((gradient(theta, obs).values() - fd_gradient(theta, obs)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("gradient is correct where A has complex or repeated eigenvalues") {
  std::mt19937_64 rng(52);
  const ObservationSet obs = simulate_observations(preset_params("d2"), 40, 1.0, NoiseSpec(Vector::Constant(2, 0.1), 6));
  SystemParams rot{Vector::Ones(2), Matrix(2, 2)};
  rot.A << 0.1, -1.5, 1.5, 0.1;
  SystemParams jordan{Vector::Ones(2), Matrix(2, 2)};
  jordan.A << 0.4, 1.0, 0.0, 0.4;
  for (const SystemParams& p : {rot, jordan}) {
    const ThetaVec theta = ThetaVec::pack(p);
    const Vector fd = fd_gradient(theta, obs);
    CHECK((gradient(theta, obs).values() - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("dexpm_da fixtures") {
  Matrix diag = Matrix::Zero(3, 3);
  diag.diagonal() << 0.5, -1.0, 2.0;
  const double t = 0.8;
  for (int j = 0; j < 3; ++j) {
    Matrix want = Matrix::Zero(3, 3);
    want(j, j) = t * std::exp(diag(j, j) * t);
    CHECK((dexpm_da(diag, t, j, j) - want).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK(dexpm_da(diag, 0.0, 1, 2).norm() == 0.0);
}

TEST_CASE("dexpm_da routes agree with finite differences and each other") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> ut(0.0, 2.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = matrix_with_spectrum(rng, distinct_values(rng, 3, -1.5, 1.5, 0.1));
    const double t = ut(rng);
    const int j = trial % 3, k = (trial / 3) % 3;
    const Matrix fast = dexpm_da_spectral(eig_real(a), t, j, k);
    const Matrix block = dexpm_da_block(a, t, j, k);
    CHECK((fast - fd_dexpm(a, t, j, k)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((fast - block).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("FitOptions validation") {
  FitOptions o = FitOptions::around(ThetaVec::pack(a2_star()), 0.5, 0.001);
  CHECK_NOTHROW(o.validate());
  CHECK((o.init.values() - (ThetaVec::pack(a2_star()).values().array() - 0.001).matrix()).norm() < 1e-15);
  o.init[0] = o.upper(0) + 1.0;
  CHECK_THROWS_AS(o.validate(), Error);
  FitOptions d = FitOptions::with_default_bounds(ThetaVec::pack(a2_star()));
  CHECK(d.upper(3) - d.init[3] == 10.0);
  d.grad_tol = 0.0;
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("fit stays put at the truth on clean data") {
  const SystemParams p = a2_star();
  const ThetaVec theta = ThetaVec::pack(p);
  const ObservationSet clean = simulate_observations(p, 100, 1.0, NoiseSpec::noise_free());
  FitOptions o = FitOptions::around(theta, 0.5, 0.0);
  const EstimationResult r = fit(clean, o);
  CHECK(r.converged);
  CHECK(r.iterations <= 1);
  CHECK((r.theta_hat.values() - theta.values()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit recovers the two-dimensional system from noisy data") {
  const SystemParams p = a2_star();
  const ThetaVec theta = ThetaVec::pack(p);
  const ObservationSet obs = simulate_observations(p, 500, 1.0, NoiseSpec(Vector::Constant(2, 0.05), 2024));
  const EstimationResult r = fit(obs, FitOptions::around(theta, 0.5, 0.001));
  CHECK(r.converged);
  CHECK((r.theta_hat.values() - theta.values()).squaredNorm() < 0.1);
  CHECK(r.objective <= objective(FitOptions::around(theta, 0.5, 0.001).init, obs));
  CHECK(r.objective >= 0.0);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);
}

TEST_CASE("fit stops at a box face with the KKT conditions") {
  const SystemParams p = a2_star();
  const ThetaVec theta = ThetaVec::pack(p);
  const ObservationSet clean = simulate_observations(p, 100, 1.0, NoiseSpec::noise_free());
  FitOptions o = FitOptions::around(theta, 0.5, 0.0);
  o.upper(0) = theta[0] - 0.2;
  o.init[0] = o.upper(0);
  const EstimationResult r = fit(clean, o);
  CHECK(r.converged);
  CHECK(r.grad_norm <= 1e-6);
  REQUIRE_FALSE(r.active_bounds.empty());
  CHECK(r.active_bounds.front() == 0);
  CHECK(r.theta_hat[0] == o.upper(0));
  // The objective still decreases past the upper face.
  CHECK(fd_gradient(r.theta_hat, clean)(0) < 0.0);
}

TEST_CASE("fit is deterministic and reports non-convergence at max_iters") {
  const SystemParams p = preset_params("d3");
  const ThetaVec theta = ThetaVec::pack(p);
  const ObservationSet obs = simulate_observations(p, 200, 1.0, NoiseSpec(Vector::Constant(3, 0.05), 12));
  FitOptions o = FitOptions::around(theta, 0.5, 0.001);
  const EstimationResult a = fit(obs, o);
  const EstimationResult b = fit(obs, o);
  CHECK(a.theta_hat.values() == b.theta_hat.values());
  o.max_iters = 3;
  const EstimationResult c = fit(obs, o);
  CHECK_FALSE(c.converged);
  CHECK(c.iterations == 3);
}

TEST_CASE("fit on time-scaled data maps back to the original fit") {
  const SystemParams p = preset_params("d3");
  const ThetaVec theta = ThetaVec::pack(p);
  const ObservationSet obs = simulate_observations(p, 300, 1.0, NoiseSpec(Vector::Constant(3, 0.05), 77));
  const FitOptions base = FitOptions::around(theta, 0.5, 0.001);
  const EstimationResult ref = fit(obs, base);
  for (double k : {0.1, 10.0}) {
    const DegradedSpec spec = DegradedSpec::time_scaled(k);
    FitOptions o;
    o.lower = forward_params(ThetaVec(base.lower), spec).values();
    o.upper = forward_params(ThetaVec(base.upper), spec).values();
    o.init = forward_params(base.init, spec);
    const EstimationResult r = fit(time_scale(obs, k), o);
    CHECK(r.converged);
    const Vector back = g_map(r.theta_hat, spec).values();
    CHECK((back - ref.theta_hat.values()).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("fit rejects mismatched dimensions") {
  const ObservationSet obs = simulate_observations(a2_star(), 20, 1.0, NoiseSpec::noise_free());
  CHECK_THROWS_AS(fit(obs, FitOptions::around(ThetaVec::pack(preset_params("d3")), 0.5, 0.0)), Error);
}
