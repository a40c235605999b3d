#include <random>
#include <sstream>

#include "doctest.h"
#include "linode/error.hpp"
#include "linode/harness.hpp"
#include "linode/ode_model.hpp"
#include "support.hpp"

using namespace linode;
using namespace linode::testing;

TEST_CASE("pack and unpack are mutually inverse") {
  std::mt19937_64 rng(21);
  for (int d = 1; d <= 5; ++d) {
    const ThetaVec theta(random_vector(rng, d + d * d));
    CHECK(theta.dim() == d);
    CHECK(ThetaVec::pack(theta.unpack()).values() == theta.values());
  }
}

TEST_CASE("packing contract") {
  SystemParams p = a2_star();
  const ThetaVec theta = ThetaVec::pack(p);
  // 1-based position 2 + (2-1)*2 + 1 = 5 holds a_21
  CHECK(theta[5 - 1] == p.A(1, 0));
  CHECK(ThetaVec::index_of(2, 1, 0) == 4);
  CHECK(theta[0] == 1.87);
  CHECK(theta[1] == -0.98);
  CHECK(theta[2] == 1.76);
  CHECK(theta[3] == -0.1);

  CHECK(ThetaVec(Vector::Zero(6)).dim() == 2);
  CHECK_THROWS_AS(ThetaVec(Vector::Zero(5)), Error);
  try {
    ThetaVec bad(Vector::Zero(7));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Shape);
  }
}

TEST_CASE("trajectory fixtures") {
  SystemParams zero;
  zero.x0 = Vector::LinSpaced(3, 1.0, 3.0);
  zero.A = Matrix::Zero(3, 3);
  const Matrix traj = trajectory(zero, {0.0, 0.5, 4.0});
  for (int i = 0; i < 3; ++i) CHECK(traj.col(i) == zero.x0);

  SystemParams scalar;
  scalar.x0 = Vector::Ones(1);
  scalar.A = Matrix::Constant(1, 1, -0.7);
  CHECK(std::abs(trajectory(scalar, {2.0})(0, 0) - std::exp(-1.4)) < 1e-15);

  const SystemParams p = a2_star();
  CHECK(trajectory(p, {0.0}).col(0).isApprox(p.x0, 1e-15));
}

TEST_CASE("trajectory semigroup") {
  std::mt19937_64 rng(22);
  const SystemParams p = random_identifiable(rng, 3);
  const std::vector<double> times{0.0, 0.3, 0.9};
  const double s = 0.45;
  const Matrix advanced = expm(p.A * s) * trajectory(p, times);
  const Matrix shifted = trajectory(p, {0.45, 0.75, 1.35});
  CHECK((advanced - shifted).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("simulate_observations grid and noise") {
  const SystemParams p = preset_params("d3");
  const ObservationSet clean = simulate_observations(p, 101, 2.0, NoiseSpec::noise_free());
  CHECK(clean.time(0) == 0.0);
  CHECK(clean.time(100) == 2.0);
  CHECK(clean.delta_t() == doctest::Approx(0.02).epsilon(1e-15));
  CHECK((clean.values() - trajectory(p, clean.times())).cwiseAbs().maxCoeff() == 0.0);

  const NoiseSpec noise(Vector::Constant(3, 0.05), 99);
  const ObservationSet a = simulate_observations(p, 50, 1.0, noise);
  const ObservationSet b = simulate_observations(p, 50, 1.0, noise);
  CHECK(a.values() == b.values());
  const ObservationSet c = simulate_observations(p, 50, 1.0, NoiseSpec(Vector::Constant(3, 0.05), 100));
  CHECK(a.values() != c.values());
}

TEST_CASE("noise variance matches sigma^2") {
  SystemParams p;
  p.x0 = Vector::Ones(2);
  p.A = Matrix::Zero(2, 2);
  Vector sigmas(2);
  sigmas << 0.05, 0.2;
  const int n = 100000;
  const ObservationSet obs = simulate_observations(p, n, 1.0, NoiseSpec(sigmas, 5));
  const Matrix eps = obs.values().colwise() - p.x0;
  for (int j = 0; j < 2; ++j) {
    const double mean = eps.row(j).mean();
    const double var = (eps.row(j).array() - mean).square().sum() / (n - 1);
    CHECK(std::abs(var / (sigmas(j) * sigmas(j)) - 1.0) < 0.03);
  }
}

TEST_CASE("NoiseSpec rejects non-positive sigmas") {
  CHECK_THROWS_AS(NoiseSpec(Vector::Zero(2), 1), Error);
}

TEST_CASE("SplitMix64 reference outputs") {
  // Published reference stream for seed 1234567.
  SplitMix64 g(1234567);
  CHECK(g.next() == 6457827717110365317ULL);
  CHECK(g.next() == 3203168211198807973ULL);
  CHECK(g.next() == 9817491932198370423ULL);
  SplitMix64 h(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = h.next_open_unit();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("CSV round trip") {
  const SystemParams p = preset_params("d2");
  const ObservationSet obs = simulate_observations(p, 11, 1.0, NoiseSpec(Vector::Constant(2, 0.05), 1));
  std::stringstream ss;
  write_csv(ss, obs);
  const std::string text = ss.str();
  CHECK(text.rfind("t,x1,x2\n", 0) == 0);
  const ObservationSet back = read_csv(ss);
  CHECK(back.size() == 11);
  CHECK(back.dim() == 2);
  CHECK(back.values() == obs.values());
  CHECK(back.time(10) == 1.0);
  CHECK(back.delta_t() == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("CSV reader rejects unequal spacing") {
  std::stringstream ss("t,x1\n0,1\n0.1,2\n0.25,3\n");
  try {
    read_csv(ss);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
  }
}
