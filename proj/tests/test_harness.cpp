#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "linode/error.hpp"
#include "linode/harness.hpp"
#include "support.hpp"

using namespace linode;
using namespace linode::testing;

namespace {

ReplicationRecord record_at(const ThetaVec& theta, bool in_cr, const EdgeMatrix& rejected) {
  ReplicationRecord r;
  r.n = 100;
  r.n_tilde = 100;
  r.converged = true;
  r.theta_hat = theta;
  r.in_cr = in_cr;
  r.rejected = rejected;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("preset systems") {
  const SystemParams d2 = preset_params("d2");
  CHECK(d2.A == a2_star().A);
  CHECK(d2.x0 == a2_star().x0);

  const SystemParams d3 = preset_params("d3");
  CHECK(d3.A.col(1).isZero(0.0));
  CHECK(d3.x0(0) == 0.41);
  CHECK(d3.x0(1) == 0.14);
  CHECK(d3.x0(2) == 1.45);
  CHECK(d3.A(2, 2) == -0.1);

  const SystemParams d4 = preset_params("d4");
  CHECK(d4.A(3, 1) == 0.12);
  CHECK(d4.x0(0) == -0.42);
  CHECK(d4.x0(3) == -0.38);

  CHECK_THROWS_AS(preset_params("d5"), Error);
}

TEST_CASE("summarize fixtures") {
  const SystemParams truth = preset_params("d2");
  const ThetaVec theta = ThetaVec::pack(truth);
  EdgeMatrix truth_edges = truth.A.array() != 0.0;

  const MetricsRow one = summarize({record_at(theta, true, truth_edges)}, truth);
  CHECK(one.mse == 0.0);
  CHECK(one.cr_rate == 100.0);
  REQUIRE(one.type1.size() == 1);
  CHECK(one.type1[0].j == 1);
  CHECK(one.type1[0].k == 1);
  CHECK(one.type1[0].rate == 0.0);
  CHECK(one.type2.size() == 3);
  for (const auto& e : one.type2) CHECK(e.rate == 0.0);

  const MetricsRow two =
      summarize({record_at(theta, true, truth_edges), record_at(theta, false, truth_edges)}, truth);
  CHECK(two.cr_rate == 50.0);

  ReplicationRecord failed = record_at(theta, false, truth_edges);
  failed.converged = false;
  const MetricsRow with_failure = summarize({record_at(theta, true, truth_edges), failed}, truth);
  CHECK(with_failure.failures == 1);
  CHECK(with_failure.replications_used == 1);
  CHECK(with_failure.cr_rate == 100.0);

  try {
    summarize({failed}, truth);
    FAIL("expected EmptySummary");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySummary);
  }
}

TEST_CASE("summarize is order independent") {
  std::mt19937_64 rng(71);
  const SystemParams truth = preset_params("d3");
  std::vector<ReplicationRecord> recs;
  for (int i = 0; i < 30; ++i) {
    EdgeMatrix e = (random_matrix(rng, 3, 3).array() > 0.0);
    recs.push_back(record_at(ThetaVec(ThetaVec::pack(truth).values() + 0.1 * random_vector(rng, 12)), i % 3 == 0, e));
  }
  const MetricsRow a = summarize(recs, truth);
  std::reverse(recs.begin(), recs.end());
  const MetricsRow b = summarize(recs, truth);
  CHECK(a.mse == doctest::Approx(b.mse).epsilon(1e-14));
  CHECK(a.cr_rate == b.cr_rate);
  for (std::size_t i = 0; i < a.type1.size(); ++i) CHECK(a.type1[i].rate == b.type1[i].rate);
}

TEST_CASE("replication seeds and determinism") {
  CHECK(replication_seed(1, 100, 0) != replication_seed(1, 100, 1));
  CHECK(replication_seed(1, 100, 0) != replication_seed(1, 200, 0));
  CHECK(replication_seed(1, 100, 0) != replication_seed(2, 100, 0));

  ExperimentConfig c;
  c.preset = "d2";
  const ReplicationRecord a = run_replication(c, 200, 3);
  const ReplicationRecord b = run_replication(c, 200, 3);
  CHECK(a.seed == b.seed);
  CHECK(a.theta_hat.values() == b.theta_hat.values());
  CHECK(a.in_cr == b.in_cr);
  CHECK((a.rejected == b.rejected).all());
}

TEST_CASE("noise-free replication recovers the truth") {
  for (const char* id : {"d2", "d3"}) {
    ExperimentConfig c;
    c.preset = id;
    c.noise_free = true;
    const SystemParams truth = c.system();
    const ReplicationRecord r = run_replication(c, 2000, 0);
    CHECK(r.usable());
    CHECK(r.squared_error < 1e-12);
    CHECK(r.in_cr);
    for (int j = 0; j < truth.dim(); ++j)
      for (int k = 0; k < truth.dim(); ++k) CHECK(r.rejected(j, k) == (truth.A(j, k) != 0.0));
  }
}

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_experiment_config(R"({
    "preset": "d2", "sample_sizes": [50, 80], "replications": 3, "noise_sigma": 0.1,
    "T": 2.0, "alpha": 0.1, "degrade": "aggregated:2", "seed_base": 5, "init_offset": 0.002,
    "bound_halfwidth": 0.4, "edge_covariance": "true", "threads": 1, "quadrature_panels": 256,
    "max_iters": 700})");
  CHECK(c.preset == "d2");
  CHECK(c.sample_sizes == std::vector<int>{50, 80});
  CHECK(c.replications == 3);
  CHECK(c.noise_sigma == 0.1);
  CHECK(c.T == 2.0);
  CHECK(c.alpha == 0.1);
  REQUIRE(c.degrade);
  CHECK(c.degrade->mode == DegradeMode::Aggregated);
  CHECK(c.degrade->agg_factor() == 2);
  CHECK(c.seed_base == 5);
  CHECK(c.edge_covariance == EdgeCovariance::True);
  CHECK(c.quadrature_panels == 256);
  CHECK(c.max_iters == 700);

  const ExperimentConfig custom =
      parse_experiment_config(R"({"preset": {"custom": {"x0": [1.0], "A": [[-0.5]]}}, "sample_sizes": [10]})");
  CHECK(custom.system().A(0, 0) == -0.5);

  CHECK_THROWS_AS(parse_experiment_config(R"({"replications": 0})"), Error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"preset": "d2", "sample_sizes": [3]})"), Error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"degrade": "aggregated:5", "sample_sizes": [10]})"), Error);
  CHECK_THROWS_AS(parse_experiment_config("{not json"), Error);
}

TEST_CASE("run_experiment writes its artifacts") {
  const auto dir = std::filesystem::temp_directory_path() / "linode_harness_test";
  std::filesystem::remove_all(dir);
  ExperimentConfig c;
  c.preset = "d2";
  c.noise_free = true;
  c.replications = 1;
  c.sample_sizes = {1000, 2000};
  c.threads = 2;
  const ExperimentResult r = run_experiment(c, dir);
  REQUIRE(r.rows.size() == 2);
  for (const auto& row : r.rows) {
    CHECK(row.mse < 1e-12);
    CHECK(row.cr_rate == 100.0);
    CHECK(row.type1[0].rate == 0.0);
    for (const auto& e : row.type2) CHECK(e.rate == 0.0);
  }
  CHECK(r.empty_sizes.empty());
  for (const char* f : {"summary.csv", "summary.json", "records.jsonl", "plot_mse.csv", "plot_cr_rate.csv",
                        "plot_type1.csv", "plot_type2.csv"})
    CHECK(std::filesystem::exists(dir / f));
  const std::string header = slurp(dir / "summary.csv");
  CHECK(header.rfind("n,n_tilde,mse,cr_rate,type1_a22,type2_a11,type2_a12,type2_a21", 0) == 0);
  std::filesystem::remove_all(dir);
}
