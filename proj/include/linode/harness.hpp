#pragma once

// Monte-Carlo replication harness: simulate -> (degrade) -> fit -> map back ->
// confidence-region membership and per-entry edge tests, then MSE, within-CR
// rate and type I/II error tables.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "linode/degraded.hpp"
#include "linode/inference.hpp"
#include "linode/ode_model.hpp"

namespace linode {

/// "d2", "d3" or "d4"; throws ErrorCode::UnknownPreset otherwise.
SystemParams preset_params(const std::string& which);

/// Which covariance drives the edge tests. The within-CR metric always uses
/// the covariance at the true parameter with the true noise variances.
enum class EdgeCovariance { PlugIn, True };

struct ExperimentConfig {
  std::string preset = "d3";             // d2 | d3 | d4 | custom
  std::optional<SystemParams> custom;    // required when preset == "custom"
  std::vector<int> sample_sizes{100, 200, 500, 1000, 2000};
  int replications = 200;
  double noise_sigma = 0.05;
  bool noise_free = false;  // data without noise; noise_sigma still sets the covariance
  double T = 1.0;
  double alpha = 0.05;
  std::optional<DegradedSpec> degrade;
  std::uint64_t seed_base = 20240601;
  double init_offset = 0.001;
  double bound_halfwidth = 0.5;
  EdgeCovariance edge_covariance = EdgeCovariance::PlugIn;
  int threads = 0;  // 0 = hardware concurrency
  int quadrature_panels = kDefaultPanels;
  int max_iters = 5000;  // optimizer cap per replication

  SystemParams system() const;
  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Stable per-replication seed from (seed_base, n, rep) via SplitMix64 mixing.
std::uint64_t replication_seed(std::uint64_t seed_base, int n, int rep);

struct ReplicationRecord {
  int n = 0;
  int n_tilde = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  bool converged = false;
  std::string failure;  // non-empty when the fit threw
  ThetaVec theta_hat;   // original parameterization
  double squared_error = 0.0;
  double cr_statistic = 0.0;
  bool in_cr = false;
  EdgeMatrix rejected;
  bool edge_used_true_covariance = false;  // plug-in covariance was not PD
  int iterations = 0;
  double objective = 0.0;

  bool usable() const { return converged && failure.empty(); }
};

/// Covariance at the true parameter for one sample size; shared by all
/// replications of that size.
CovarianceReport true_covariance(const ExperimentConfig& config, int n);

ReplicationRecord run_replication(const ExperimentConfig& config, int n, int rep);
ReplicationRecord run_replication(const ExperimentConfig& config, int n, int rep, const CovarianceReport& true_cov);

struct EntryRate {
  int j = 0;  // 0-based
  int k = 0;
  double rate = 0.0;  // percent
};

struct MetricsRow {
  int n = 0;
  int n_tilde = 0;
  double mse = 0.0;
  double cr_rate = 0.0;
  std::vector<EntryRate> type1;  // zero entries of A*
  std::vector<EntryRate> type2;  // nonzero entries of A*
  int replications_used = 0;
  int failures = 0;
};

/// Metrics over the usable records (all with the same n). Throws
/// ErrorCode::EmptySummary when none is usable.
MetricsRow summarize(const std::vector<ReplicationRecord>& records, const SystemParams& truth);

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<ReplicationRecord> records;  // ordered by (n, rep)
  std::vector<int> empty_sizes;            // sample sizes with zero usable replications
};

/// Runs every (n, rep) in a worker pool. When out_dir is set writes
/// summary.csv, summary.json, records.jsonl and plot_<metric>.csv there.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

void write_experiment_artifacts(const ExperimentConfig& config, const ExperimentResult& result,
                                const std::filesystem::path& out_dir);

}  // namespace linode
