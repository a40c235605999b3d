#include "linode/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "linode/error.hpp"
#include "linode/nls.hpp"

namespace linode {

using nlohmann::json;

SystemParams preset_params(const std::string& which) {
  if (which == "d2") {
    Matrix a(2, 2);
    a << 1.76, -0.1,
         0.98, 0.0;
    return SystemParams{(Vector(2) << 1.87, -0.98).finished(), a};
  }
  if (which == "d3") {
    Matrix a(3, 3);
    a << 1.76, 0.0, 0.98,
         2.24, 0.0, -0.98,
         0.95, 0.0, -0.1;
    return SystemParams{(Vector(3) << 0.41, 0.14, 1.45).finished(), a};
  }
  if (which == "d4") {
    Matrix a(4, 4);
    a << 1.76, 0.9, 0.0, 2.24,
         1.87, -0.98, 0.0, -1.15,
         -1.1, 0.0, 0.64, 0.0,
         1.26, 0.12, 0.94, 0.0;
    return SystemParams{(Vector(4) << -0.42, 1.01, 1.97, -0.38).finished(), a};
  }
  throw Error(ErrorCode::UnknownPreset, "unknown preset '" + which + "'");
}

SystemParams ExperimentConfig::system() const {
  if (preset == "custom") {
    if (!custom) throw Error(ErrorCode::UnknownPreset, "custom preset without parameters");
    custom->validate();
    return *custom;
  }
  return preset_params(preset);
}

void ExperimentConfig::validate() const {
  const int d = system().dim();
  if (replications < 1) throw Error(ErrorCode::Domain, "replications must be >= 1");
  if (sample_sizes.empty()) throw Error(ErrorCode::Domain, "sample_sizes is empty");
  if (!(noise_sigma > 0.0)) throw Error(ErrorCode::Domain, "noise_sigma must be positive");
  if (!(T > 0.0)) throw Error(ErrorCode::Domain, "T must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::Domain, "alpha must lie in (0, 1)");
  if (!(bound_halfwidth > 0.0) || init_offset < 0.0 || init_offset > bound_halfwidth)
    throw Error(ErrorCode::Domain, "need 0 <= init_offset <= bound_halfwidth");
  if (quadrature_panels < 2 || quadrature_panels % 2) throw Error(ErrorCode::Domain, "quadrature_panels must be even");
  if (max_iters < 1) throw Error(ErrorCode::Domain, "max_iters must be positive");
  for (int n : sample_sizes) {
    if (n < d + 2) throw Error(ErrorCode::Domain, "sample size " + std::to_string(n) + " below d + 2");
    if (degrade && degrade->mode == DegradeMode::Aggregated && n < (d + 1) * degrade->agg_factor())
      throw Error(ErrorCode::Domain, "sample size " + std::to_string(n) + " leaves too few aggregated samples");
  }
  if (degrade) degrade->validate();
}

namespace {

Vector vector_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::Parse, std::string(what) + " must be a non-empty array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Matrix matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::Parse, std::string(what) + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw Error(ErrorCode::Parse, std::string(what) + " rows must have equal length");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

DegradedSpec degrade_from_json(const json& j) {
  if (j.is_string()) return parse_degraded_spec(j.get<std::string>());
  const std::string mode = j.at("mode").get<std::string>();
  const double k = j.at("k").get<double>();
  std::ostringstream os;
  os << (mode == "aggregated" ? "aggregated" : mode) << ":" << std::setprecision(17) << k;
  return parse_degraded_spec(os.str());
}

std::string entry_name(int j, int k) { return "a" + std::to_string(j + 1) + std::to_string(k + 1); }

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  try {
    if (j.contains("preset")) {
      const json& p = j["preset"];
      if (p.is_string()) {
        c.preset = p.get<std::string>();
      } else if (p.is_object() && p.contains("custom")) {
        c.preset = "custom";
        c.custom = SystemParams{vector_from_json(p["custom"].at("x0"), "x0"), matrix_from_json(p["custom"].at("A"), "A")};
      } else {
        throw Error(ErrorCode::Parse, "preset must be a string or {\"custom\": {...}}");
      }
    }
    if (j.contains("sample_sizes")) c.sample_sizes = j["sample_sizes"].get<std::vector<int>>();
    if (j.contains("replications")) c.replications = j["replications"].get<int>();
    if (j.contains("noise_sigma")) c.noise_sigma = j["noise_sigma"].get<double>();
    if (j.contains("noise_free")) c.noise_free = j["noise_free"].get<bool>();
    if (j.contains("T")) c.T = j["T"].get<double>();
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("degrade") && !j["degrade"].is_null()) c.degrade = degrade_from_json(j["degrade"]);
    if (j.contains("seed_base")) c.seed_base = j["seed_base"].get<std::uint64_t>();
    if (j.contains("init_offset")) c.init_offset = j["init_offset"].get<double>();
    if (j.contains("bound_halfwidth")) c.bound_halfwidth = j["bound_halfwidth"].get<double>();
    if (j.contains("edge_covariance")) {
      const auto v = j["edge_covariance"].get<std::string>();
      if (v == "plugin") c.edge_covariance = EdgeCovariance::PlugIn;
      else if (v == "true") c.edge_covariance = EdgeCovariance::True;
      else throw Error(ErrorCode::Parse, "edge_covariance must be 'plugin' or 'true'");
    }
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
    if (j.contains("quadrature_panels")) c.quadrature_panels = j["quadrature_panels"].get<int>();
    if (j.contains("max_iters")) c.max_iters = j["max_iters"].get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str());
}

std::uint64_t replication_seed(std::uint64_t seed_base, int n, int rep) {
  std::uint64_t h = SplitMix64::mix(seed_base ^ 0x6a09e667f3bcc908ULL);
  h = SplitMix64::mix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(n)));
  h = SplitMix64::mix(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(rep)) << 32));
  return h;
}

namespace {

std::optional<DegradedSpec> grid_spec(const ExperimentConfig& config, int n) {
  if (!config.degrade) return std::nullopt;
  DegradedSpec s = *config.degrade;
  if (s.mode == DegradeMode::Aggregated) s.base_delta_t = config.T / (n - 1);
  return s;
}

Vector true_variances(const ExperimentConfig& config, int d) {
  return Vector::Constant(d, config.noise_sigma * config.noise_sigma);
}

SampleGrid make_grid(const ExperimentConfig& config, int n) {
  SampleGrid g;
  g.n = n;
  g.k = (config.degrade && config.degrade->mode == DegradeMode::Aggregated) ? config.degrade->agg_factor() : 1;
  return g;
}

}  // namespace

CovarianceReport true_covariance(const ExperimentConfig& config, int n) {
  const SystemParams truth = config.system();
  return sandwich(ThetaVec::pack(truth), config.T, true_variances(config, truth.dim()), grid_spec(config, n),
                  make_grid(config, n), config.quadrature_panels);
}

ReplicationRecord run_replication(const ExperimentConfig& config, int n, int rep) {
  return run_replication(config, n, rep, true_covariance(config, n));
}

ReplicationRecord run_replication(const ExperimentConfig& config, int n, int rep, const CovarianceReport& true_cov) {
  const SystemParams truth = config.system();
  const int d = truth.dim();
  const ThetaVec theta_star = ThetaVec::pack(truth);
  const std::optional<DegradedSpec> spec = grid_spec(config, n);
  const SampleGrid grid = make_grid(config, n);

  ReplicationRecord rec;
  rec.n = n;
  rec.n_tilde = grid.n_effective(spec);
  rec.rep = rep;
  rec.seed = replication_seed(config.seed_base, n, rep);

  const NoiseSpec noise = config.noise_free ? NoiseSpec::noise_free()
                                            : NoiseSpec(Vector::Constant(d, config.noise_sigma), rec.seed);
  const ObservationSet obs = simulate_observations(truth, n, config.T, noise);

  // Starting point and box live in the parameterization being fitted.
  FitOptions opts;
  ObservationSet fit_obs = obs;
  if (!spec) {
    opts = FitOptions::around(theta_star, config.bound_halfwidth, config.init_offset);
  } else if (spec->mode == DegradeMode::Aggregated) {
    fit_obs = aggregate(obs, spec->agg_factor());
    opts = FitOptions::around(forward_params(theta_star, *spec), config.bound_halfwidth, config.init_offset);
  } else {
    // Time scaling is a positive diagonal reparameterization, so the
    // original box maps onto a box.
    fit_obs = time_scale(obs, spec->k);
    const FitOptions base = FitOptions::around(theta_star, config.bound_halfwidth, config.init_offset);
    opts.lower = forward_params(ThetaVec(base.lower), *spec).values();
    opts.upper = forward_params(ThetaVec(base.upper), *spec).values();
    opts.init = forward_params(base.init, *spec);
  }

  opts.max_iters = config.max_iters;
  try {
    const EstimationResult est = fit(fit_obs, opts);
    rec.converged = est.converged;
    rec.iterations = est.iterations;
    rec.objective = est.objective;
    rec.theta_hat = spec ? g_map(est.theta_hat, *spec) : est.theta_hat;
  } catch (const Error& e) {
    rec.failure = e.what();
    return rec;
  }

  rec.squared_error = (rec.theta_hat.values() - theta_star.values()).squaredNorm();
  const CrTest cr = cr_test(rec.theta_hat, theta_star, true_cov, rec.n_tilde, config.alpha);
  rec.cr_statistic = cr.statistic;
  rec.in_cr = cr.inside;

  const CovarianceReport* edge_cov = &true_cov;
  CovarianceReport plug_in;
  if (config.edge_covariance == EdgeCovariance::PlugIn) {
    try {
      plug_in = sandwich(rec.theta_hat, config.T, true_variances(config, d), spec, grid, config.quadrature_panels);
      edge_cov = &plug_in;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotPositiveDefinite && e.code() != ErrorCode::SingularAggregationSum) throw;
      rec.edge_used_true_covariance = true;
    }
  }
  rec.rejected = edge_test(rec.theta_hat, *edge_cov, rec.n_tilde, config.alpha);
  return rec;
}

MetricsRow summarize(const std::vector<ReplicationRecord>& records, const SystemParams& truth) {
  if (records.empty()) throw Error(ErrorCode::EmptySummary, "no replication records");
  MetricsRow row;
  row.n = records.front().n;
  row.n_tilde = records.front().n_tilde;
  const ThetaVec theta_star = ThetaVec::pack(truth);
  const int d = truth.dim();

  double sse = 0.0;
  int inside = 0;
  Eigen::ArrayXXi rejections = Eigen::ArrayXXi::Zero(d, d);
  for (const auto& r : records) {
    if (!r.usable()) {
      ++row.failures;
      continue;
    }
    ++row.replications_used;
    sse += (r.theta_hat.values() - theta_star.values()).squaredNorm();
    inside += r.in_cr ? 1 : 0;
    rejections += r.rejected.cast<int>();
  }
  if (row.replications_used == 0)
    throw Error(ErrorCode::EmptySummary, "all " + std::to_string(records.size()) + " replications failed");

  const double used = row.replications_used;
  row.mse = sse / used;
  row.cr_rate = 100.0 * inside / used;
  for (int j = 0; j < d; ++j) {
    for (int k = 0; k < d; ++k) {
      const double reject_pct = 100.0 * rejections(j, k) / used;
      if (truth.A(j, k) == 0.0) row.type1.push_back({j, k, reject_pct});
      else row.type2.push_back({j, k, 100.0 - reject_pct});
    }
  }
  return row;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  const SystemParams truth = config.system();

  std::vector<CovarianceReport> covs;
  covs.reserve(config.sample_sizes.size());
  for (int n : config.sample_sizes) covs.push_back(true_covariance(config, n));

  const std::size_t per_size = static_cast<std::size_t>(config.replications);
  const std::size_t total = per_size * config.sample_sizes.size();
  ExperimentResult result;
  result.records.resize(total);

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t task = next++; task < total; task = next++) {
      const std::size_t size_idx = task / per_size;
      const int rep = static_cast<int>(task % per_size);
      try {
        result.records[task] = run_replication(config, config.sample_sizes[size_idx], rep, covs[size_idx]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads) : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(total)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  for (std::size_t s = 0; s < config.sample_sizes.size(); ++s) {
    const std::vector<ReplicationRecord> slice(result.records.begin() + static_cast<std::ptrdiff_t>(s * per_size),
                                               result.records.begin() + static_cast<std::ptrdiff_t>((s + 1) * per_size));
    try {
      result.rows.push_back(summarize(slice, truth));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptySummary) throw;
      MetricsRow empty;
      empty.n = slice.front().n;
      empty.n_tilde = slice.front().n_tilde;
      empty.mse = std::numeric_limits<double>::quiet_NaN();
      empty.cr_rate = std::numeric_limits<double>::quiet_NaN();
      empty.failures = static_cast<int>(slice.size());
      result.rows.push_back(empty);
      result.empty_sizes.push_back(empty.n);
    }
  }
  if (out_dir) write_experiment_artifacts(config, result, *out_dir);
  return result;
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + p.string() + " for writing");
  f << std::setprecision(10);
  return f;
}

json record_to_json(const ReplicationRecord& r) {
  json j;
  j["n"] = r.n;
  j["n_tilde"] = r.n_tilde;
  j["rep"] = r.rep;
  j["seed"] = r.seed;
  j["converged"] = r.converged;
  if (!r.failure.empty()) {
    j["failure"] = r.failure;
    return j;
  }
  j["theta_hat"] = std::vector<double>(r.theta_hat.values().data(), r.theta_hat.values().data() + r.theta_hat.size());
  j["squared_error"] = r.squared_error;
  j["cr_statistic"] = r.cr_statistic;
  j["in_cr"] = r.in_cr;
  json rej = json::array();
  for (Eigen::Index a = 0; a < r.rejected.rows(); ++a) {
    json row = json::array();
    for (Eigen::Index b = 0; b < r.rejected.cols(); ++b) row.push_back(static_cast<bool>(r.rejected(a, b)));
    rej.push_back(row);
  }
  j["rejected"] = rej;
  j["edge_used_true_covariance"] = r.edge_used_true_covariance;
  j["iterations"] = r.iterations;
  j["objective"] = r.objective;
  return j;
}

}  // namespace

void write_experiment_artifacts(const ExperimentConfig& config, const ExperimentResult& result,
                                const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  const SystemParams truth = config.system();
  const int d = truth.dim();

  std::vector<std::pair<int, int>> zero_entries, nonzero_entries;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) (truth.A(j, k) == 0.0 ? zero_entries : nonzero_entries).emplace_back(j, k);

  auto summary = open_out(out_dir / "summary.csv");
  summary << "n,n_tilde,mse,cr_rate";
  for (auto [j, k] : zero_entries) summary << ",type1_" << entry_name(j, k);
  for (auto [j, k] : nonzero_entries) summary << ",type2_" << entry_name(j, k);
  summary << "\n";
  json summary_json = json::array();
  for (const auto& row : result.rows) {
    summary << row.n << "," << row.n_tilde << "," << row.mse << "," << row.cr_rate;
    json rj{{"n", row.n}, {"n_tilde", row.n_tilde}, {"mse", row.mse}, {"cr_rate", row.cr_rate},
            {"replications_used", row.replications_used}, {"failures", row.failures}};
    for (const auto& e : row.type1) {
      summary << "," << e.rate;
      rj["type1"][entry_name(e.j, e.k)] = e.rate;
    }
    for (const auto& e : row.type2) {
      summary << "," << e.rate;
      rj["type2"][entry_name(e.j, e.k)] = e.rate;
    }
    if (row.replications_used == 0)
      for (std::size_t i = 0; i < zero_entries.size() + nonzero_entries.size(); ++i) summary << ",nan";
    summary << "\n";
    summary_json.push_back(rj);
  }
  auto sj = open_out(out_dir / "summary.json");
  sj << summary_json.dump(2) << "\n";

  auto records = open_out(out_dir / "records.jsonl");
  for (const auto& r : result.records) records << record_to_json(r).dump() << "\n";

  auto plot_scalar = [&](const char* name, auto getter) {
    auto f = open_out(out_dir / (std::string("plot_") + name + ".csv"));
    f << "n,n_tilde,value\n";
    for (const auto& row : result.rows) f << row.n << "," << row.n_tilde << "," << getter(row) << "\n";
  };
  plot_scalar("mse", [](const MetricsRow& r) { return r.mse; });
  plot_scalar("cr_rate", [](const MetricsRow& r) { return r.cr_rate; });

  auto plot_entries = [&](const char* name, auto member) {
    auto f = open_out(out_dir / (std::string("plot_") + name + ".csv"));
    f << "n,n_tilde,entry,value\n";
    for (const auto& row : result.rows)
      for (const auto& e : row.*member) f << row.n << "," << row.n_tilde << "," << entry_name(e.j, e.k) << "," << e.rate << "\n";
  };
  plot_entries("type1", &MetricsRow::type1);
  plot_entries("type2", &MetricsRow::type2);
}

}  // namespace linode
