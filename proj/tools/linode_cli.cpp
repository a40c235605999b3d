#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "linode/degraded.hpp"
#include "linode/error.hpp"
#include "linode/harness.hpp"
#include "linode/identifiability.hpp"
#include "linode/inference.hpp"
#include "linode/nls.hpp"
#include "linode/ode_model.hpp"

using namespace linode;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUnrecoverable = 2;
constexpr int kExitEmptySize = 3;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
}

void emit(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_json(Vector(m.row(r).transpose())));
  return rows;
}

json to_json(const EdgeMatrix& e) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < e.cols(); ++c) row.push_back(static_cast<bool>(e(r, c)));
    rows.push_back(row);
  }
  return rows;
}

json params_json(const SystemParams& p) { return {{"x0", to_json(p.x0)}, {"A", to_json(p.A)}}; }

Vector vector_from(const json& j, const char* what) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, std::string(what) + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

// Accepts {"x0": [...], "A": [[...]]} or a flat theta array.
ThetaVec theta_from(const json& j, const char* what) {
  if (j.is_array()) return ThetaVec(vector_from(j, what));
  if (!j.is_object() || !j.contains("x0") || !j.contains("A"))
    throw Error(ErrorCode::Parse, std::string(what) + " needs x0 and A");
  SystemParams p;
  p.x0 = vector_from(j["x0"], "x0");
  const json& rows = j["A"];
  if (!rows.is_array()) throw Error(ErrorCode::Parse, "A must be an array of rows");
  p.A = Matrix(static_cast<Eigen::Index>(rows.size()), p.x0.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Vector row = vector_from(rows[r], "A row");
    if (row.size() != p.x0.size()) throw Error(ErrorCode::Dimension, "A must be d x d with d = len(x0)");
    p.A.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  p.validate();
  return ThetaVec::pack(p);
}

SystemParams system_from(const std::string& preset, const std::string& params_path) {
  if (!params_path.empty()) return theta_from(read_json(params_path), "params").unpack();
  return preset_params(preset);
}

// "original", "aggregated:k" or "timescale:k"; the aggregated step comes from the data.
std::optional<DegradedSpec> path_from(const std::string& text, double base_delta_t) {
  if (text.empty() || text == "original") return std::nullopt;
  DegradedSpec s = parse_degraded_spec(text);
  if (s.mode == DegradeMode::Aggregated) s.base_delta_t = base_delta_t;
  return s;
}

fs::path sibling(const fs::path& out, const DegradedSpec& spec) {
  std::ostringstream tag;
  tag << (spec.mode == DegradeMode::Aggregated ? "aggregated" : "timescale") << spec.k;
  return out.parent_path() / (out.stem().string() + "." + tag.str() + out.extension().string());
}

int run_simulate(const std::string& preset, const std::string& params_path, int n, double T,
                 const std::vector<double>& sigmas, std::uint64_t seed, bool noise_free, const std::string& out,
                 const std::string& degrade) {
  const SystemParams p = system_from(preset, params_path);
  Vector s(p.dim());
  if (sigmas.size() == 1) s.setConstant(sigmas.front());
  else if (static_cast<int>(sigmas.size()) == p.dim()) s = Eigen::Map<const Vector>(sigmas.data(), p.dim());
  else throw Error(ErrorCode::Dimension, "--sigma takes one value or one per coordinate");
  const NoiseSpec noise = noise_free ? NoiseSpec::noise_free() : NoiseSpec(s, seed);
  const ObservationSet obs = simulate_observations(p, n, T, noise);
  write_csv_file(out, obs);
  std::cerr << "wrote " << out << "\n";
  if (const auto spec = path_from(degrade, obs.delta_t())) {
    const ObservationSet deg =
        spec->mode == DegradeMode::Aggregated ? aggregate(obs, spec->agg_factor()) : time_scale(obs, spec->k);
    const fs::path dpath = sibling(out, *spec);
    write_csv_file(dpath.string(), deg);
    std::cerr << "wrote " << dpath.string() << "\n";
  }
  return 0;
}

int run_recover(const std::string& data, const std::string& out) {
  try {
    emit(params_json(recover_exact(read_csv_file(data, {ObsKind::NoiseFree, 1.0}))), out);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SingularWindow || e.is_spectrum_error()) {
      std::cerr << "recover: " << e.what() << "\n";
      return kExitUnrecoverable;
    }
    throw;
  }
  return 0;
}

FitOptions fit_options_from(const json& j, const std::optional<DegradedSpec>& spec) {
  if (!j.contains("init")) throw Error(ErrorCode::Parse, "fit options need 'init'");
  const ThetaVec init = theta_from(j["init"], "init");
  FitOptions o;
  if (j.contains("halfwidth")) {
    o = FitOptions::around(init, j["halfwidth"].get<double>(), 0.0);
  } else {
    o = FitOptions::with_default_bounds(init);
  }
  if (j.contains("lower")) o.lower = theta_from(j["lower"], "lower").values();
  if (j.contains("upper")) o.upper = theta_from(j["upper"], "upper").values();
  if (j.contains("grad_tol")) o.grad_tol = j["grad_tol"].get<double>();
  if (j.contains("step_tol")) o.step_tol = j["step_tol"].get<double>();
  if (j.contains("max_iters")) o.max_iters = j["max_iters"].get<int>();
  if (spec) {
    // Options are given in the original parameterization.
    if (spec->mode == DegradeMode::TimeScaled) {
      o.lower = forward_params(ThetaVec(o.lower), *spec).values();
      o.upper = forward_params(ThetaVec(o.upper), *spec).values();
    } else {
      const Vector half = (o.upper - o.lower) / 2;
      const ThetaVec center = forward_params(ThetaVec(Vector((o.upper + o.lower) / 2)), *spec);
      o.lower = center.values() - half;
      o.upper = center.values() + half;
    }
    o.init = forward_params(o.init, *spec);
  }
  o.validate();
  return o;
}

int run_fit(const std::string& data, const std::string& options, const std::string& degrade,
            const std::string& out) {
  const ObservationSet obs = read_csv_file(data);
  const auto spec = path_from(degrade, obs.delta_t());
  const FitOptions opts = fit_options_from(read_json(options), spec);
  ObservationSet fit_obs = obs;
  if (spec)
    fit_obs = spec->mode == DegradeMode::Aggregated ? aggregate(obs, spec->agg_factor()) : time_scale(obs, spec->k);
  const EstimationResult r = fit(fit_obs, opts);
  const ThetaVec theta = spec ? g_map(r.theta_hat, *spec) : r.theta_hat;
  json j = params_json(theta.unpack());
  j["theta_hat"] = to_json(theta.values());
  if (spec) {
    j["path"] = spec->to_string();
    j["theta_tilde"] = to_json(r.theta_hat.values());
  }
  j["objective"] = r.objective;
  j["grad_norm"] = r.grad_norm;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["active_bounds"] = r.active_bounds;
  j["n"] = obs.size();
  emit(j, out);
  return r.converged ? 0 : kExitFailure;
}

int run_infer(const std::string& result, const std::string& data, double alpha, const std::string& sigma,
              const std::string& path, const std::string& theta_ref, int panels, const std::string& out) {
  const ObservationSet obs = read_csv_file(data);
  const json rj = read_json(result);
  const ThetaVec theta = rj.contains("theta_hat") ? ThetaVec(vector_from(rj["theta_hat"], "theta_hat"))
                                                  : theta_from(rj, "result");
  if (theta.dim() != obs.dim()) throw Error(ErrorCode::Dimension, "result and data dimensions differ");

  Vector s2;
  if (sigma == "estimate") {
    s2 = estimate_noise_variances(theta, obs);
  } else if (sigma.rfind("known:", 0) == 0) {
    std::vector<double> vals;
    std::stringstream ss(sigma.substr(6));
    for (std::string item; std::getline(ss, item, ',');) vals.push_back(std::stod(item));
    if (vals.size() == 1) s2 = Vector::Constant(obs.dim(), vals.front());
    else if (static_cast<int>(vals.size()) == obs.dim()) s2 = Eigen::Map<const Vector>(vals.data(), obs.dim());
    else throw Error(ErrorCode::Dimension, "--sigma known: takes one variance or one per coordinate");
  } else {
    throw Error(ErrorCode::Parse, "--sigma must be 'known:<v1,...>' or 'estimate'");
  }

  const auto spec = path_from(path, obs.delta_t());
  const SampleGrid grid{obs.size(), spec && spec->mode == DegradeMode::Aggregated ? spec->agg_factor() : 1};
  const double T = obs.t_end() - obs.t_start();
  const int quad = panels > 0 ? panels : quadrature_panels_for(theta, spec && spec->mode == DegradeMode::TimeScaled ? spec->k * T : T);
  const CovarianceReport cov = sandwich(theta, T, s2, spec, grid, quad);
  const int n = grid.n_effective(spec);
  std::optional<ThetaVec> ref;
  if (!theta_ref.empty()) ref = theta_from(read_json(theta_ref), "theta_ref");
  const InferenceOutcome o = infer(theta, ref, cov, n, alpha);

  json j;
  j["alpha"] = o.alpha;
  j["n_used"] = o.n_used;
  j["path"] = spec ? spec->to_string() : "original";
  j["sigma2"] = to_json(cov.sigma_used);
  j["cr_statistic"] = o.cr_statistic;
  j["cr_critical"] = o.cr_critical;
  j["theta_in_cr"] = o.theta_in_cr;
  j["ci_lower"] = to_json(o.ci_lower);
  j["ci_upper"] = to_json(o.ci_upper);
  j["edge_rejections"] = to_json(o.edge_rejections);
  j["variance_clamped"] = o.variance_clamped;
  j["identifiable"] = cov.identifiable;
  j["quadrature_panels"] = cov.quadrature_panels;
  j["sigma_n"] = to_json(cov.sigma_n);
  emit(j, out);
  return 0;
}

int run_experiment_cmd(const std::string& config, const std::string& out) {
  const ExperimentConfig c = load_experiment_config(config);
  const ExperimentResult r = run_experiment(c, out.empty() ? std::nullopt : std::optional<fs::path>(out));
  std::cout << "n,n_tilde,mse,cr_rate,used,failures\n";
  for (const MetricsRow& row : r.rows)
    std::cout << row.n << "," << row.n_tilde << "," << row.mse << "," << row.cr_rate << "," << row.replications_used
              << "," << row.failures << "\n";
  for (int n : r.empty_sizes) std::cerr << "no converged replications at n=" << n << "\n";
  return r.empty_sizes.empty() ? 0 : kExitEmptySize;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identification and inference for linear ODE systems x' = Ax"};
  app.require_subcommand(1);

  std::string preset = "d3", params, out, data, options, degrade, result, sigma = "estimate", path = "original",
              theta_ref, config;
  int n = 100, panels = 0;
  double T = 1.0, alpha = 0.05;
  std::vector<double> sigmas{0.05};
  std::uint64_t seed = 1;
  bool noise_free = false;

  auto* sim = app.add_subcommand("simulate", "Simulate equally-spaced observations to CSV");
  sim->add_option("--preset", preset, "d2, d3 or d4")->check(CLI::IsMember({"d2", "d3", "d4"}));
  sim->add_option("--params", params, "JSON file with x0 and A (overrides --preset)")->check(CLI::ExistingFile);
  sim->add_option("-n,--n", n, "Number of samples")->check(CLI::Range(2, 100000000));
  sim->add_option("-T,--T", T, "Final time")->check(CLI::PositiveNumber);
  sim->add_option("--sigma", sigmas, "Noise standard deviation, one value or one per coordinate");
  sim->add_option("--seed", seed, "Noise seed");
  sim->add_flag("--noise-free", noise_free, "Omit measurement noise");
  sim->add_option("--degrade", degrade, "aggregated:k or timescale:k; also writes the degraded CSV");
  sim->add_option("-o,--out", out, "Output CSV")->required();

  auto* rec = app.add_subcommand("recover", "Closed-form (x0, A) from the first d+1 samples");
  rec->add_option("-d,--data", data, "Observation CSV")->required()->check(CLI::ExistingFile);
  rec->add_option("-o,--out", out, "Output JSON (stdout if omitted)");

  auto* fit_cmd = app.add_subcommand("fit", "Box-constrained least-squares estimate");
  fit_cmd->add_option("-d,--data", data, "Observation CSV")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--options", options, "JSON with init and optional lower, upper, halfwidth, tolerances")
      ->required()
      ->check(CLI::ExistingFile);
  fit_cmd->add_option("--degrade", degrade, "Fit on aggregated:k or timescale:k data and map back");
  fit_cmd->add_option("-o,--out", out, "Output JSON (stdout if omitted)");

  auto* inf = app.add_subcommand("infer", "Confidence region, intervals and edge tests");
  inf->add_option("-r,--result", result, "Fit result JSON (theta_hat, or x0 and A)")->required()->check(CLI::ExistingFile);
  inf->add_option("-d,--data", data, "Original observation CSV")->required()->check(CLI::ExistingFile);
  inf->add_option("--alpha", alpha, "Significance level")->check(CLI::Range(1e-12, 1.0 - 1e-12));
  inf->add_option("--sigma", sigma, "known:<v1,...> noise variances, or estimate");
  inf->add_option("--path", path, "original, aggregated:k or timescale:k");
  inf->add_option("--theta-ref", theta_ref, "Reference parameter JSON for the confidence-region test")
      ->check(CLI::ExistingFile);
  inf->add_option("--panels", panels, "Simpson panels (default chosen from the spectrum)");
  inf->add_option("-o,--out", out, "Output JSON (stdout if omitted)");

  auto* exp = app.add_subcommand("experiment", "Monte-Carlo replication study");
  exp->add_option("-c,--config", config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  exp->add_option("-o,--out", out, "Directory for summary and plot CSVs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return run_simulate(preset, params, n, T, sigmas, seed, noise_free, out, degrade);
    if (*rec) return run_recover(data, out);
    if (*fit_cmd) return run_fit(data, options, degrade, out);
    if (*inf) return run_infer(result, data, alpha, sigma, path, theta_ref, panels, out);
    if (*exp) return run_experiment_cmd(config, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
