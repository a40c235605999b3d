#include "linode/ode_model.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "linode/error.hpp"
#include "linode/quantiles.hpp"

namespace linode {

void SystemParams::validate() const {
  const auto d = x0.size();
  if (d < 1 || A.rows() != d || A.cols() != d) {
    std::ostringstream os;
    os << "SystemParams: x0 has length " << d << " but A is " << A.rows() << "x" << A.cols();
    throw Error(ErrorCode::Dimension, os.str());
  }
  if (!x0.allFinite() || !A.allFinite()) throw Error(ErrorCode::Dimension, "SystemParams: non-finite entries");
}

int ThetaVec::dim_for_length(Eigen::Index length) {
  for (Eigen::Index d = 1; d + d * d <= length; ++d)
    if (d + d * d == length) return static_cast<int>(d);
  std::ostringstream os;
  os << "parameter vector length " << length << " is not of the form d + d^2";
  throw Error(ErrorCode::Shape, os.str());
}

ThetaVec::ThetaVec(Vector values) : values_(std::move(values)), dim_(dim_for_length(values_.size())) {}

ThetaVec ThetaVec::pack(const SystemParams& params) {
  params.validate();
  const int d = params.dim();
  Vector v(d + d * d);
  v.head(d) = params.x0;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) v(index_of(d, j, k)) = params.A(j, k);
  return ThetaVec(std::move(v));
}

SystemParams ThetaVec::unpack() const {
  const int d = dim_;
  SystemParams p{values_.head(d), Matrix(d, d)};
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) p.A(j, k) = values_(index_of(d, j, k));
  return p;
}

std::string ObsLabel::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case ObsKind::NoiseFree: return "noise_free";
    case ObsKind::Noisy: return "noisy";
    case ObsKind::Aggregated: os << "aggregated(" << k << ")"; break;
    case ObsKind::TimeScaled: os << "time_scaled(" << k << ")"; break;
  }
  return os.str();
}

ObservationSet::ObservationSet(Matrix values, double t_start, double delta_t, ObsLabel label)
    : ObservationSet(std::move(values), t_start, delta_t,
                     t_start + (std::max<Eigen::Index>(values.cols(), 1) - 1) * delta_t, label) {}

ObservationSet::ObservationSet(Matrix values, double t_start, double delta_t, double t_end,
                               ObsLabel label)
    : values_(std::move(values)), t_start_(t_start), delta_t_(delta_t), t_end_(t_end), label_(label) {
  if (values_.cols() < 1 || values_.rows() < 1)
    throw Error(ErrorCode::Dimension, "ObservationSet: need at least one coordinate and one column");
  if (!(delta_t_ > 0.0) || !std::isfinite(t_start_) || !std::isfinite(t_end_))
    throw Error(ErrorCode::Domain, "ObservationSet: delta_t must be positive and times finite");
}

std::vector<double> ObservationSet::times() const {
  std::vector<double> out(static_cast<std::size_t>(size()));
  for (int i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = time(i);
  return out;
}

NoiseSpec::NoiseSpec(Vector sigmas, std::uint64_t seed)
    : sigmas_(std::move(sigmas)), seed_(seed), noise_free_(false) {
  if (sigmas_.size() < 1) throw Error(ErrorCode::Dimension, "NoiseSpec: empty sigma vector");
  for (Eigen::Index j = 0; j < sigmas_.size(); ++j)
    if (!(sigmas_(j) > 0.0) || !std::isfinite(sigmas_(j)))
      throw Error(ErrorCode::Domain, "NoiseSpec: sigmas must lie in (0, inf)");
}

std::uint64_t SplitMix64::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t SplitMix64::next() {
  state_ += 0x9e3779b97f4a7c15ULL;
  return mix(state_);
}

double SplitMix64::next_open_unit() {
  return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
}

double SplitMix64::next_normal() { return normal_quantile(next_open_unit()); }

Matrix trajectory(const SystemParams& params, const std::vector<double>& times) {
  params.validate();
  const Propagator prop(params.A);
  Matrix out(params.dim(), static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || times[i] < 0.0)
      throw Error(ErrorCode::Domain, "trajectory: times must be finite and non-negative");
    out.col(static_cast<Eigen::Index>(i)) = prop.apply(times[i], params.x0);
  }
  return out;
}

ObservationSet simulate_observations(const SystemParams& params, int n, double T,
                                     const NoiseSpec& noise) {
  if (n < 2 || !(T > 0.0)) throw Error(ErrorCode::Domain, "simulate_observations: need n >= 2 and T > 0");
  const int d = params.dim();
  const double dt = T / (n - 1);
  std::vector<double> times(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) times[static_cast<std::size_t>(i)] = (i == n - 1) ? T : i * dt;
  Matrix values = trajectory(params, times);
  ObsLabel label{ObsKind::NoiseFree, 1.0};
  if (!noise.is_noise_free()) {
    if (noise.sigmas().size() != d) throw Error(ErrorCode::Dimension, "simulate_observations: sigma length");
    SplitMix64 rng(noise.seed());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) values(j, i) += noise.sigmas()(j) * rng.next_normal();
    label.kind = ObsKind::Noisy;
  }
  return ObservationSet(std::move(values), 0.0, dt, T, label);
}

void write_csv(std::ostream& out, const ObservationSet& obs) {
  out << "t";
  for (int j = 0; j < obs.dim(); ++j) out << ",x" << (j + 1);
  out << "\n" << std::setprecision(17);
  for (int i = 0; i < obs.size(); ++i) {
    out << obs.time(i);
    for (int j = 0; j < obs.dim(); ++j) out << "," << obs.values()(j, i);
    out << "\n";
  }
}

void write_csv_file(const std::string& path, const ObservationSet& obs) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  write_csv(f, obs);
  if (!f) throw Error(ErrorCode::Io, "write failed for " + path);
}

namespace {

std::vector<double> parse_row(const std::string& line, std::size_t lineno) {
  std::vector<double> row;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      row.push_back(std::stod(cell, &used));
      while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, "line " + std::to_string(lineno) + ": bad number '" + cell + "'");
    }
  }
  return row;
}

}  // namespace

ObservationSet read_csv(std::istream& in, ObsLabel label) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, "empty CSV");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.pop_back();
      header.push_back(cell);
    }
  }
  if (header.size() < 2 || header[0] != "t") throw Error(ErrorCode::Parse, "header must be t,x1,...,xd");
  for (std::size_t j = 1; j < header.size(); ++j)
    if (header[j] != "x" + std::to_string(j)) throw Error(ErrorCode::Parse, "unexpected column '" + header[j] + "'");
  const auto d = static_cast<Eigen::Index>(header.size() - 1);

  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto row = parse_row(line, lineno);
    if (static_cast<Eigen::Index>(row.size()) != d + 1)
      throw Error(ErrorCode::Parse, "line " + std::to_string(lineno) + ": wrong column count");
    times.push_back(row[0]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::Parse, "CSV has no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix values(d, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) values(j, i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)];

  const double t0 = times.front();
  const double t1 = times.back();
  if (n == 1) return ObservationSet(std::move(values), t0, 1.0, t0, label);
  const double dt = (t1 - t0) / static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw Error(ErrorCode::Parse, "time column must be increasing");
  for (Eigen::Index i = 0; i < n; ++i) {
    const double expected = t0 + static_cast<double>(i) * dt;
    const double scale = std::max({std::abs(expected), std::abs(t1), dt});
    if (std::abs(times[static_cast<std::size_t>(i)] - expected) > 1e-12 * scale)
      throw Error(ErrorCode::Parse, "time grid is not equally spaced at row " + std::to_string(i + 1));
  }
  return ObservationSet(std::move(values), t0, dt, t1, label);
}

ObservationSet read_csv_file(const std::string& path, ObsLabel label) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  return read_csv(f, label);
}

}  // namespace linode
