#pragma once

// System parameterization for x'(t) = A x(t), the flat parameter vector,
// equally-spaced observation sets and the Gaussian measurement model.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "linode/linalg.hpp"

namespace linode {

struct SystemParams {
  Vector x0;
  Matrix A;

  int dim() const { return static_cast<int>(x0.size()); }
  /// Throws ErrorCode::Dimension on inconsistent shapes or non-finite entries.
  void validate() const;
};

/// Flat parameter vector of length d + d^2: x0 first, then A row-major.
/// With 0-based indices, a_jk lives at d + j*d + k.
class ThetaVec {
 public:
  ThetaVec() = default;
  /// Throws ErrorCode::Shape when the length is not d + d^2 for some d >= 1.
  explicit ThetaVec(Vector values);

  static ThetaVec pack(const SystemParams& params);
  SystemParams unpack() const;

  static int dim_for_length(Eigen::Index length);
  static Eigen::Index index_of(int d, int j, int k) { return d + static_cast<Eigen::Index>(j) * d + k; }

  int dim() const { return dim_; }
  Eigen::Index size() const { return values_.size(); }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }
  double operator[](Eigen::Index i) const { return values_(i); }
  double& operator[](Eigen::Index i) { return values_(i); }

 private:
  Vector values_;
  int dim_ = 0;
};

enum class ObsKind { NoiseFree, Noisy, Aggregated, TimeScaled };

struct ObsLabel {
  ObsKind kind = ObsKind::NoiseFree;
  double k = 1.0;  // aggregation or scaling factor; unused otherwise

  std::string to_string() const;
};

/// d x n observations; column i was taken at time(i) = t_start + i*delta_t.
class ObservationSet {
 public:
  ObservationSet(Matrix values, double t_start, double delta_t, ObsLabel label);
  /// Same, with an explicit final time so t_end is reproduced exactly.
  ObservationSet(Matrix values, double t_start, double delta_t, double t_end, ObsLabel label);

  int dim() const { return static_cast<int>(values_.rows()); }
  int size() const { return static_cast<int>(values_.cols()); }
  double t_start() const { return t_start_; }
  double delta_t() const { return delta_t_; }
  double t_end() const { return t_end_; }
  double time(int i) const { return i == size() - 1 ? t_end_ : t_start_ + i * delta_t_; }
  std::vector<double> times() const;
  const Matrix& values() const { return values_; }
  const ObsLabel& label() const { return label_; }

 private:
  Matrix values_;
  double t_start_;
  double delta_t_;
  double t_end_;
  ObsLabel label_;
};

/// Diagonal Gaussian noise. The noise-free case is an explicit sentinel
/// rather than zero sigmas so that every stored sigma stays positive.
class NoiseSpec {
 public:
  NoiseSpec(Vector sigmas, std::uint64_t seed);
  static NoiseSpec noise_free() { return NoiseSpec(); }

  bool is_noise_free() const { return noise_free_; }
  const Vector& sigmas() const { return sigmas_; }
  std::uint64_t seed() const { return seed_; }

 private:
  NoiseSpec() = default;
  Vector sigmas_;
  std::uint64_t seed_ = 0;
  bool noise_free_ = true;
};

/// SplitMix64: a counter-based 64-bit generator; output m is a fixed
/// function of (seed, m).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  /// Uniform on the open interval (0, 1) from the top 53 bits.
  double next_open_unit();
  /// Standard normal deviate via the inverse-CDF transform.
  double next_normal();

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t state_;
};

/// Column i = e^{A times[i]} x0.
Matrix trajectory(const SystemParams& params, const std::vector<double>& times);

/// Grid t_i = i*T/(n-1), i = 0..n-1, values = trajectory + noise.
/// Noise deviates are drawn column-major (time-major), coordinate j of column
/// i consuming generator output i*d + j.
ObservationSet simulate_observations(const SystemParams& params, int n, double T,
                                     const NoiseSpec& noise);

void write_csv(std::ostream& out, const ObservationSet& obs);
void write_csv_file(const std::string& path, const ObservationSet& obs);
/// Reads `t,x1,...,xd`; rejects grids whose spacing deviates by more than
/// 1e-12 relative.
ObservationSet read_csv(std::istream& in, ObsLabel label = {ObsKind::Noisy, 1.0});
ObservationSet read_csv_file(const std::string& path, ObsLabel label = {ObsKind::Noisy, 1.0});

}  // namespace linode
