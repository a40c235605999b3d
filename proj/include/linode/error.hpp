#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace linode {

enum class ErrorCode {
  Dimension,
  Domain,
  Shape,
  ComplexSpectrum,
  NearDegenerate,
  NonPositiveEigenvalue,
  SingularWindow,
  SingularAggregationSum,
  NotPositiveDefinite,
  NonFinite,
  EmptyOutput,
  EmptySummary,
  UnknownPreset,
  Parse,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Spectrum failures mean the system cannot be recovered from
  /// equally-spaced samples.
  bool is_spectrum_error() const noexcept {
    return code_ == ErrorCode::ComplexSpectrum || code_ == ErrorCode::NearDegenerate ||
           code_ == ErrorCode::NonPositiveEigenvalue;
  }

 private:
  ErrorCode code_;
};

}  // namespace linode
