#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace winstat {

enum class Errc {
  invalid_argument,
  malformed_input,
  out_of_range,
  missing_covariate,
  single_arm,
  dimension_mismatch,
  rank_deficient,
  separation,
  no_complete_cases,
  not_converged,
  singular_information,
  non_finite,
};

/// Validation errors concern the inputs; estimation errors arise while fitting
/// or propagating. The CLI maps them to exit codes 2 and 3.
enum class ErrorKind { validation, estimation };

constexpr ErrorKind kind_of(Errc code) noexcept {
  switch (code) {
    case Errc::rank_deficient:
    case Errc::separation:
    case Errc::no_complete_cases:
    case Errc::not_converged:
    case Errc::singular_information:
    case Errc::non_finite:
      return ErrorKind::estimation;
    default:
      return ErrorKind::validation;
  }
}

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string component, const std::string& message)
      : std::runtime_error(component + ": " + message),
        code_(code),
        component_(std::move(component)) {}

  Errc code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }
  const std::string& component() const noexcept { return component_; }

 private:
  Errc code_;
  std::string component_;
};

}  // namespace winstat
