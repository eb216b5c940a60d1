#pragma once

#include <stdexcept>
#include <string>

namespace stochctl {

enum class ErrorKind {
  InvalidConfig,
  InvalidRegion,
  InvalidDensity,
  InvalidBudget,
  DegenerateObservation,
  IterationLimit,
  InternalConsistency,
  OptimizerFailure,
};

const char* to_string(ErrorKind kind);

/// Structured failure raised by every module. `value` carries a diagnostic
/// number when one exists (smallest Gram eigenvalue, final residual, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, double value = 0.0)
      : std::runtime_error(what), kind_(kind), value_(value) {}

  ErrorKind kind() const noexcept { return kind_; }
  double value() const noexcept { return value_; }

 private:
  ErrorKind kind_;
  double value_;
};

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) throw Error(kind, what);
}

}  // namespace stochctl
