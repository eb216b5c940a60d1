#include "stochctl/error.hpp"

namespace stochctl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
      return "invalid-config";
    case ErrorKind::InvalidRegion:
      return "invalid-region";
    case ErrorKind::InvalidDensity:
      return "invalid-density";
    case ErrorKind::InvalidBudget:
      return "invalid-budget";
    case ErrorKind::DegenerateObservation:
      return "degenerate-observation";
    case ErrorKind::IterationLimit:
      return "iteration-limit";
    case ErrorKind::InternalConsistency:
      return "internal-consistency";
    case ErrorKind::OptimizerFailure:
      return "optimizer-failure";
  }
  return "unknown";
}

}  // namespace stochctl
