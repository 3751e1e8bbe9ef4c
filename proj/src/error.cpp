#include "ecm_sphere/error.hpp"

namespace ecm_sphere {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_label: return "invalid-label";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::degenerate_norm: return "degenerate-norm";
    case ErrorKind::contract: return "contract";
    case ErrorKind::config: return "config";
    case ErrorKind::format: return "format";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::empty_objective: return "empty-objective";
    case ErrorKind::degenerate_geometry: return "degenerate-geometry";
    case ErrorKind::missing_label: return "missing-label";
    case ErrorKind::undefined_correlation: return "undefined-correlation";
    case ErrorKind::evaluation: return "evaluation";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace ecm_sphere
