#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace eks {

struct ValidationOptions {
  std::uint64_t seed = 0;
  /// Scales the drift of every particle step; 1 is the unmodified dynamics.
  double drift_scale = 1.0;
};

/// One property check. It passes when value <= threshold; a check that
/// throws is reported as failed with the error in `message`.
struct ValidationOutcome {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string message;
};

/// Small-size invariant checks for every library module.
std::vector<ValidationOutcome> run_validation_checks(const ValidationOptions& options);

}  // namespace eks
