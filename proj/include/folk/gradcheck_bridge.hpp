#pragma once

// Precision-independent entry point to the gradient checks. Defined by
// folk_core_f64 so float builds can call into the double implementation.

#include <cstdint>
#include <string>
#include <vector>

namespace folk {

struct GradcheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

std::vector<std::string> gradcheck_names();

// `which` is "all" or a name from gradcheck_names().
std::vector<GradcheckReport> run_gradcheck(const std::string& which, std::uint64_t seed = 0, double tol = 1e-3);

}  // namespace folk
