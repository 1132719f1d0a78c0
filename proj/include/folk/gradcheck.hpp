#pragma once

// Central-difference gradient checks for every autodiff op and for the
// composed pretraining loss. Meaningful in the double build only.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "folk/autodiff.hpp"
#include "folk/gradcheck_bridge.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace gradcheck {

using Fn = std::function<ad::Tensor(const std::vector<ad::Tensor>&)>;

struct Options {
  double eps = 1e-4;
  double tol = 1e-3;
  // Coordinates checked per input tensor; larger tensors are subsampled.
  std::size_t max_per_tensor = 64;
  std::uint64_t seed = 0;
};

// Compares backward() against (f(x + eps) - f(x - eps)) / 2eps for the
// inputs that require grad. Error is |a - n| / (|a| + 1e-8).
GradcheckReport check(const std::string& name, std::vector<ad::Tensor> inputs, const Fn& f, const Options& opt);

std::vector<std::string> names();

// `which` is "all" or one entry of names(); throws InvalidArgument otherwise.
std::vector<GradcheckReport> run(const std::string& which, const Options& opt);

}  // namespace gradcheck
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
