#include "folk/gradcheck_bridge.hpp"

#include "folk/gradcheck.hpp"

#if !defined(FOLK_REAL_DOUBLE)
#error "gradcheck_bridge.cpp belongs to the double-precision core"
#endif

namespace folk {

std::vector<std::string> gradcheck_names() { return f64::gradcheck::names(); }

std::vector<GradcheckReport> run_gradcheck(const std::string& which, std::uint64_t seed, double tol) {
  f64::gradcheck::Options opt;
  opt.seed = seed;
  opt.tol = tol;
  return f64::gradcheck::run(which, opt);
}

}  // namespace folk
