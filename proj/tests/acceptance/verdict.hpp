#pragma once

#include <string>

namespace acceptance {

struct Verdict {
  bool pass = false;
  std::string detail;
};

// Double-precision checks, defined in identities_f64.cpp.
Verdict loss_identities();
Verdict ema_center_algebra();

}  // namespace acceptance
