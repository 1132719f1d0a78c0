#pragma once

// Precision switch. The core libraries are compiled twice: folk_core_f32
// (training) and folk_core_f64 (gradient checks and most tests). Each build
// lives in its own inline namespace so both can link into one binary.

#if defined(FOLK_REAL_DOUBLE)
#define FOLK_PRECISION_NS f64
#else
#define FOLK_PRECISION_NS f32
#endif

namespace folk {
inline namespace FOLK_PRECISION_NS {

#if defined(FOLK_REAL_DOUBLE)
using real = double;
#else
using real = float;
#endif

}  // namespace FOLK_PRECISION_NS
}  // namespace folk
