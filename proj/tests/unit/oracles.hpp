#pragma once

// Independent reference implementations the library is checked against.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "folk/autodiff.hpp"
#include "folk/spectral.hpp"

namespace oracle {

using folk::spectral::Complex;

// Direct double loop over every (u, v, h, w).
inline std::vector<Complex> naive_dft2(const std::vector<Complex>& x, std::size_t H, std::size_t W, bool inverse = false) {
  std::vector<Complex> out(H * W);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) {
      Complex acc = 0.0;
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          const double phase = sign * 2.0 * std::numbers::pi *
                               (static_cast<double>(u * h) / static_cast<double>(H) +
                                static_cast<double>(v * w) / static_cast<double>(W));
          acc += x[h * W + w] * Complex(std::cos(phase), std::sin(phase));
        }
      }
      out[u * W + v] = inverse ? acc / static_cast<double>(H * W) : acc;
    }
  }
  return out;
}

inline std::vector<Complex> naive_dft2(const folk::spectral::RealGrid& g) {
  std::vector<Complex> x(g.data.begin(), g.data.end());
  return naive_dft2(x, g.height, g.width);
}

inline folk::spectral::RealGrid random_grid(std::size_t h, std::size_t w, std::mt19937_64& gen, double lo = 0.0,
                                            double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  folk::spectral::RealGrid g(h, w);
  for (auto& v : g.data) v = d(gen);
  return g;
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

inline folk::ad::Tensor random_tensor(folk::ad::Shape shape, std::mt19937_64& gen, bool requires_grad = true,
                                      double lo = -1.0, double hi = 1.0) {
  const auto n = static_cast<std::size_t>(folk::ad::numel(shape));
  const auto v = random_values(n, gen, lo, hi);
  return folk::ad::Tensor(std::move(shape), std::vector<folk::real>(v.begin(), v.end()), requires_grad);
}

// Central differences of a scalar function of flat parameters.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double q : p)
    if (q > 0) h -= q * std::log(q);
  return h;
}

}  // namespace oracle
