#include "folk/spectral.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "folk/error.hpp"

namespace folk::spectral {
namespace {

void check_length(std::size_t n, const char* axis) {
  if (!is_supported_length(n)) {
    throw SizeUnsupported(std::string("fft: unsupported ") + axis + " " + std::to_string(n) +
                          " (must be a power of two)");
  }
}

template <typename Grid>
Grid shift_impl(const Grid& in, std::size_t dr, std::size_t dc) {
  Grid out = in;
  for (std::size_t r = 0; r < in.height; ++r) {
    const std::size_t rr = (r + dr) % in.height;
    for (std::size_t c = 0; c < in.width; ++c) {
      out.data[rr * in.width + (c + dc) % in.width] = in.data[r * in.width + c];
    }
  }
  return out;
}

void transform_2d(ComplexSpectrum& s, bool inverse) {
  check_length(s.height, "height");
  check_length(s.width, "width");
  for (std::size_t r = 0; r < s.height; ++r) {
    fft1d(std::span<Complex>(s.data.data() + r * s.width, s.width), inverse);
  }
  std::vector<Complex> column(s.height);
  for (std::size_t c = 0; c < s.width; ++c) {
    for (std::size_t r = 0; r < s.height; ++r) column[r] = s.data[r * s.width + c];
    fft1d(column, inverse);
    for (std::size_t r = 0; r < s.height; ++r) s.data[r * s.width + c] = column[r];
  }
}

const std::vector<Complex>& twiddles(std::size_t n) {
  thread_local std::vector<std::vector<Complex>> cache(64);
  const auto slot = static_cast<std::size_t>(std::countr_zero(n));
  std::vector<Complex>& tw = cache[slot];
  if (tw.empty()) {
    tw.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      tw[k] = Complex(std::cos(angle), std::sin(angle));
    }
  }
  return tw;
}

}  // namespace

bool is_supported_length(std::size_t n) { return n >= 1 && (n & (n - 1)) == 0; }

void fft1d(std::span<Complex> data, bool inverse) {
  const std::size_t n = data.size();
  check_length(n, "length");
  if (n == 1) return;

  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  // Forward twiddles exp(-2*pi*i*k/n), evaluated directly for every k.
  const std::vector<Complex>& tw = twiddles(n);
  const double sign = inverse ? -1.0 : 1.0;
  double* d = reinterpret_cast<double*>(data.data());
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t k = 0; k < half; ++k) {
      const double wr = tw[k * stride].real();
      const double wi = sign * tw[k * stride].imag();
      for (std::size_t start = 0; start < n; start += len) {
        double* e = d + 2 * (start + k);
        double* o = d + 2 * (start + k + half);
        const double orr = o[0] * wr - o[1] * wi;
        const double oi = o[0] * wi + o[1] * wr;
        o[0] = e[0] - orr;
        o[1] = e[1] - oi;
        e[0] += orr;
        e[1] += oi;
      }
    }
  }
}

ComplexSpectrum fft2(const RealGrid& image) {
  ComplexSpectrum s(image.height, image.width);
  for (std::size_t i = 0; i < image.data.size(); ++i) s.data[i] = Complex(image.data[i], 0.0);
  transform_2d(s, false);
  return s;
}

ComplexSpectrum fft2(const ComplexSpectrum& input) {
  ComplexSpectrum s = input;
  transform_2d(s, false);
  return s;
}

ComplexSpectrum ifft2_complex(const ComplexSpectrum& spectrum) {
  ComplexSpectrum s = spectrum;
  transform_2d(s, true);
  const double scale = 1.0 / static_cast<double>(s.height * s.width);
  for (auto& v : s.data) v *= scale;
  return s;
}

InverseResult ifft2(const ComplexSpectrum& spectrum) {
  const ComplexSpectrum s = ifft2_complex(spectrum);
  InverseResult out{RealGrid(s.height, s.width), 0.0};
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    out.grid.data[i] = s.data[i].real();
    out.max_imag_residual = std::max(out.max_imag_residual, std::abs(s.data[i].imag()));
  }
  return out;
}

ComplexSpectrum fftshift(const ComplexSpectrum& s) { return shift_impl(s, s.height / 2, s.width / 2); }
ComplexSpectrum ifftshift(const ComplexSpectrum& s) {
  return shift_impl(s, s.height - s.height / 2, s.width - s.width / 2);
}
RealGrid fftshift(const RealGrid& g) { return shift_impl(g, g.height / 2, g.width / 2); }
RealGrid ifftshift(const RealGrid& g) { return shift_impl(g, g.height - g.height / 2, g.width - g.width / 2); }

RealGrid magnitude(const ComplexSpectrum& s) {
  RealGrid g(s.height, s.width);
  for (std::size_t i = 0; i < s.data.size(); ++i) g.data[i] = std::hypot(s.data[i].real(), s.data[i].imag());
  return g;
}

}  // namespace folk::spectral
