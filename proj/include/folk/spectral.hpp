#pragma once

// Exact 2D discrete Fourier transform and spectrum utilities.
//
// Conventions: the forward transform is unnormalized,
//   S(u,v) = sum_{h,w} x(h,w) exp(-2*pi*i*(u*h/H + v*w/W)),
// and the inverse carries the 1/(H*W) factor. Both axes use radix-2
// Cooley-Tukey, so every dimension must be a power of two.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace folk::spectral {

using Complex = std::complex<double>;

// H x W real grid, row-major.
struct RealGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  RealGrid() = default;
  RealGrid(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  std::size_t size() const { return data.size(); }
};

// H x W complex grid, row-major. Output of fft2.
struct ComplexSpectrum {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Complex> data;

  ComplexSpectrum() = default;
  ComplexSpectrum(std::size_t h, std::size_t w) : height(h), width(w), data(h * w) {}

  Complex& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  const Complex& at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  std::size_t size() const { return data.size(); }
};

struct InverseResult {
  RealGrid grid;
  // Largest |imag| discarded when taking the real part.
  double max_imag_residual = 0.0;
};

bool is_supported_length(std::size_t n);

// In-place 1D transform of a power-of-two length sequence. `inverse` flips
// the twiddle sign only; no normalization is applied.
void fft1d(std::span<Complex> data, bool inverse);

ComplexSpectrum fft2(const RealGrid& image);
ComplexSpectrum fft2(const ComplexSpectrum& input);
InverseResult ifft2(const ComplexSpectrum& spectrum);
// Complex-valued inverse with the 1/(HW) factor.
ComplexSpectrum ifft2_complex(const ComplexSpectrum& spectrum);

// Moves the DC bin to (H/2, W/2) (integer division). ifftshift undoes it.
ComplexSpectrum fftshift(const ComplexSpectrum& s);
ComplexSpectrum ifftshift(const ComplexSpectrum& s);
RealGrid fftshift(const RealGrid& g);
RealGrid ifftshift(const RealGrid& g);

RealGrid magnitude(const ComplexSpectrum& s);

}  // namespace folk::spectral
