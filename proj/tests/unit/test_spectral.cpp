#include <cmath>
#include <random>

#include "doctest.h"
#include "folk/error.hpp"
#include "folk/spectral.hpp"
#include "oracles.hpp"

using namespace folk::spectral;

namespace {

double max_bin_error(const ComplexSpectrum& s, const std::vector<Complex>& ref) {
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(s.data[i] - ref[i]));
  return worst;
}

}  // namespace

TEST_CASE("fft2 agrees with the direct double loop for every power-of-two size") {
  std::mt19937_64 gen(11);
  for (std::size_t n : {1u, 2u, 4u, 8u, 16u, 32u}) {
    const RealGrid g = oracle::random_grid(n, n, gen);
    CHECK(max_bin_error(fft2(g), oracle::naive_dft2(g)) < 1e-9);
  }
  const RealGrid rect = oracle::random_grid(4, 16, gen);
  CHECK(max_bin_error(fft2(rect), oracle::naive_dft2(rect)) < 1e-9);
}

TEST_CASE("fft2 of a constant puts everything in the DC bin") {
  const RealGrid g(8, 8, 0.3);
  const ComplexSpectrum s = fft2(g);
  CHECK(s.at(0, 0).real() == doctest::Approx(64 * 0.3).epsilon(1e-14));
  CHECK(std::abs(s.at(0, 0).imag()) < 1e-12);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(std::abs(s.data[i]) < 1e-12);
}

TEST_CASE("fft2 of an impulse is flat") {
  RealGrid g(4, 4, 0.0);
  g.at(0, 0) = 1.0;
  for (const Complex& c : fft2(g).data) {
    CHECK(c.real() == doctest::Approx(1.0));
    CHECK(std::abs(c.imag()) < 1e-15);
  }
}

TEST_CASE("unsupported sizes name the offending dimension") {
  CHECK_THROWS_AS(fft2(RealGrid(6, 8)), folk::SizeUnsupported);
  try {
    fft2(RealGrid(8, 12));
    FAIL("expected SizeUnsupported");
  } catch (const folk::SizeUnsupported& e) {
    CHECK(std::string(e.what()).find("width 12") != std::string::npos);
  }
  CHECK_THROWS_AS(ifft2(ComplexSpectrum(3, 4)), folk::SizeUnsupported);
}

TEST_CASE("inverse transform round trip and degenerate spectra") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const RealGrid g = oracle::random_grid(32, 32, gen);
    const InverseResult r = ifft2(fft2(g));
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(r.grid.data[i] - g.data[i]));
    CHECK(worst < 1e-6);
    CHECK(r.max_imag_residual < 1e-5);
  }
  const InverseResult zero = ifft2(ComplexSpectrum(8, 8));
  for (double v : zero.grid.data) CHECK(v == 0.0);

  ComplexSpectrum dc(8, 4);
  dc.at(0, 0) = Complex(32 * 0.7, 0.0);
  for (double v : ifft2(dc).grid.data) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("complex inverse matches the direct inverse sum") {
  std::mt19937_64 gen(5);
  std::vector<Complex> x(8 * 16);
  for (auto& c : x) c = Complex(std::uniform_real_distribution<double>(-1, 1)(gen), std::uniform_real_distribution<double>(-1, 1)(gen));
  ComplexSpectrum s(8, 16);
  s.data = x;
  CHECK(max_bin_error(ifft2_complex(s), oracle::naive_dft2(x, 8, 16, true)) < 1e-12);
  CHECK(max_bin_error(fft2(s), oracle::naive_dft2(x, 8, 16)) < 1e-9);
}

TEST_CASE("linearity, Parseval and conjugate symmetry") {
  std::mt19937_64 gen(17);
  const RealGrid x = oracle::random_grid(16, 16, gen, -1, 1);
  const RealGrid y = oracle::random_grid(16, 16, gen, -1, 1);
  const double a = 0.7, b = -1.3;
  RealGrid z(16, 16);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = a * x.data[i] + b * y.data[i];
  const ComplexSpectrum fx = fft2(x), fy = fft2(y), fz = fft2(z);
  for (std::size_t i = 0; i < fz.size(); ++i) CHECK(std::abs(fz.data[i] - (a * fx.data[i] + b * fy.data[i])) < 1e-9);

  double energy = 0.0, spectral_energy = 0.0;
  for (double v : x.data) energy += v * v;
  for (const Complex& c : fx.data) spectral_energy += std::norm(c);
  CHECK(std::abs(energy - spectral_energy / 256.0) / energy < 1e-9);

  for (std::size_t u = 0; u < 16; ++u)
    for (std::size_t v = 0; v < 16; ++v)
      CHECK(std::abs(fx.at(u, v) - std::conj(fx.at((16 - u) % 16, (16 - v) % 16))) < 1e-9);
}

TEST_CASE("fftshift swaps quadrants and centres DC") {
  ComplexSpectrum s(2, 2);
  s.data = {Complex(1), Complex(2), Complex(3), Complex(4)};
  const ComplexSpectrum t = fftshift(s);
  CHECK(t.data == std::vector<Complex>{Complex(4), Complex(3), Complex(2), Complex(1)});

  ComplexSpectrum odd(6, 4);
  odd.at(0, 0) = Complex(1.0);
  const ComplexSpectrum shifted = fftshift(odd);
  CHECK(shifted.at(3, 2) == Complex(1.0));

  std::mt19937_64 gen(2);
  for (std::size_t h : {8u, 5u}) {
    const RealGrid g = oracle::random_grid(h, 7, gen);
    CHECK(ifftshift(fftshift(g)).data == g.data);
    CHECK(fftshift(ifftshift(g)).data == g.data);
  }
}

TEST_CASE("magnitude") {
  ComplexSpectrum s(1, 3);
  s.data = {Complex(3, 4), Complex(0, 0), Complex(-1, 2)};
  const RealGrid m = magnitude(s);
  CHECK(m.data[0] == 5.0);
  CHECK(m.data[1] == 0.0);
  ComplexSpectrum c = s;
  for (auto& v : c.data) v = std::conj(v);
  CHECK(magnitude(c).data == m.data);
}
