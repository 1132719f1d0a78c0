#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "folk/error.hpp"
#include "folk/imaging.hpp"
#include "oracles.hpp"

using namespace folk;
using namespace folk::imaging;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& gen) {
  Image img(c, h, w);
  img.data = oracle::random_values(img.data.size(), gen, 0.0, 1.0);
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("grayscale weights") {
  Image white(3, 1, 1, 1.0);
  CHECK(to_grayscale(white).data[0] == doctest::Approx(1.0).epsilon(1e-15));
  Image red(3, 1, 1, 0.0);
  red.at(0, 0, 0) = 1.0;
  CHECK(to_grayscale(red).data[0] == doctest::Approx(0.299));
  std::mt19937_64 gen(1);
  const Image gray = random_image(1, 4, 4, gen);
  CHECK(to_grayscale(gray).data == gray.data);
  CHECK_THROWS_AS(to_grayscale(Image(2, 4, 4)), InvalidArgument);
}

TEST_CASE("frequency masking against a per-bin manual construction") {
  std::mt19937_64 gen(2);
  const Image img = random_image(3, 8, 8, gen);
  filters::FrequencyMask mask(8, 8, 1);
  std::bernoulli_distribution keep(0.6);
  for (auto& b : mask.bits) b = keep(gen);

  const Image out = apply_frequency_mask(img, mask);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<oracle::Complex> x(img.data.begin() + c * 64, img.data.begin() + (c + 1) * 64);
    auto spec = oracle::naive_dft2(x, 8, 8);
    for (std::size_t i = 0; i < 64; ++i)
      if (!mask.bits[i]) spec[i] = 0.0;
    const auto back = oracle::naive_dft2(spec, 8, 8, true);
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(out.data[c * 64 + i] - back[i].real()) < 1e-9);
  }
}

TEST_CASE("identity, zero and idempotent masks") {
  std::mt19937_64 gen(3);
  const Image img = random_image(3, 16, 16, gen);
  double residual = 1.0;
  CHECK(max_abs_diff(apply_frequency_mask(img, filters::FrequencyMask(16, 16, 1), &residual), img) < 1e-6);
  CHECK(residual < 1e-5);
  for (double v : apply_frequency_mask(img, filters::FrequencyMask(16, 16, 0)).data) CHECK(std::abs(v) < 1e-12);

  const auto lo = filters::constant_filter(16, 16, 3.0, filters::FilterKind::LowPass);
  const Image once = apply_frequency_mask(img, lo);
  CHECK(max_abs_diff(apply_frequency_mask(once, lo), once) < 1e-6);
  CHECK_THROWS_AS(apply_frequency_mask(img, filters::FrequencyMask(8, 8, 1)), ShapeError);
}

TEST_CASE("masked images may leave the unit range") {
  Image step(1, 16, 16, 0.0);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 8; c < 16; ++c) step.at(0, r, c) = 1.0;
  const Image out = apply_frequency_mask(step, filters::constant_filter(16, 16, 3.0, filters::FilterKind::LowPass));
  const auto [lo, hi] = std::minmax_element(out.data.begin(), out.data.end());
  CHECK((*lo < 0.0 || *hi > 1.0));
}

TEST_CASE("corruptions") {
  std::mt19937_64 gen(4);
  const Image img = random_image(3, 16, 16, gen);
  CorruptionParams p;
  p.salt_pepper_prob = 0.0;
  Rng rng(1);
  CHECK(corrupt(img, Corruption::SaltPepper, p, rng) == img);
  CHECK(corrupt(img, Corruption::None, p, rng) == img);

  CHECK(adjust_brightness(Image(1, 2, 2, 0.5), 1.5).data[0] == doctest::Approx(0.75));
  CHECK(adjust_brightness(Image(1, 2, 2, 0.9), 1.5).data[0] == 1.0);

  // Sample std of the Gaussian deltas on mid-gray, where clipping never bites.
  Image mid(1, 128, 128, 0.5);
  Rng g(9);
  const Image noisy = corrupt(mid, Corruption::Gaussian, CorruptionParams{}, g);
  double s2 = 0.0;
  for (double v : noisy.data) s2 += (v - 0.5) * (v - 0.5);
  const double sd = std::sqrt(s2 / static_cast<double>(noisy.data.size()));
  CHECK(std::abs(sd - 50.0 / 255.0) < 0.1 * 50.0 / 255.0);

  CorruptionParams sp;
  sp.salt_pepper_prob = 1.0;
  Rng s(5);
  for (double v : corrupt(img, Corruption::SaltPepper, sp, s).data) CHECK((v == 0.0 || v == 1.0));

  Rng a(7), b(7);
  for (Corruption c : {Corruption::SaltPepper, Corruption::Gaussian, Corruption::Brightness, Corruption::Contrast}) {
    const Image x = corrupt(img, c, CorruptionParams{}, a);
    CHECK(x == corrupt(img, c, CorruptionParams{}, b));
    for (double v : x.data) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(parse_corruption(to_string(c)) == c);
  }
}

TEST_CASE("contrast blends toward the mean gray level") {
  Image img(1, 1, 2);
  img.data = {0.2, 0.6};
  const Image half = adjust_contrast(img, 0.5);
  CHECK(half.data[0] == doctest::Approx(0.3));
  CHECK(half.data[1] == doctest::Approx(0.5));
  CHECK(adjust_contrast(img, 1.0).data == img.data);
}

TEST_CASE("resized crop, flip and normalize") {
  std::mt19937_64 gen(6);
  const Image img = random_image(3, 16, 16, gen);
  CHECK(max_abs_diff(resized_crop(img, 0, 0, 16, 16, 16, 16), img) < 1e-12);
  const Image constant(3, 16, 16, 0.4);
  for (double v : resized_crop(constant, 2.3, 1.7, 9.5, 11.0, 32, 32).data) CHECK(v == doctest::Approx(0.4));

  const Image flipped = hflip(img);
  CHECK(flipped.at(1, 3, 0) == img.at(1, 3, 15));
  CHECK(hflip(flipped) == img);

  const std::vector<double> mean{0.5, 0.5, 0.5}, sd{0.25, 0.25, 0.25};
  const Image n = normalize(constant, mean, sd);
  CHECK(n.data[0] == doctest::Approx(-0.4));
  CHECK_THROWS_AS(normalize(constant, std::vector<double>{0.5}, std::vector<double>{0.25}), InvalidArgument);
}

TEST_CASE("netpbm round trip within quantization") {
  std::mt19937_64 gen(7);
  for (std::size_t c : {1u, 3u}) {
    const Image img = random_image(c, 5, 7, gen);
    const Image back = decode_netpbm(encode_netpbm(img));
    CHECK(back.channels == c);
    CHECK(back.height == 5);
    CHECK(back.width == 7);
    CHECK(max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-12);
  }
  const auto dir = std::filesystem::temp_directory_path() / "folk_unit_netpbm";
  std::filesystem::create_directories(dir);
  const Image img = random_image(3, 4, 4, gen);
  write_image(img, dir / "x.ppm");
  CHECK(max_abs_diff(read_image(dir / "x.ppm"), img) <= 1.0 / 255.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("netpbm header parsing") {
  const Image p5 = decode_netpbm(bytes_of(std::string("P5\n# comment\n2 2\n255\n") + std::string("\x00\x40\x80\xff", 4)));
  CHECK(p5.channels == 1);
  CHECK(p5.height == 2);
  CHECK(p5.width == 2);
  CHECK(p5.data[3] == 1.0);
  CHECK(p5.data[2] == doctest::Approx(128.0 / 255.0));

  const Image low = decode_netpbm(bytes_of(std::string("P5 1 1 15\n") + std::string("\x0f", 1)));
  CHECK(low.data[0] == 1.0);
}

TEST_CASE("netpbm decode errors") {
  try {
    decode_netpbm(bytes_of(std::string("P6\n2 2\n255\n") + std::string(5, '\x10')));
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("truncated payload at byte offset") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_netpbm(bytes_of("P3\n1 1\n255\n0 0 0")), DecodeError);
  CHECK_THROWS_AS(decode_netpbm(bytes_of("P5\n1 1\n65535\n\x00\x00")), DecodeError);
  CHECK_THROWS_AS(decode_netpbm(bytes_of("P5\nx 1\n255\n\x00")), DecodeError);
  CHECK_THROWS_AS(decode_netpbm(bytes_of("P5\n0 1\n255\n")), DecodeError);
  CHECK_THROWS_AS(read_image("/nonexistent/folk.ppm"), DecodeError);
}
