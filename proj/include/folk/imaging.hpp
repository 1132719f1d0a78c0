#pragma once

// Images, grayscale conversion, per-channel frequency masking, corruptions
// and Netpbm (P5/P6) codecs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "folk/filters.hpp"
#include "folk/rng.hpp"
#include "folk/spectral.hpp"

namespace folk::imaging {

// C x H x W, channel-major. Decoded images hold intensities in [0, 1];
// masked or normalized images may leave that range.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t r, std::size_t col) { return data[(c * height + r) * width + col]; }
  double at(std::size_t c, std::size_t r, std::size_t col) const { return data[(c * height + r) * width + col]; }
  std::size_t plane_size() const { return height * width; }

  spectral::RealGrid channel(std::size_t c) const;
  void set_channel(std::size_t c, const spectral::RealGrid& g);

  friend bool operator==(const Image&, const Image&) = default;
};

// BT.601 luma for RGB; single channel passes through.
spectral::RealGrid to_grayscale(const Image& image);

// Per-channel masking: ifft2(fft2(x_c) * M). The result is not clipped.
// `max_imag_residual`, when given, receives the largest discarded imaginary
// part over all channels.
Image apply_frequency_mask(const Image& image, const filters::FrequencyMask& mask,
                           double* max_imag_residual = nullptr);

enum class Corruption { None, SaltPepper, Gaussian, Brightness, Contrast };

std::string to_string(Corruption c);
Corruption parse_corruption(const std::string& name);

struct CorruptionParams {
  double salt_pepper_prob = 0.05;
  double gaussian_sigma = 50.0 / 255.0;
  // Factors are drawn uniformly from [1 - range, 1 + range].
  double brightness_range = 0.5;
  double contrast_range = 0.5;
};

Image corrupt(const Image& image, Corruption kind, const CorruptionParams& params, Rng& rng);
Image adjust_brightness(const Image& image, double factor);
Image adjust_contrast(const Image& image, double factor);

// Crops the source rectangle (top, left, h, w) in pixel units and resamples
// it to out_h x out_w with Keys bicubic interpolation (a = -0.5).
Image resized_crop(const Image& image, double top, double left, double crop_h, double crop_w, std::size_t out_h,
                   std::size_t out_w);
Image hflip(const Image& image);

// Per-channel (x - mean) / std.
Image normalize(const Image& image, std::span<const double> mean, std::span<const double> stddev);

// Netpbm binary codecs: P5 (gray) and P6 (RGB), maxval 1..255.
Image decode_netpbm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_netpbm(const Image& image);
Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

// Single-channel grid written as P5 after mapping [lo, hi] to [0, 255].
void write_grid_pgm(const spectral::RealGrid& grid, const std::filesystem::path& path, double lo, double hi);

}  // namespace folk::imaging
