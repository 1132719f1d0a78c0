#include "folk/imaging.hpp"

#include <algorithm>
#include <cmath>

#include "folk/error.hpp"

namespace folk::imaging {
namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Keys cubic convolution kernel.
double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

}  // namespace

spectral::RealGrid Image::channel(std::size_t c) const {
  spectral::RealGrid g(height, width);
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(c * plane_size()), plane_size(), g.data.begin());
  return g;
}

void Image::set_channel(std::size_t c, const spectral::RealGrid& g) {
  std::copy(g.data.begin(), g.data.end(), data.begin() + static_cast<std::ptrdiff_t>(c * plane_size()));
}

spectral::RealGrid to_grayscale(const Image& image) {
  if (image.channels == 1) return image.channel(0);
  if (image.channels != 3) {
    throw InvalidArgument("to_grayscale: unsupported channel count " + std::to_string(image.channels));
  }
  spectral::RealGrid g(image.height, image.width);
  const std::size_t n = image.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    g.data[i] = 0.299 * image.data[i] + 0.587 * image.data[n + i] + 0.114 * image.data[2 * n + i];
  }
  return g;
}

Image apply_frequency_mask(const Image& image, const filters::FrequencyMask& mask, double* max_imag_residual) {
  if (mask.height != image.height || mask.width != image.width) {
    throw ShapeError("apply_frequency_mask: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not match image " + std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  Image out(image.channels, image.height, image.width);
  double residual = 0.0;
  for (std::size_t c = 0; c < image.channels; ++c) {
    auto spectrum = spectral::fft2(image.channel(c));
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
      if (mask.bits[i] == 0) spectrum.data[i] = 0.0;
    }
    auto inv = spectral::ifft2(spectrum);
    residual = std::max(residual, inv.max_imag_residual);
    out.set_channel(c, inv.grid);
  }
  if (max_imag_residual) *max_imag_residual = residual;
  return out;
}

std::string to_string(Corruption c) {
  switch (c) {
    case Corruption::None: return "none";
    case Corruption::SaltPepper: return "salt_pepper";
    case Corruption::Gaussian: return "gaussian";
    case Corruption::Brightness: return "brightness";
    case Corruption::Contrast: return "contrast";
  }
  return "unknown";
}

Corruption parse_corruption(const std::string& name) {
  for (auto c : {Corruption::None, Corruption::SaltPepper, Corruption::Gaussian, Corruption::Brightness,
                 Corruption::Contrast}) {
    if (to_string(c) == name) return c;
  }
  throw InvalidArgument("unknown corruption '" + name + "'");
}

Image adjust_brightness(const Image& image, double factor) {
  Image out = image;
  for (auto& v : out.data) v = clamp01(v * factor);
  return out;
}

Image adjust_contrast(const Image& image, double factor) {
  // Blend towards the mean gray level, as common image libraries do.
  const auto gray = to_grayscale(image);
  double mean = 0.0;
  for (double v : gray.data) mean += v;
  mean /= static_cast<double>(gray.size());
  Image out = image;
  for (auto& v : out.data) v = clamp01(mean + factor * (v - mean));
  return out;
}

Image corrupt(const Image& image, Corruption kind, const CorruptionParams& params, Rng& rng) {
  switch (kind) {
    case Corruption::None:
      return image;
    case Corruption::SaltPepper: {
      Image out = image;
      const std::size_t n = image.plane_size();
      for (std::size_t i = 0; i < n; ++i) {
        if (!rng.bernoulli(params.salt_pepper_prob)) continue;
        const double value = rng.bernoulli(0.5) ? 1.0 : 0.0;
        for (std::size_t c = 0; c < image.channels; ++c) out.data[c * n + i] = value;
      }
      return out;
    }
    case Corruption::Gaussian: {
      Image out = image;
      for (auto& v : out.data) v = clamp01(v + rng.normal(0.0, params.gaussian_sigma));
      return out;
    }
    case Corruption::Brightness:
      return adjust_brightness(image, rng.uniform(1.0 - params.brightness_range, 1.0 + params.brightness_range));
    case Corruption::Contrast:
      return adjust_contrast(image, rng.uniform(1.0 - params.contrast_range, 1.0 + params.contrast_range));
  }
  return image;
}

Image resized_crop(const Image& image, double top, double left, double crop_h, double crop_w, std::size_t out_h,
                   std::size_t out_w) {
  Image out(image.channels, out_h, out_w);
  const double sy = crop_h / static_cast<double>(out_h);
  const double sx = crop_w / static_cast<double>(out_w);
  const auto max_r = static_cast<long>(image.height) - 1;
  const auto max_c = static_cast<long>(image.width) - 1;

  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = top + (static_cast<double>(r) + 0.5) * sy - 0.5;
    const auto y0 = static_cast<long>(std::floor(y));
    double wy[4];
    for (int k = 0; k < 4; ++k) wy[k] = cubic_weight(y - static_cast<double>(y0 - 1 + k));
    for (std::size_t col = 0; col < out_w; ++col) {
      const double x = left + (static_cast<double>(col) + 0.5) * sx - 0.5;
      const auto x0 = static_cast<long>(std::floor(x));
      double wx[4];
      for (int k = 0; k < 4; ++k) wx[k] = cubic_weight(x - static_cast<double>(x0 - 1 + k));
      for (std::size_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) {
          const auto rr = static_cast<std::size_t>(std::clamp(y0 - 1 + i, 0L, max_r));
          double row = 0.0;
          for (int j = 0; j < 4; ++j) {
            const auto cc = static_cast<std::size_t>(std::clamp(x0 - 1 + j, 0L, max_c));
            row += wx[j] * image.at(c, rr, cc);
          }
          acc += wy[i] * row;
        }
        out.at(c, r, col) = clamp01(acc);
      }
    }
  }
  return out;
}

Image hflip(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t r = 0; r < image.height; ++r)
      for (std::size_t col = 0; col < image.width; ++col) out.at(c, r, col) = image.at(c, r, image.width - 1 - col);
  return out;
}

Image normalize(const Image& image, std::span<const double> mean, std::span<const double> stddev) {
  if (mean.size() < image.channels || stddev.size() < image.channels) {
    throw InvalidArgument("normalize: need one mean/std per channel");
  }
  Image out = image;
  const std::size_t n = image.plane_size();
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t i = 0; i < n; ++i) out.data[c * n + i] = (image.data[c * n + i] - mean[c]) / stddev[c];
  return out;
}

}  // namespace folk::imaging
