#include "folk/augment.hpp"

#include <algorithm>
#include <cmath>

#include "folk/error.hpp"

namespace folk::augment {
namespace {

std::array<double, 4> sample_crop(const imaging::Image& image, const AugmentConfig& cfg, Rng& rng) {
  const double H = static_cast<double>(image.height), W = static_cast<double>(image.width);
  const double area = H * W;
  const double log_lo = std::log(cfg.ratio_min), log_hi = std::log(cfg.ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(cfg.scale_min, cfg.scale_max);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const double w = std::round(std::sqrt(target * ratio));
    const double h = std::round(std::sqrt(target / ratio));
    if (w > 0 && h > 0 && w <= W && h <= H) {
      const double top = static_cast<double>(rng.index(static_cast<std::size_t>(H - h) + 1));
      const double left = static_cast<double>(rng.index(static_cast<std::size_t>(W - w) + 1));
      return {top, left, h, w};
    }
  }
  // Fallback: centred crop with the aspect ratio clamped into range.
  double w = W, h = H;
  const double in_ratio = W / H;
  if (in_ratio < cfg.ratio_min) {
    h = std::round(w / cfg.ratio_min);
  } else if (in_ratio > cfg.ratio_max) {
    w = std::round(h * cfg.ratio_max);
  }
  return {std::floor((H - h) / 2.0), std::floor((W - w) / 2.0), h, w};
}

imaging::Image jitter(const imaging::Image& image, Rng& rng) {
  imaging::Image out = image;
  if (rng.bernoulli(0.8)) {
    out = imaging::adjust_brightness(out, rng.uniform(0.6, 1.4));
    out = imaging::adjust_contrast(out, rng.uniform(0.6, 1.4));
  }
  if (out.channels == 3 && rng.bernoulli(0.2)) {
    const auto gray = imaging::to_grayscale(out);
    for (std::size_t c = 0; c < 3; ++c) out.set_channel(c, gray);
  }
  return out;
}

}  // namespace

void validate(const AugmentConfig& cfg) {
  if (cfg.crop_size == 0) throw ConfigError("augment.crop_size", "must be positive");
  if (!(cfg.scale_min > 0.0 && cfg.scale_min <= cfg.scale_max && cfg.scale_max <= 1.0)) {
    throw ConfigError("augment.scale_min", "scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(cfg.ratio_min > 0.0 && cfg.ratio_min <= cfg.ratio_max)) {
    throw ConfigError("augment.ratio_min", "ratio range must satisfy 0 < min <= max");
  }
  if (!(cfg.flip_prob >= 0.0 && cfg.flip_prob <= 1.0)) throw ConfigError("augment.flip_prob", "must lie in [0, 1]");
  if (cfg.mean.empty() || cfg.mean.size() != cfg.stddev.size()) {
    throw ConfigError("augment.mean", "mean and std must be non-empty and of equal length");
  }
  for (double s : cfg.stddev)
    if (!(s > 0.0)) throw ConfigError("augment.std", "every std must be positive");
}

SingleView make_single_view(const imaging::Image& image, const AugmentConfig& cfg, const filters::FilterSpec& spec,
                            const ViewKey& key, std::uint64_t view_index) {
  if (image.height < cfg.crop_size || image.width < cfg.crop_size) {
    throw InvalidArgument("make_views: source image " + std::to_string(image.height) + "x" +
                          std::to_string(image.width) + " is smaller than crop size " + std::to_string(cfg.crop_size));
  }
  Rng rng = Rng::substream(key.seed, {key.epoch, key.sample_index, view_index});
  SingleView view;
  view.meta.crop = sample_crop(image, cfg, rng);
  const auto& b = view.meta.crop;
  view.clean = imaging::resized_crop(image, b[0], b[1], b[2], b[3], cfg.crop_size, cfg.crop_size);
  view.meta.flipped = rng.bernoulli(cfg.flip_prob);
  if (view.meta.flipped) view.clean = imaging::hflip(view.clean);
  if (cfg.color_jitter) view.clean = jitter(view.clean, rng);

  auto draw = filters::sample_filter(imaging::to_grayscale(view.clean), spec, rng);
  view.meta.applied = draw.applied;
  view.meta.rate = draw.rate;
  view.masked = imaging::apply_frequency_mask(view.clean, draw.mask);
  view.mask = std::move(draw.mask);
  return view;
}

ViewPair make_views(const imaging::Image& image, const AugmentConfig& cfg, const filters::FilterSpec& spec,
                    const ViewKey& key) {
  auto a = make_single_view(image, cfg, spec, key, 0);
  auto b = make_single_view(image, cfg, spec, key, 1);
  ViewPair pair;
  pair.u = imaging::normalize(a.clean, cfg.mean, cfg.stddev);
  pair.v = imaging::normalize(b.clean, cfg.mean, cfg.stddev);
  pair.u_masked = imaging::normalize(a.masked, cfg.mean, cfg.stddev);
  pair.v_masked = imaging::normalize(b.masked, cfg.mean, cfg.stddev);
  pair.mask_u = std::move(a.mask);
  pair.mask_v = std::move(b.mask);
  pair.meta_u = a.meta;
  pair.meta_v = b.meta;
  return pair;
}

imaging::Image to_model_input(const imaging::Image& image, const AugmentConfig& cfg) {
  imaging::Image resized = image;
  if (image.height != cfg.crop_size || image.width != cfg.crop_size) {
    resized = imaging::resized_crop(image, 0.0, 0.0, static_cast<double>(image.height),
                                    static_cast<double>(image.width), cfg.crop_size, cfg.crop_size);
  }
  return imaging::normalize(resized, cfg.mean, cfg.stddev);
}

}  // namespace folk::augment
