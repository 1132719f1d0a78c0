#include "folk/filters.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "folk/error.hpp"

namespace folk::filters {
namespace {

template <typename Fn>
FrequencyMask shifted_paint(std::size_t h, std::size_t w, std::uint8_t fill, Fn&& paint) {
  FrequencyMask centered(h, w, fill);
  paint(centered);
  return ifftshift(centered);
}

FrequencyMask shift_mask(const FrequencyMask& m, std::size_t dr, std::size_t dc) {
  FrequencyMask out = m;
  for (std::size_t r = 0; r < m.height; ++r) {
    for (std::size_t c = 0; c < m.width; ++c) {
      out.at((r + dr) % m.height, (c + dc) % m.width) = m.at(r, c);
    }
  }
  return out;
}

void check_rate(double rate) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw InvalidArgument("invalid rate " + std::to_string(rate) + ": must lie in (0, 1)");
  }
}

}  // namespace

std::size_t FrequencyMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

FrequencyMask complement(const FrequencyMask& m) {
  FrequencyMask out = m;
  for (auto& b : out.bits) b = static_cast<std::uint8_t>(1 - b);
  return out;
}

FrequencyMask fftshift(const FrequencyMask& m) { return shift_mask(m, m.height / 2, m.width / 2); }
FrequencyMask ifftshift(const FrequencyMask& m) {
  return shift_mask(m, m.height - m.height / 2, m.width - m.width / 2);
}

std::string to_string(FilterKind k) {
  switch (k) {
    case FilterKind::Com: return "com";
    case FilterKind::RCom: return "rcom";
    case FilterKind::LowPass: return "low";
    case FilterKind::HighPass: return "high";
    case FilterKind::Gabor: return "gabor";
    case FilterKind::TokenMask: return "token";
    case FilterKind::CircleMask: return "circle";
  }
  return "unknown";
}

FilterKind parse_filter_kind(const std::string& name) {
  for (auto k : {FilterKind::Com, FilterKind::RCom, FilterKind::LowPass, FilterKind::HighPass, FilterKind::Gabor,
                 FilterKind::TokenMask, FilterKind::CircleMask}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown filter kind '" + name + "' (expected com|rcom|low|high|gabor|token|circle)");
}

void validate(const FilterSpec& spec) {
  if (spec.rate_set.empty()) throw ConfigError("filter.rate_set", "must not be empty");
  for (double r : spec.rate_set) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("filter.rate_set", "every rate must lie in (0, 1)");
  }
  if (!(spec.com_prob >= 0.0 && spec.com_prob <= 1.0)) throw ConfigError("filter.com_prob", "must lie in [0, 1]");
  if (!(spec.low_prob >= 0.0 && spec.low_prob <= 1.0)) throw ConfigError("filter.low_prob", "must lie in [0, 1]");
  if (!(spec.radius > 0.0)) throw ConfigError("filter.radius", "must be positive");
}

std::pair<FrequencyMask, FrequencyMask> com_rcom_pair(const spectral::RealGrid& magnitude, double rate) {
  check_rate(rate);
  const std::size_t n = magnitude.size();
  const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Strict total order: larger magnitude first, then lower index.
  auto before = [&magnitude](std::size_t a, std::size_t b) {
    const double ma = magnitude.data[a], mb = magnitude.data[b];
    if (ma != mb) return ma > mb;
    return a < b;
  };
  if (k > 0 && k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), before);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), before);

  FrequencyMask com(magnitude.height, magnitude.width, 0);
  for (std::size_t i = 0; i < k; ++i) com.bits[order[i]] = 1;
  return {com, complement(com)};
}

MaskDraw sample_informed_filter(const spectral::RealGrid& gray, const FilterSpec& spec, Rng& rng) {
  if (spec.rate_set.empty()) throw ConfigError("filter.rate_set", "must not be empty");
  const double rate = spec.rate_set[rng.index(spec.rate_set.size())];
  const bool use_com = rng.bernoulli(spec.com_prob);
  const auto mag = spectral::magnitude(spectral::fft2(gray));
  auto [com, rcom] = com_rcom_pair(mag, rate);
  MaskDraw draw;
  draw.rate = rate;
  draw.applied = use_com ? FilterKind::Com : FilterKind::RCom;
  draw.mask = use_com ? std::move(com) : std::move(rcom);
  return draw;
}

FrequencyMask constant_filter(std::size_t height, std::size_t width, double radius, FilterKind kind) {
  if (!(radius > 0.0)) throw InvalidArgument("constant_filter: radius must be positive");
  if (kind != FilterKind::LowPass && kind != FilterKind::HighPass) {
    throw InvalidArgument("constant_filter: kind must be low or high");
  }
  const double cr = static_cast<double>(height / 2), cc = static_cast<double>(width / 2);
  const std::uint8_t inside = kind == FilterKind::LowPass ? 1 : 0;
  return shifted_paint(height, width, static_cast<std::uint8_t>(1 - inside), [&](FrequencyMask& m) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        if (std::hypot(static_cast<double>(r) - cr, static_cast<double>(c) - cc) <= radius) m.at(r, c) = inside;
      }
    }
  });
}

FrequencyMask random_baseline_filter(std::size_t height, std::size_t width, FilterKind kind,
                                     const BaselineParams& p, Rng& rng) {
  const double hd = static_cast<double>(height), wd = static_cast<double>(width);
  const double cr = static_cast<double>(height / 2), cc = static_cast<double>(width / 2);
  switch (kind) {
    case FilterKind::TokenMask: {
      if (p.token_count < 0) throw ConfigError("filter.baseline.token_count", "must be non-negative");
      if (p.token_count > 0 &&
          (p.token_side < 1 || static_cast<std::size_t>(p.token_side) > std::min(height, width))) {
        throw ConfigError("filter.baseline.token_side", "square side must lie in [1, min(H, W)]");
      }
      const auto side = static_cast<std::size_t>(std::max(p.token_side, 1));
      return shifted_paint(height, width, 1, [&](FrequencyMask& m) {
        for (int i = 0; i < p.token_count; ++i) {
          const std::size_t r0 = rng.index(height - side + 1);
          const std::size_t c0 = rng.index(width - side + 1);
          for (std::size_t r = r0; r < r0 + side; ++r)
            for (std::size_t c = c0; c < c0 + side; ++c) m.at(r, c) = 0;
        }
      });
    }
    case FilterKind::CircleMask: {
      if (p.circle_count < 0) throw ConfigError("filter.baseline.circle_count", "must be non-negative");
      if (p.circle_min_radius < 0.0 || p.circle_max_radius < p.circle_min_radius ||
          p.circle_max_radius > std::hypot(hd, wd)) {
        throw ConfigError("filter.baseline.circle_max_radius",
                          "radii must satisfy 0 <= min <= max <= grid diagonal");
      }
      return shifted_paint(height, width, 1, [&](FrequencyMask& m) {
        const double max_offset = std::min(hd, wd) / 2.0;
        for (int i = 0; i < p.circle_count; ++i) {
          const double radius = rng.uniform(p.circle_min_radius, p.circle_max_radius);
          const double dist = rng.uniform(0.0, max_offset);
          const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
          const double r0 = cr + dist * std::sin(theta), c0 = cc + dist * std::cos(theta);
          for (std::size_t r = 0; r < height; ++r)
            for (std::size_t c = 0; c < width; ++c)
              if (std::hypot(static_cast<double>(r) - r0, static_cast<double>(c) - c0) <= radius) m.at(r, c) = 0;
        }
      });
    }
    case FilterKind::Gabor: {
      if (p.gabor_count < 0) throw ConfigError("filter.baseline.gabor_count", "must be non-negative");
      if (!(p.gabor_sigma > 0.0)) throw ConfigError("filter.baseline.gabor_sigma", "must be positive");
      if (p.gabor_max_freq < p.gabor_min_freq || p.gabor_max_freq > std::hypot(hd, wd)) {
        throw ConfigError("filter.baseline.gabor_max_freq", "frequency range must fit inside the grid");
      }
      // Sum of Gaussian envelopes at +/- the centre frequency (a real Gabor
      // kernel's transform); the passband above `gabor_level` is masked.
      return shifted_paint(height, width, 1, [&](FrequencyMask& m) {
        std::vector<double> response(height * width, 0.0);
        const double two_s2 = 2.0 * p.gabor_sigma * p.gabor_sigma;
        for (int i = 0; i < p.gabor_count; ++i) {
          const double f0 = rng.uniform(p.gabor_min_freq, p.gabor_max_freq);
          const double theta = rng.uniform(0.0, std::numbers::pi);
          const double fr = f0 * std::sin(theta), fc = f0 * std::cos(theta);
          for (std::size_t r = 0; r < height; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
              const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
              const double a = ((dr - fr) * (dr - fr) + (dc - fc) * (dc - fc)) / two_s2;
              const double b = ((dr + fr) * (dr + fr) + (dc + fc) * (dc + fc)) / two_s2;
              response[r * width + c] = std::max(response[r * width + c], std::exp(-a) + std::exp(-b));
            }
          }
        }
        for (std::size_t i = 0; i < response.size(); ++i)
          if (response[i] >= p.gabor_level) m.bits[i] = 0;
      });
    }
    default:
      throw InvalidArgument("random_baseline_filter: kind must be gabor, token or circle");
  }
}

MaskDraw sample_filter(const spectral::RealGrid& gray, const FilterSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case FilterKind::Com:
    case FilterKind::RCom:
      return sample_informed_filter(gray, spec, rng);
    case FilterKind::LowPass:
    case FilterKind::HighPass: {
      const auto side = rng.bernoulli(spec.low_prob) ? FilterKind::LowPass : FilterKind::HighPass;
      return MaskDraw{constant_filter(gray.height, gray.width, spec.radius, side), side, std::nullopt};
    }
    default:
      return MaskDraw{random_baseline_filter(gray.height, gray.width, spec.kind, spec.baseline, rng), spec.kind,
                      std::nullopt};
  }
}

spectral::RealGrid to_grid(const FrequencyMask& m, bool shifted) {
  const FrequencyMask src = shifted ? fftshift(m) : m;
  spectral::RealGrid g(m.height, m.width);
  for (std::size_t i = 0; i < src.bits.size(); ++i) g.data[i] = src.bits[i];
  return g;
}

}  // namespace folk::filters
