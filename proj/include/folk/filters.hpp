#pragma once

// Frequency masks: the informed Com/RCom pair, constant low/high-pass
// filters, and the random baselines (Gabor, token, circle).
//
// A mask bit of 1 keeps the frequency, 0 masks it. All masks are stored in
// unshifted (DC at (0,0)) coordinates so they line up with fft2 output.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "folk/rng.hpp"
#include "folk/spectral.hpp"

namespace folk::filters {

struct FrequencyMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  FrequencyMask() = default;
  FrequencyMask(std::size_t h, std::size_t w, std::uint8_t fill) : height(h), width(w), bits(h * w, fill) {}

  std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * width + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return bits[r * width + c]; }
  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const;
  std::size_t masked_count() const { return size() - popcount(); }

  friend bool operator==(const FrequencyMask&, const FrequencyMask&) = default;
};

FrequencyMask complement(const FrequencyMask& m);
FrequencyMask ifftshift(const FrequencyMask& m);
FrequencyMask fftshift(const FrequencyMask& m);

enum class FilterKind { Com, RCom, LowPass, HighPass, Gabor, TokenMask, CircleMask };

std::string to_string(FilterKind k);
FilterKind parse_filter_kind(const std::string& name);

// Parameters of the random baselines. Sizes are in frequency bins on the
// shifted spectrum.
struct BaselineParams {
  int token_count = 32;
  int token_side = 4;
  int circle_count = 3;
  double circle_min_radius = 2.0;
  double circle_max_radius = 8.0;
  int gabor_count = 4;
  double gabor_sigma = 2.5;
  double gabor_level = 0.5;
  double gabor_min_freq = 1.0;
  double gabor_max_freq = 12.0;
};

struct FilterSpec {
  FilterKind kind = FilterKind::Com;
  std::vector<double> rate_set{0.005, 0.01, 0.05};
  double com_prob = 0.5;
  double radius = 4.0;
  // LowPass/HighPass kinds: probability of drawing the low-pass member.
  double low_prob = 0.5;
  BaselineParams baseline;
};

// Throws ConfigError on an invalid spec.
void validate(const FilterSpec& spec);

// Exact top-k selection. Com keeps round(rate*H*W) bins of highest
// magnitude; ties go to the lower row-major index. RCom is the complement.
std::pair<FrequencyMask, FrequencyMask> com_rcom_pair(const spectral::RealGrid& magnitude, double rate);

struct MaskDraw {
  FrequencyMask mask;
  FilterKind applied = FilterKind::Com;
  std::optional<double> rate;
};

// Joint informed sampling: rate ~ Uniform(rate_set), Com with probability
// com_prob else RCom. `gray` is the single-channel image the mask is built
// from.
MaskDraw sample_informed_filter(const spectral::RealGrid& gray, const FilterSpec& spec, Rng& rng);

FrequencyMask constant_filter(std::size_t height, std::size_t width, double radius, FilterKind kind);

FrequencyMask random_baseline_filter(std::size_t height, std::size_t width, FilterKind kind,
                                     const BaselineParams& params, Rng& rng);

// Dispatches on spec.kind. Com and RCom both mean joint informed sampling
// with spec.com_prob; LowPass and HighPass mean a constant filter whose
// side is drawn with spec.low_prob.
MaskDraw sample_filter(const spectral::RealGrid& gray, const FilterSpec& spec, Rng& rng);

// 0/1 mask as a real grid, optionally shifted for display.
spectral::RealGrid to_grid(const FrequencyMask& m, bool shifted = false);

}  // namespace folk::filters
