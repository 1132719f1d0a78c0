#pragma once

// Two-view spatial augmentation followed by per-view frequency masking.

#include <array>
#include <cstdint>
#include <vector>

#include "folk/filters.hpp"
#include "folk/imaging.hpp"

namespace folk::augment {

struct AugmentConfig {
  std::size_t crop_size = 32;
  double scale_min = 0.4;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  // Colour jitter and random grayscale on the spatial views. Off by
  // default: only crop and flip are used for pretraining.
  bool color_jitter = false;
  std::vector<double> mean{0.5, 0.5, 0.5};
  std::vector<double> stddev{0.25, 0.25, 0.25};
};

void validate(const AugmentConfig& cfg);

// Identifies the random substream of one sample in one epoch.
struct ViewKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t sample_index = 0;
};

struct ViewMeta {
  filters::FilterKind applied = filters::FilterKind::Com;
  std::optional<double> rate;
  bool flipped = false;
  std::array<double, 4> crop{};  // top, left, height, width
};

// u, v: spatially augmented and normalized (teacher inputs).
// u_masked, v_masked: the same views frequency-masked, then normalized
// (student inputs). mask_u / mask_v were built from u / v respectively.
struct ViewPair {
  imaging::Image u, v, u_masked, v_masked;
  filters::FrequencyMask mask_u, mask_v;
  ViewMeta meta_u, meta_v;
};

ViewPair make_views(const imaging::Image& image, const AugmentConfig& cfg, const filters::FilterSpec& spec,
                    const ViewKey& key);

// One augmented view. `view_index` selects the substream (0 = u, 1 = v).
struct SingleView {
  imaging::Image clean;   // un-normalized
  imaging::Image masked;  // un-normalized
  filters::FrequencyMask mask;
  ViewMeta meta;
};
SingleView make_single_view(const imaging::Image& image, const AugmentConfig& cfg, const filters::FilterSpec& spec,
                            const ViewKey& key, std::uint64_t view_index);

// Whole image resampled to crop size and normalized; evaluation input.
imaging::Image to_model_input(const imaging::Image& image, const AugmentConfig& cfg);

}  // namespace folk::augment
