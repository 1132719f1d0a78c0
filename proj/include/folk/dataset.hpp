#pragma once

// Labeled image sets: the seeded synthetic corpus and class-folder loading.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "folk/config.hpp"
#include "folk/imaging.hpp"

namespace folk::data {

struct Dataset {
  std::vector<imaging::Image> images;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
};

// Textured discs on a flat 0.2 background: class k fills the disc with one
// of five flip-symmetric patterns (horizontal stripes, vertical stripes,
// checker, rings, dots) at a coarse or fine frequency. Disc position and
// radius, colour, contrast, phase and shading vary per image.
struct SyntheticSpec {
  int num_classes = 10;
  int per_class = 48;
  int size = 32;
  int channels = 3;
  std::uint64_t seed = 7;
  std::uint64_t split = 0;  // 0 train, 1 test: disjoint substreams
};

Dataset synthetic(const SyntheticSpec& spec);

// `root/<class>/*.ppm|*.pgm`, classes in lexicographic order.
Dataset load_class_folders(const std::filesystem::path& root);

// Train and test sets for a DataConfig: synthetic, or a directory holding
// train/ and test/ class-folder trees.
std::pair<Dataset, Dataset> load(const DataConfig& cfg, int channels, int image_size);

// Seeded class-balanced subset: round(fraction * n_c) images of every
// class, at least one each. Throws InvalidArgument when a class is empty.
Dataset class_balanced_subset(const Dataset& ds, double fraction, std::uint64_t seed);

// The first n images. Synthetic sets interleave classes, so prefixes stay balanced.
Dataset take(const Dataset& ds, std::size_t n);

}  // namespace folk::data
