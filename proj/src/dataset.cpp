#include "folk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "folk/error.hpp"
#include "folk/rng.hpp"

namespace folk::data {
namespace fs = std::filesystem;

namespace {

// Texture families; each is symmetric under a horizontal flip so the
// pretraining augmentations cannot move an image into another class.
enum class Pattern { HStripes, VStripes, Checker, Rings, Dots };
constexpr int kPatterns = 5;

double pattern_value(Pattern p, double y, double x, double k, double phase, double cy, double cx) {
  switch (p) {
    case Pattern::HStripes: return std::sin(k * y + phase);
    case Pattern::VStripes: return std::sin(k * (x - cx) + phase);
    case Pattern::Checker: return std::sin(k * y + phase) * std::sin(k * (x - cx) + 0.5 * std::numbers::pi);
    case Pattern::Rings: return std::sin(k * std::hypot(y - cy, x - cx) + phase);
    case Pattern::Dots: {
      const double s = std::sin(k * y + phase) * std::sin(k * (x - cx) + 0.5 * std::numbers::pi);
      return 2.0 * s * s - 1.0;
    }
  }
  return 0.0;
}

// Class k: pattern k % 5 at a coarse (k < 5) or fine (k >= 5) frequency.
// Colours, phase, frequency jitter, shading and the pattern centre vary
// per image.
imaging::Image render(int label, int size, int channels, Rng& rng) {
  const auto pattern = static_cast<Pattern>(label % kPatterns);
  const double cycles = ((label / kPatterns) % 2 == 0 ? 2.5 : 7.0) * rng.uniform(0.9, 1.1);
  const double k = 2.0 * std::numbers::pi * cycles / size;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cy = rng.uniform(0.3, 0.7) * size;
  const double cx = size / 2.0;
  const double gy = rng.uniform(-1.0, 1.0);
  const double contrast = rng.uniform(0.25, 0.4);

  std::vector<double> base(channels);
  const double gray = rng.uniform(0.4, 0.6);
  for (int c = 0; c < channels; ++c) base[c] = gray + rng.uniform(-0.06, 0.06);
  const double radius = rng.uniform(0.3, 0.45) * size;
  const double bg = 0.2;

  imaging::Image img(channels, size, size);
  for (int r = 0; r < size; ++r) {
    for (int col = 0; col < size; ++col) {
      const double y = r + 0.5, x = col + 0.5;
      const bool inside = std::hypot(y - cy, x - cx) < radius;
      const double tex = pattern_value(pattern, y, x, k, phase, cy, cx);
      const double shade = 0.1 * gy * (y - size / 2.0) / size;
      for (int c = 0; c < channels; ++c) {
        const double v = inside ? base[c] + contrast * tex : bg;
        img.at(c, r, col) = std::clamp(v + shade + rng.normal(0.0, 0.02), 0.0, 1.0);
      }
    }
  }
  return img;
}

bool is_image_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

}  // namespace

Dataset synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.per_class < 0 || spec.size < 4 || (spec.channels != 1 && spec.channels != 3)) {
    throw InvalidArgument("synthetic: bad corpus spec");
  }
  Dataset ds;
  ds.num_classes = spec.num_classes;
  for (int k = 0; k < spec.num_classes; ++k) ds.class_names.push_back("class" + std::to_string(k));
  // Interleave classes so prefixes stay balanced.
  for (int i = 0; i < spec.per_class; ++i) {
    for (int k = 0; k < spec.num_classes; ++k) {
      Rng rng = Rng::substream(spec.seed, {0x5e7ull, spec.split, static_cast<std::uint64_t>(k),
                                           static_cast<std::uint64_t>(i)});
      ds.images.push_back(render(k, spec.size, spec.channels, rng));
      ds.labels.push_back(k);
    }
  }
  return ds;
}

Dataset load_class_folders(const fs::path& root) {
  if (!fs::is_directory(root)) throw InvalidArgument("not a directory: " + root.string());
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw InvalidArgument("no class folders under " + root.string());
  Dataset ds;
  ds.num_classes = static_cast<int>(classes.size());
  for (std::size_t k = 0; k < classes.size(); ++k) {
    ds.class_names.push_back(classes[k].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[k]))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ds.images.push_back(imaging::read_image(f));
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> load(const DataConfig& cfg, int channels, int image_size) {
  if (cfg.source == "synthetic") {
    SyntheticSpec s;
    s.num_classes = cfg.num_classes;
    s.size = image_size;
    s.channels = channels;
    s.seed = cfg.seed;
    s.per_class = cfg.train_per_class;
    Dataset train = synthetic(s);
    s.per_class = cfg.test_per_class;
    s.split = 1;
    return {std::move(train), synthetic(s)};
  }
  const fs::path root(cfg.source);
  Dataset train = load_class_folders(root / "train");
  Dataset test = fs::is_directory(root / "test") ? load_class_folders(root / "test") : Dataset{};
  if (!test.empty() && test.num_classes != train.num_classes) {
    throw InvalidArgument("train and test class counts differ under " + root.string());
  }
  test.num_classes = train.num_classes;
  for (const auto* ds : {&train, &test}) {
    for (const auto& img : ds->images) {
      if (static_cast<int>(img.channels) != channels) {
        throw InvalidArgument("image channel count " + std::to_string(img.channels) + " does not match model (" +
                              std::to_string(channels) + ")");
      }
    }
  }
  return {std::move(train), std::move(test)};
}

Dataset class_balanced_subset(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("subset fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
  Rng rng = Rng::substream(seed, {0x5ab5e7ull});
  std::vector<std::vector<std::size_t>> picked(ds.num_classes);
  for (int k = 0; k < ds.num_classes; ++k) {
    auto& idx = by_class[k];
    if (idx.empty()) throw InvalidArgument("subset: class " + std::to_string(k) + " has no images");
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * idx.size())));
    picked[k].assign(idx.begin(), idx.begin() + std::min(n, idx.size()));
    std::sort(picked[k].begin(), picked[k].end());
  }
  Dataset out;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  for (std::size_t j = 0;; ++j) {
    bool any = false;
    for (int k = 0; k < ds.num_classes; ++k) {
      if (j < picked[k].size()) {
        out.images.push_back(ds.images[picked[k][j]]);
        out.labels.push_back(k);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

Dataset take(const Dataset& ds, std::size_t n) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  n = std::min(n, ds.size());
  out.images.assign(ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(n));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

}  // namespace folk::data
