#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "folk/augment.hpp"
#include "folk/dataset.hpp"
#include "folk/error.hpp"
#include "folk/rng.hpp"
#include "oracles.hpp"

using namespace folk;
using namespace folk::augment;

namespace {

imaging::Image random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  imaging::Image img(c, h, w);
  img.data = oracle::random_values(img.data.size(), gen, 0.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("rng streams are reproducible and keyed") {
  Rng a = Rng::substream(5, {1, 2, 3}), b = Rng::substream(5, {1, 2, 3}), c = Rng::substream(5, {1, 2, 4});
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);

  Rng r(3);
  double mean = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const double z = r.normal();
    mean += z;
    sq += z * z;
  }
  CHECK(std::abs(mean / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
  std::set<std::size_t> seen;
  for (int i = 0; i < 200; ++i) {
    const auto k = r.index(7);
    CHECK(k < 7);
    seen.insert(k);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("degenerate augmentation leaves every view equal to the resized input") {
  AugmentConfig cfg;
  cfg.crop_size = 16;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.ratio_min = cfg.ratio_max = 1.0;
  cfg.flip_prob = 0.0;
  filters::FilterSpec spec;
  spec.kind = filters::FilterKind::LowPass;
  spec.low_prob = 1.0;
  spec.radius = 1e9;
  const auto img = random_image(3, 16, 16, 1);
  const ViewPair p = make_views(img, cfg, spec, {3, 0, 0});
  const auto expected = imaging::normalize(img, cfg.mean, cfg.stddev);
  for (const auto* view : {&p.u, &p.v, &p.u_masked, &p.v_masked}) {
    for (std::size_t i = 0; i < expected.data.size(); ++i) CHECK(view->data[i] == doctest::Approx(expected.data[i]).epsilon(1e-9));
  }
  CHECK(p.mask_u.popcount() == 256);
}

TEST_CASE("views are deterministic per key, independent per view and masks follow their own view") {
  AugmentConfig cfg;
  filters::FilterSpec spec;
  const auto img = random_image(3, 40, 40, 2);
  const ViewPair a = make_views(img, cfg, spec, {9, 1, 4});
  const ViewPair b = make_views(img, cfg, spec, {9, 1, 4});
  CHECK(a.u == b.u);
  CHECK(a.v_masked == b.v_masked);
  CHECK(a.mask_u == b.mask_u);
  CHECK(a.meta_u.crop != a.meta_v.crop);
  const ViewPair other_epoch = make_views(img, cfg, spec, {9, 2, 4});
  CHECK(other_epoch.u != a.u);

  // The student view is the teacher view masked with mask_u, then normalized.
  const auto single = make_single_view(img, cfg, spec, {9, 1, 4}, 0);
  CHECK(single.mask == a.mask_u);
  const auto expect = imaging::normalize(imaging::apply_frequency_mask(single.clean, a.mask_u), cfg.mean, cfg.stddev);
  for (std::size_t i = 0; i < expect.data.size(); ++i) CHECK(a.u_masked.data[i] == doctest::Approx(expect.data[i]));
  // Informed masks are built from the view's own spectrum.
  if (a.meta_u.applied == filters::FilterKind::Com || a.meta_u.applied == filters::FilterKind::RCom) {
    const auto pair =
        filters::com_rcom_pair(spectral::magnitude(spectral::fft2(imaging::to_grayscale(single.clean))), *a.meta_u.rate);
    CHECK(a.mask_u == (a.meta_u.applied == filters::FilterKind::Com ? pair.first : pair.second));
  }
}

TEST_CASE("filter metadata records the drawn rate and branch") {
  AugmentConfig cfg;
  filters::FilterSpec spec;
  const auto img = random_image(3, 32, 32, 3);
  std::map<filters::FilterKind, int> branches;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const ViewPair p = make_views(img, cfg, spec, {1, 0, i});
    for (const auto* meta : {&p.meta_u, &p.meta_v}) {
      REQUIRE(meta->rate.has_value());
      CHECK((*meta->rate == 0.005 || *meta->rate == 0.01 || *meta->rate == 0.05));
      ++branches[meta->applied];
    }
    const double kept = static_cast<double>(p.mask_u.popcount());
    const double k = std::round(*p.meta_u.rate * 1024);
    CHECK((kept == k || kept == 1024 - k));
  }
  CHECK(branches[filters::FilterKind::Com] > 10);
  CHECK(branches[filters::FilterKind::RCom] > 10);
}

TEST_CASE("crops respect the configured scale range") {
  AugmentConfig cfg;
  filters::FilterSpec spec;
  const auto img = random_image(3, 32, 32, 4);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto v = make_single_view(img, cfg, spec, {2, 0, i}, 0);
    const double area = v.meta.crop[2] * v.meta.crop[3] / 1024.0;
    CHECK(area >= 0.4 - 0.05);
    CHECK(area <= 1.0);
    CHECK(v.meta.crop[0] + v.meta.crop[2] <= 32);
    CHECK(v.meta.crop[1] + v.meta.crop[3] <= 32);
  }
}

TEST_CASE("too small sources and bad configs are rejected") {
  AugmentConfig cfg;
  filters::FilterSpec spec;
  CHECK_THROWS_AS(make_views(random_image(3, 16, 16, 5), cfg, spec, {}), InvalidArgument);
  AugmentConfig bad;
  bad.scale_min = 0.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = AugmentConfig{};
  bad.stddev = {0.25, 0.0, 0.25};
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("synthetic corpus") {
  data::SyntheticSpec spec;
  spec.per_class = 4;
  const auto a = data::synthetic(spec);
  const auto b = data::synthetic(spec);
  CHECK(a.size() == 40);
  CHECK(a.images == b.images);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.labels[i] == static_cast<int>(i % 10));
  for (const auto& img : a.images) {
    CHECK(img.channels == 3);
    CHECK(img.height == 32);
    for (double v : img.data) CHECK((v >= 0.0 && v <= 1.0));
  }
  spec.split = 1;
  CHECK(data::synthetic(spec).images != a.images);

  // Every class is symmetric under a horizontal flip up to its random phase:
  // the flipped image's spectrum magnitude matches the original's.
  for (int k = 0; k < 10; ++k) {
    const auto g = imaging::to_grayscale(a.images[k]);
    const auto gf = imaging::to_grayscale(imaging::hflip(a.images[k]));
    const auto ma = spectral::magnitude(spectral::fft2(g)), mb = spectral::magnitude(spectral::fft2(gf));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 1; i < ma.size(); ++i) {
      num += std::abs(ma.data[i] - mb.data[i]);
      den += ma.data[i];
    }
    CHECK(num / den < 0.35);
  }
}

TEST_CASE("class-balanced subsets and prefixes") {
  data::SyntheticSpec spec;
  spec.per_class = 10;
  const auto ds = data::synthetic(spec);
  const auto sub = data::class_balanced_subset(ds, 0.3, 1);
  CHECK(sub.size() == 30);
  std::map<int, int> counts;
  for (int l : sub.labels) ++counts[l];
  for (const auto& [k, n] : counts) CHECK(n == 3);
  CHECK(data::class_balanced_subset(ds, 0.01, 1).size() == 10);
  CHECK(data::class_balanced_subset(ds, 1.0, 1).size() == 100);
  CHECK(data::class_balanced_subset(ds, 0.3, 1).images == sub.images);
  CHECK(data::take(ds, 20).labels == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}
