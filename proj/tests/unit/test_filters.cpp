#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "folk/error.hpp"
#include "folk/filters.hpp"
#include "oracles.hpp"

using namespace folk;
using namespace folk::filters;
using spectral::RealGrid;

namespace {

// Brute-force reference: full stable sort by descending magnitude.
FrequencyMask sorted_topk(const RealGrid& mag, std::size_t k) {
  std::vector<std::size_t> order(mag.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mag.data[a] > mag.data[b]; });
  FrequencyMask m(mag.height, mag.width, 0);
  for (std::size_t i = 0; i < k; ++i) m.bits[order[i]] = 1;
  return m;
}

bool dominance_holds(const RealGrid& mag, const FrequencyMask& com) {
  double min_kept = INFINITY, max_dropped = -INFINITY;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    if (com.bits[i]) min_kept = std::min(min_kept, mag.data[i]);
    else max_dropped = std::max(max_dropped, mag.data[i]);
  }
  return min_kept >= max_dropped;
}

}  // namespace

TEST_CASE("com_rcom_pair on the hand-worked 2x2 case") {
  RealGrid mag(2, 2);
  mag.data = {4, 1, 3, 2};
  auto [com, rcom] = com_rcom_pair(mag, 0.5);
  CHECK(com.bits == std::vector<std::uint8_t>{1, 0, 1, 0});
  CHECK(rcom.bits == std::vector<std::uint8_t>{0, 1, 0, 1});
}

TEST_CASE("ties at the threshold go to the lowest row-major index") {
  const RealGrid flat(4, 4, 2.0);
  auto [com, rcom] = com_rcom_pair(flat, 0.25);
  for (std::size_t i = 0; i < 16; ++i) CHECK(com.bits[i] == (i < 4 ? 1 : 0));

  RealGrid partial(2, 4);
  partial.data = {1, 5, 3, 3, 3, 0, 3, 2};
  auto [c2, r2] = com_rcom_pair(partial, 0.375);  // k = 3: the 5, then the first two 3s
  CHECK(c2.bits == std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("exact cardinality, complementarity and dominance on random spectra") {
  std::mt19937_64 gen(21);
  for (double rate : {0.005, 0.01, 0.05, 0.3}) {
    for (int trial = 0; trial < 25; ++trial) {
      const RealGrid mag = oracle::random_grid(32, 32, gen, 0.0, 10.0);
      auto [com, rcom] = com_rcom_pair(mag, rate);
      const auto k = static_cast<std::size_t>(std::llround(rate * 1024));
      CHECK(com.popcount() == k);
      CHECK(com == sorted_topk(mag, k));
      for (std::size_t i = 0; i < com.size(); ++i) CHECK(com.bits[i] + rcom.bits[i] == 1);
      CHECK(dominance_holds(mag, com));
    }
  }
}

TEST_CASE("dominance with heavy ties matches the sort oracle") {
  std::mt19937_64 gen(8);
  std::uniform_int_distribution<int> levels(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    RealGrid mag(8, 8);
    for (auto& v : mag.data) v = levels(gen);
    auto [com, rcom] = com_rcom_pair(mag, 0.2);
    CHECK(com == sorted_topk(mag, 13));
    CHECK(dominance_holds(mag, com));
  }
}

TEST_CASE("rates outside (0, 1) are rejected") {
  const RealGrid mag(4, 4, 1.0);
  CHECK_THROWS_AS(com_rcom_pair(mag, 0.0), InvalidArgument);
  CHECK_THROWS_AS(com_rcom_pair(mag, 1.0), InvalidArgument);
  CHECK_THROWS_AS(com_rcom_pair(mag, -0.1), InvalidArgument);
}

TEST_CASE("informed sampling draws rates from the set and honours com_prob") {
  std::mt19937_64 gen(4);
  const RealGrid gray = oracle::random_grid(16, 16, gen);
  FilterSpec spec;
  spec.com_prob = 1.0;
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const MaskDraw d = sample_informed_filter(gray, spec, rng);
    CHECK(d.applied == FilterKind::Com);
    REQUIRE(d.rate.has_value());
    CHECK(std::find(spec.rate_set.begin(), spec.rate_set.end(), *d.rate) != spec.rate_set.end());
    CHECK(d.mask == com_rcom_pair(spectral::magnitude(spectral::fft2(gray)), *d.rate).first);
  }

  spec.com_prob = 0.5;
  Rng fair(99);
  int com = 0;
  const int draws = 10000;
  const RealGrid tiny = oracle::random_grid(4, 4, gen);
  for (int i = 0; i < draws; ++i) com += sample_informed_filter(tiny, spec, fair).applied == FilterKind::Com;
  CHECK(std::abs(com / double(draws) - 0.5) < 0.02);

  spec.rate_set.clear();
  CHECK_THROWS_AS(sample_informed_filter(gray, spec, rng), ConfigError);
}

TEST_CASE("informed sampling is deterministic per seed") {
  std::mt19937_64 gen(6);
  const RealGrid gray = oracle::random_grid(16, 16, gen);
  FilterSpec spec;
  Rng a(123), b(123);
  for (int i = 0; i < 20; ++i) CHECK(sample_informed_filter(gray, spec, a).mask == sample_informed_filter(gray, spec, b).mask);
}

TEST_CASE("constant low and high pass filters") {
  const FrequencyMask all = constant_filter(8, 8, 8.0, FilterKind::LowPass);
  CHECK(all.popcount() == 64);

  const FrequencyMask dc_only = constant_filter(7, 7, 1e-9, FilterKind::LowPass);
  CHECK(dc_only.popcount() == 1);
  CHECK(dc_only.at(0, 0) == 1);

  const FrequencyMask lo = constant_filter(16, 16, 4.0, FilterKind::LowPass);
  const FrequencyMask hi = constant_filter(16, 16, 4.0, FilterKind::HighPass);
  for (std::size_t i = 0; i < lo.size(); ++i) CHECK(lo.bits[i] + hi.bits[i] == 1);
  CHECK(lo.at(0, 0) == 1);
  // Distance 4 from DC along a row stays inside, distance 5 does not.
  CHECK(lo.at(0, 4) == 1);
  CHECK(lo.at(0, 5) == 0);
  CHECK(lo.at(0, 12) == 1);

  CHECK_THROWS_AS(constant_filter(8, 8, 0.0, FilterKind::LowPass), InvalidArgument);
  CHECK_THROWS_AS(constant_filter(8, 8, 2.0, FilterKind::Gabor), InvalidArgument);
}

TEST_CASE("random baselines") {
  BaselineParams p;
  p.token_count = 0;
  Rng rng(5);
  CHECK(random_baseline_filter(16, 16, FilterKind::TokenMask, p, rng).popcount() == 256);

  p.circle_count = 1;
  p.circle_min_radius = p.circle_max_radius = 22.0;  // reaches every bin from any centre
  CHECK(random_baseline_filter(16, 16, FilterKind::CircleMask, p, rng).popcount() == 0);

  BaselineParams d;
  for (FilterKind k : {FilterKind::Gabor, FilterKind::TokenMask, FilterKind::CircleMask}) {
    Rng a(77), b(77);
    const FrequencyMask ma = random_baseline_filter(32, 32, k, d, a);
    CHECK(ma == random_baseline_filter(32, 32, k, d, b));
    CHECK(ma.popcount() < 1024);
    CHECK(ma.popcount() > 0);
  }

  BaselineParams big;
  big.token_side = 40;
  CHECK_THROWS_AS(random_baseline_filter(32, 32, FilterKind::TokenMask, big, rng), ConfigError);
  BaselineParams wide;
  wide.circle_max_radius = 100.0;
  CHECK_THROWS_AS(random_baseline_filter(32, 32, FilterKind::CircleMask, wide, rng), ConfigError);
}

TEST_CASE("token squares land on the shifted grid and mask exactly side^2 bins each") {
  BaselineParams p;
  p.token_count = 1;
  p.token_side = 3;
  Rng rng(2);
  CHECK(random_baseline_filter(16, 16, FilterKind::TokenMask, p, rng).masked_count() == 9);
}

TEST_CASE("sample_filter dispatch") {
  std::mt19937_64 gen(1);
  const RealGrid gray = oracle::random_grid(16, 16, gen);
  FilterSpec spec;
  spec.kind = FilterKind::HighPass;
  spec.low_prob = 0.0;
  Rng rng(3);
  const MaskDraw d = sample_filter(gray, spec, rng);
  CHECK(d.applied == FilterKind::HighPass);
  CHECK_FALSE(d.rate.has_value());
  CHECK(d.mask == constant_filter(16, 16, spec.radius, FilterKind::HighPass));

  spec.kind = FilterKind::RCom;
  spec.com_prob = 0.0;
  CHECK(sample_filter(gray, spec, rng).applied == FilterKind::RCom);
}

TEST_CASE("mask shifts and names") {
  FrequencyMask m(4, 6, 0);
  m.at(0, 0) = 1;
  CHECK(fftshift(m).at(2, 3) == 1);
  CHECK(ifftshift(fftshift(m)) == m);
  for (FilterKind k : {FilterKind::Com, FilterKind::RCom, FilterKind::LowPass, FilterKind::HighPass, FilterKind::Gabor,
                       FilterKind::TokenMask, FilterKind::CircleMask})
    CHECK(parse_filter_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_filter_kind("wavelet"), ConfigError);

  FilterSpec bad;
  bad.com_prob = 1.5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}
