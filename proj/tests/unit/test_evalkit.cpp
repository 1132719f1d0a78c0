#include <cmath>

#include "doctest.h"
#include "folk/error.hpp"
#include "folk/evalkit.hpp"

using namespace folk;

namespace {

FolkConfig tiny_config() {
  FolkConfig cfg;
  auto& e = cfg.model.encoder;
  e.image_size = 16;
  e.patch_size = 4;
  e.embed_dim = 8;
  e.depth = 1;
  e.num_heads = 2;
  e.mlp_ratio = 2;
  cfg.model.heads.proj_hidden_dim = 16;
  cfg.model.heads.proj_out_dim = 8;
  cfg.augment.crop_size = 16;
  cfg.trainer.batch_size = 4;
  cfg.trainer.epochs = 1;
  cfg.trainer.warmup_epochs = 0;
  return cfg;
}

data::Dataset corpus(int per_class, std::uint64_t split, int size = 16) {
  data::SyntheticSpec s;
  s.per_class = per_class;
  s.size = size;
  s.split = split;
  return data::synthetic(s);
}

}  // namespace

TEST_CASE("median and ranking") {
  CHECK(evalkit::median({3.0}) == 3.0);
  CHECK(evalkit::median({5.0, 1.0, 3.0}) == 3.0);
  CHECK(evalkit::median({4.0, 1.0, 3.0, 2.0}) == 2.5);

  std::vector<evalkit::AblationRow> rows{{"a", {}, 0.3, 0}, {"b", {}, 0.5, 0}, {"c", {}, 0.3, 0}, {"d", {}, 0.6, 0}};
  evalkit::rank_rows(rows);
  CHECK(rows[0].name == "d");
  CHECK(rows[1].name == "b");
  CHECK(rows[2].name == "a");  // ties keep grid order
  CHECK(rows[3].name == "c");
  for (int i = 0; i < 4; ++i) CHECK(rows[i].rank == i + 1);
}

TEST_CASE("named ablation grids") {
  const FolkConfig base;
  const auto def = evalkit::named_grid("default", base);
  REQUIRE(def.size() == 7);
  CHECK(def[0].name == "com_rcom");
  CHECK(def[0].spec.kind == filters::FilterKind::Com);
  CHECK(evalkit::named_grid("com-prob", base).size() == 5);
  CHECK(evalkit::named_grid("rates", base).back().spec.rate_set.size() == 3);
  CHECK(evalkit::named_grid("alpha", base)[0].alpha == 0.0);
  CHECK_THROWS_AS(evalkit::named_grid("everything", base), ConfigError);
}

TEST_CASE("linear probe") {
  const FolkConfig cfg = tiny_config();
  const auto params = nets::init_params(cfg.model, 1);
  const auto train = corpus(6, 0), test = corpus(3, 1);

  const auto feats = evalkit::extract_features(params, cfg, test);
  CHECK(feats.size() == 30);
  CHECK(feats[0].size() == 8);

  evalkit::ProbeOptions none;
  none.epochs = 0;
  const auto chance = evalkit::linear_probe(params, cfg, train, test, none);
  CHECK(chance.top1 == doctest::Approx(0.1));
  for (const auto& row : chance.confusion) CHECK(row[0] == 3);
  CHECK(chance.per_class[0] == 1.0);
  CHECK(chance.per_class[1] == 0.0);

  evalkit::ProbeOptions some;
  some.epochs = 30;
  some.lr = 0.05;
  const auto fit = evalkit::linear_probe(params, cfg, train, test, some);
  CHECK(fit.loss_curve.size() == 30);
  CHECK(fit.loss_curve.back() < fit.loss_curve.front());
  CHECK(fit.loss_curve.front() <= std::log(10.0) + 1e-9);
  int total = 0;
  for (const auto& row : fit.confusion)
    for (int v : row) total += v;
  CHECK(total == 30);
  const auto again = evalkit::linear_probe(params, cfg, train, test, some);
  CHECK(again.top1 == fit.top1);
  CHECK(again.loss_curve == fit.loss_curve);
}

TEST_CASE("noise robustness rows") {
  const FolkConfig cfg = tiny_config();
  const auto params = nets::init_params(cfg.model, 2);
  const auto images = corpus(1, 0).images;
  const auto rows = evalkit::noise_robustness(params, cfg, images, 6, 3);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].corruption == imaging::Corruption::None);
  for (const auto& r : rows) {
    CHECK(r.count == 6);
    CHECK(std::isfinite(r.mean_loss));
    CHECK(r.mean_loss > 0.0);
  }
  const auto repeat = evalkit::noise_robustness(params, cfg, images, 6, 3);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(repeat[i].mean_loss == rows[i].mean_loss);
  CHECK_THROWS(evalkit::noise_robustness(params, cfg, images, 11, 3));
}

TEST_CASE("few-shot fine-tuning sweeps every setting") {
  const FolkConfig cfg = tiny_config();
  const auto params = nets::init_params(cfg.model, 3);
  evalkit::FewShotOptions opt;
  opt.fraction = 0.5;
  opt.blr = {0.01, 0.02};
  opt.warmup_epochs = {0.0, 1.0};
  opt.epochs = 1;
  opt.batch_size = 4;
  const auto r = evalkit::few_shot_finetune(params, cfg, corpus(4, 0), corpus(2, 1), opt);
  CHECK(r.subset_size == 20);
  REQUIRE(r.settings.size() == 4);
  double best = 0.0, sum = 0.0;
  for (const auto& s : r.settings) {
    CHECK((s.top1 >= 0.0 && s.top1 <= 1.0));
    best = std::max(best, s.top1);
    sum += s.top1;
  }
  CHECK(r.max == best);
  CHECK(r.avg == doctest::Approx(sum / 4));
}

TEST_CASE("filter ablation wiring") {
  FolkConfig cfg = tiny_config();
  const auto train = corpus(2, 0, 20), test = corpus(1, 1, 16);
  auto grid = evalkit::named_grid("default", cfg);
  grid.resize(2);
  evalkit::ProbeOptions probe;
  probe.epochs = 2;
  int messages = 0;
  const auto rows = evalkit::filter_ablation(cfg, grid, {1, 2}, train, test, probe, [&](const std::string&) { ++messages; });
  REQUIRE(rows.size() == 2);
  CHECK(messages > 0);
  for (const auto& r : rows) {
    CHECK(r.top1_per_seed.size() == 2);
    CHECK(r.median_top1 == evalkit::median(r.top1_per_seed));
  }
  CHECK(rows[0].rank == 1);
  CHECK(rows[0].median_top1 >= rows[1].median_top1);
  CHECK_THROWS_AS(evalkit::filter_ablation(cfg, grid, {}, train, test, probe), InvalidArgument);
}
