#include "folk/evalkit.hpp"

#include <algorithm>
#include <cmath>

#include "folk/augment.hpp"
#include "folk/distill.hpp"
#include "folk/error.hpp"
#include "folk/rng.hpp"
#include "folk/trainer.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace evalkit {

using ad::Tensor;

namespace {

constexpr std::size_t kEvalBatch = 64;

imaging::Image model_sized(const imaging::Image& img, const augment::AugmentConfig& a) {
  if (img.height == a.crop_size && img.width == a.crop_size) return img;
  return imaging::resized_crop(img, 0.0, 0.0, static_cast<double>(img.height), static_cast<double>(img.width),
                               a.crop_size, a.crop_size);
}

Tensor one_hot(const std::vector<int>& labels, int classes) {
  std::vector<real> v(labels.size() * static_cast<std::size_t>(classes), real(0));
  for (std::size_t i = 0; i < labels.size(); ++i) v[i * classes + labels[i]] = real(1);
  return Tensor({static_cast<std::int64_t>(labels.size()), classes}, std::move(v));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const auto B = static_cast<real>(labels.size());
  return ad::scale(ad::sum(ad::mul(one_hot(labels, static_cast<int>(logits.dim(1))), ad::log_softmax(logits, -1))),
                   real(-1) / B);
}

int argmax_row(std::span<const real> d, std::int64_t row, std::int64_t K) {
  int best = 0;
  for (std::int64_t k = 1; k < K; ++k)
    if (d[row * K + k] > d[row * K + best]) best = static_cast<int>(k);
  return best;
}

void score(ProbeResult& r, const std::vector<int>& truth, const std::vector<int>& pred, int classes) {
  r.confusion.assign(classes, std::vector<int>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) ++r.confusion[truth[i]][pred[i]];
  r.per_class.assign(classes, 0.0);
  int correct = 0;
  for (int k = 0; k < classes; ++k) {
    int total = 0;
    for (int j = 0; j < classes; ++j) total += r.confusion[k][j];
    correct += r.confusion[k][k];
    r.per_class[k] = total ? static_cast<double>(r.confusion[k][k]) / total : 0.0;
  }
  r.top1 = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
}

void check_labels(const data::Dataset& ds, int classes, const char* what) {
  for (int l : ds.labels) {
    if (l < 0 || l >= classes) {
      throw InvalidArgument(std::string(what) + ": label " + std::to_string(l) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
  }
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t tag, long long epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::substream(seed, {tag, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::vector<double>> extract_features(const nets::ParamTree& params, const FolkConfig& cfg,
                                                  const data::Dataset& ds) {
  ad::NoGradGuard guard;
  std::vector<std::vector<double>> out;
  out.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += kEvalBatch) {
    const std::size_t end = std::min(ds.size(), start + kEvalBatch);
    std::vector<imaging::Image> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(augment::to_model_input(ds.images[i], cfg.augment));
    const auto enc = nets::encode(nets::to_batch(batch), params, cfg.model.encoder);
    const std::int64_t F = enc.cls.dim(1);
    const auto d = enc.cls.data();
    for (std::size_t b = 0; b < end - start; ++b) out.emplace_back(d.begin() + b * F, d.begin() + (b + 1) * F);
  }
  return out;
}

ProbeResult linear_probe(const nets::ParamTree& params, const FolkConfig& cfg, const data::Dataset& train,
                         const data::Dataset& test, const ProbeOptions& opt) {
  if (train.empty()) throw InvalidArgument("linear_probe: empty training set");
  const int K = train.num_classes;
  if (test.num_classes != K) throw InvalidArgument("linear_probe: train and test class counts differ");
  check_labels(train, K, "linear_probe");
  check_labels(test, K, "linear_probe");

  auto ftrain = extract_features(params, cfg, train);
  auto ftest = extract_features(params, cfg, test);
  const std::size_t F = ftrain.front().size();
  std::vector<double> mu(F, 0.0), sd(F, 0.0);
  for (const auto& f : ftrain)
    for (std::size_t j = 0; j < F; ++j) mu[j] += f[j];
  for (auto& m : mu) m /= static_cast<double>(ftrain.size());
  for (const auto& f : ftrain)
    for (std::size_t j = 0; j < F; ++j) sd[j] += (f[j] - mu[j]) * (f[j] - mu[j]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(ftrain.size())) + 1e-6;
  auto to_tensor = [&](const std::vector<std::vector<double>>& feats, const std::vector<std::size_t>& idx) {
    std::vector<real> v;
    v.reserve(idx.size() * F);
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < F; ++j) v.push_back(static_cast<real>((feats[i][j] - mu[j]) / sd[j]));
    return Tensor({static_cast<std::int64_t>(idx.size()), static_cast<std::int64_t>(F)}, std::move(v));
  };

  nets::ParamTree head;
  head.add("probe.weight", Tensor::zeros({static_cast<std::int64_t>(F), K}, true));
  head.add("probe.bias", Tensor::zeros({K}, true));
  auto adam = trainer::adam_init(head);
  trainer::AdamWOptions ao;
  ao.weight_decay = opt.weight_decay;
  ao.beta2 = 0.999;

  ProbeResult r;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, opt.batch_size));
  const long long steps_per_epoch = static_cast<long long>((train.size() + bs - 1) / bs);
  const long long total = steps_per_epoch * opt.epochs;
  long long step = 0;
  for (int e = 0; e < opt.epochs; ++e) {
    const auto order = shuffled(train.size(), opt.seed, 0x9b0be, e);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < train.size(); s += bs) {
      const std::vector<std::size_t> idx(order.begin() + s, order.begin() + std::min(train.size(), s + bs));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
      for (auto& t : head.tensors()) t.clear_grad();
      ad::TapeScope scope;
      const Tensor logits = ad::add(ad::matmul(to_tensor(ftrain, idx), head["probe.weight"]), head["probe.bias"]);
      const Tensor loss = cross_entropy(logits, labels);
      ad::backward(loss);
      ao.lr = trainer::lr_at(step++, total, 0, opt.lr);
      trainer::adamw_step(head, adam, ao);
      loss_sum += loss.item() * static_cast<double>(idx.size());
    }
    r.loss_curve.push_back(loss_sum / static_cast<double>(train.size()));
  }

  std::vector<int> pred;
  {
    ad::NoGradGuard guard;
    std::vector<std::size_t> all(test.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    if (!all.empty()) {
      const Tensor logits = ad::add(ad::matmul(to_tensor(ftest, all), head["probe.weight"]), head["probe.bias"]);
      for (std::size_t i = 0; i < all.size(); ++i) pred.push_back(argmax_row(logits.data(), i, K));
    }
  }
  score(r, test.labels, pred, K);
  r.config = {{"epochs", opt.epochs}, {"batch_size", opt.batch_size}, {"lr", opt.lr},
              {"weight_decay", opt.weight_decay}, {"seed", opt.seed}, {"feature_dim", F},
              {"train_size", train.size()}, {"test_size", test.size()}};
  return r;
}

FewShotResult few_shot_finetune(const nets::ParamTree& params, const FolkConfig& cfg, const data::Dataset& train,
                                const data::Dataset& test, const FewShotOptions& opt) {
  if (!(opt.fraction > 0.0 && opt.fraction <= 1.0)) throw InvalidArgument("few_shot_finetune: fraction must lie in (0, 1]");
  if (opt.blr.empty() || opt.warmup_epochs.empty()) throw InvalidArgument("few_shot_finetune: empty (blr, warmup) grid");
  const int K = train.num_classes;
  check_labels(train, K, "few_shot_finetune");
  check_labels(test, K, "few_shot_finetune");
  const data::Dataset subset = data::class_balanced_subset(train, opt.fraction, opt.seed);

  std::vector<imaging::Image> sub_in, test_in;
  for (const auto& img : subset.images) sub_in.push_back(augment::to_model_input(img, cfg.augment));
  for (const auto& img : test.images) test_in.push_back(augment::to_model_input(img, cfg.augment));

  FewShotResult res;
  res.subset_size = subset.size();
  const std::size_t bs = static_cast<std::size_t>(std::max(1, opt.batch_size));
  const long long spe = static_cast<long long>((subset.size() + bs - 1) / bs);
  const long long total = spe * opt.epochs;
  const std::int64_t F = cfg.model.encoder.feature_dim();
  for (double blr : opt.blr) {
    for (double wu : opt.warmup_epochs) {
      nets::ParamTree net = params.select({"encoder."}).clone(true);
      net.add("classifier.weight", Tensor::zeros({F, K}, true));
      net.add("classifier.bias", Tensor::zeros({K}, true));
      auto adam = trainer::adam_init(net);
      trainer::AdamWOptions ao;
      ao.beta1 = cfg.trainer.beta1;
      ao.beta2 = cfg.trainer.beta2;
      ao.weight_decay = opt.weight_decay;
      ao.wd_exclude = cfg.trainer.wd_exclude;
      const double peak = trainer::scaled_lr(blr, static_cast<int>(bs), cfg.trainer.world_size);
      const long long warm = std::min(total, std::llround(wu * static_cast<double>(spe)));
      long long step = 0;
      for (int e = 0; e < opt.epochs; ++e) {
        const auto order = shuffled(subset.size(), opt.seed, 0xf15a7, e);
        for (std::size_t s = 0; s < subset.size(); s += bs) {
          std::vector<imaging::Image> imgs;
          std::vector<int> labels;
          for (std::size_t j = s; j < std::min(subset.size(), s + bs); ++j) {
            imgs.push_back(sub_in[order[j]]);
            labels.push_back(subset.labels[order[j]]);
          }
          for (auto& t : net.tensors()) t.clear_grad();
          ad::TapeScope scope;
          const auto enc = nets::encode(nets::to_batch(imgs), net, cfg.model.encoder);
          const Tensor logits = ad::add(ad::matmul(enc.cls, net["classifier.weight"]), net["classifier.bias"]);
          ad::backward(cross_entropy(logits, labels));
          trainer::clip_grad_norm(net, cfg.trainer.grad_clip_norm);
          ao.lr = trainer::lr_at(step++, total, warm, peak);
          trainer::adamw_step(net, adam, ao);
        }
      }
      int correct = 0;
      {
        ad::NoGradGuard guard;
        for (std::size_t s = 0; s < test_in.size(); s += kEvalBatch) {
          const std::size_t end = std::min(test_in.size(), s + kEvalBatch);
          const std::vector<imaging::Image> imgs(test_in.begin() + s, test_in.begin() + end);
          const auto enc = nets::encode(nets::to_batch(imgs), net, cfg.model.encoder);
          const Tensor logits = ad::add(ad::matmul(enc.cls, net["classifier.weight"]), net["classifier.bias"]);
          for (std::size_t i = 0; i < end - s; ++i)
            correct += argmax_row(logits.data(), static_cast<std::int64_t>(i), K) == test.labels[s + i];
        }
      }
      const double top1 = test_in.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_in.size());
      res.settings.push_back({blr, wu, top1});
    }
  }
  double sum = 0.0;
  res.max = 0.0;
  for (const auto& s : res.settings) {
    sum += s.top1;
    res.max = std::max(res.max, s.top1);
  }
  res.avg = sum / static_cast<double>(res.settings.size());
  return res;
}

std::vector<NoiseRow> noise_robustness(const nets::ParamTree& params, const FolkConfig& cfg,
                                       const std::vector<imaging::Image>& images, std::size_t n, std::uint64_t seed,
                                       const imaging::CorruptionParams& corruption) {
  using imaging::Corruption;
  if (images.size() < n) {
    throw InvalidArgument("noise_robustness: need " + std::to_string(n) + " images, got " +
                          std::to_string(images.size()));
  }
  const auto& a = cfg.augment;
  std::vector<NoiseRow> rows;
  ad::NoGradGuard guard;
  for (Corruption kind : {Corruption::None, Corruption::SaltPepper, Corruption::Gaussian, Corruption::Brightness,
                          Corruption::Contrast}) {
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += kEvalBatch) {
      const std::size_t end = std::min(n, start + kEvalBatch);
      std::vector<imaging::Image> inputs, targets;
      std::vector<filters::FrequencyMask> masks;
      for (std::size_t i = start; i < end; ++i) {
        const imaging::Image img = model_sized(images[i], a);
        Rng noise_rng = Rng::substream(seed, {0xc0aaull, i});
        const imaging::Image corrupted = imaging::corrupt(img, kind, corruption, noise_rng);
        Rng mask_rng = Rng::substream(seed, {0xf11eull, i});
        auto draw = filters::sample_filter(imaging::to_grayscale(corrupted), cfg.filter, mask_rng);
        inputs.push_back(imaging::normalize(imaging::apply_frequency_mask(corrupted, draw.mask), a.mean, a.stddev));
        targets.push_back(imaging::normalize(corrupted, a.mean, a.stddev));
        masks.push_back(std::move(draw.mask));
      }
      const auto enc = nets::encode(nets::to_batch(inputs), params, cfg.model.encoder);
      const Tensor recon = nets::mfm_head(enc.tokens, params, cfg.model.encoder);
      const Tensor loss = distill::mfm_loss(recon, nets::to_batch(targets), masks, cfg.distill.mfm_norm);
      sum += static_cast<double>(loss.item()) * static_cast<double>(end - start);
    }
    rows.push_back({kind, n ? sum / static_cast<double>(n) : 0.0, n});
  }
  return rows;
}

std::vector<AblationPoint> named_grid(const std::string& name, const FolkConfig& base) {
  using filters::FilterKind;
  std::vector<AblationPoint> g;
  auto with = [&](const std::string& label, auto&& edit) {
    AblationPoint p{label, base.filter, -1.0};
    edit(p);
    g.push_back(std::move(p));
  };
  if (name == "default") {
    with("com_rcom", [](AblationPoint& p) { p.spec.kind = FilterKind::Com; });
    with("low_high", [](AblationPoint& p) { p.spec.kind = FilterKind::LowPass; p.spec.low_prob = 0.5; });
    with("lowpass", [](AblationPoint& p) { p.spec.kind = FilterKind::LowPass; p.spec.low_prob = 1.0; });
    with("highpass", [](AblationPoint& p) { p.spec.kind = FilterKind::HighPass; p.spec.low_prob = 0.0; });
    with("gabor", [](AblationPoint& p) { p.spec.kind = FilterKind::Gabor; });
    with("token", [](AblationPoint& p) { p.spec.kind = FilterKind::TokenMask; });
    with("circle", [](AblationPoint& p) { p.spec.kind = FilterKind::CircleMask; });
  } else if (name == "com-prob") {
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0})
      with("com_prob=" + nlohmann::json(q).dump(), [q](AblationPoint& p) { p.spec.kind = FilterKind::Com; p.spec.com_prob = q; });
  } else if (name == "rates") {
    for (const std::vector<double>& rs : std::vector<std::vector<double>>{{0.005}, {0.01}, {0.05}, {0.005, 0.01, 0.05}})
      with("rates=" + nlohmann::json(rs).dump(), [rs](AblationPoint& p) { p.spec.kind = FilterKind::Com; p.spec.rate_set = rs; });
  } else if (name == "alpha") {
    for (double al : {0.0, 0.5, 1.0, 2.0})
      with("alpha=" + nlohmann::json(al).dump(), [al](AblationPoint& p) { p.alpha = al; });
  } else {
    throw ConfigError("grid", "unknown grid '" + name + "' (expected default, com-prob, rates or alpha)");
  }
  return g;
}

void rank_rows(std::vector<AblationRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AblationRow& a, const AblationRow& b) { return a.median_top1 > b.median_top1; });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i + 1);
}

std::vector<AblationRow> filter_ablation(const FolkConfig& base, const std::vector<AblationPoint>& grid,
                                         const std::vector<std::uint64_t>& seeds, const data::Dataset& train,
                                         const data::Dataset& test, const ProbeOptions& probe,
                                         const std::function<void(const std::string&)>& progress) {
  if (seeds.empty()) throw InvalidArgument("filter_ablation: no seeds");
  std::vector<AblationRow> rows;
  for (const auto& point : grid) {
    FolkConfig cfg = base;
    cfg.filter = point.spec;
    if (point.alpha >= 0.0) cfg.distill.alpha = point.alpha;
    validate(cfg);
    AblationRow row{point.name, {}, 0.0, 0};
    for (std::uint64_t seed : seeds) {
      auto state = trainer::init_state(cfg, seed);
      trainer::train(cfg, train, state);
      ProbeOptions po = probe;
      po.seed = seed;
      row.top1_per_seed.push_back(linear_probe(state.student, cfg, train, test, po).top1);
      if (progress) progress(point.name + " seed " + std::to_string(seed) + ": top1 " + std::to_string(row.top1_per_seed.back()));
    }
    row.median_top1 = median(row.top1_per_seed);
    rows.push_back(std::move(row));
  }
  rank_rows(rows);
  return rows;
}

}  // namespace evalkit
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
