#pragma once

// Evaluation harnesses: linear probe, few-shot fine-tune, noise robustness
// of the reconstruction loss, and the filter ablation sweep.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "folk/config.hpp"
#include "folk/dataset.hpp"
#include "folk/imaging.hpp"
#include "folk/nets.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace evalkit {

struct ProbeOptions {
  int epochs = 100;
  int batch_size = 64;
  double lr = 0.01;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double top1 = 0.0;
  std::vector<double> per_class;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
  std::vector<double> loss_curve;           // mean training loss per epoch
  nlohmann::json config;
};

// cls features of the frozen encoder for every image, [n][F].
std::vector<std::vector<double>> extract_features(const nets::ParamTree& params, const FolkConfig& cfg,
                                                  const data::Dataset& ds);

// Standardizes train features, fits a zero-initialized linear classifier
// with AdamW and cross-entropy, and scores the test set. Zero epochs leave
// every logit at zero, so every prediction is class 0.
ProbeResult linear_probe(const nets::ParamTree& params, const FolkConfig& cfg, const data::Dataset& train,
                         const data::Dataset& test, const ProbeOptions& opt);

struct FewShotOptions {
  double fraction = 0.1;
  std::vector<double> blr{0.004, 0.008, 0.016};
  std::vector<double> warmup_epochs{0.0, 2.0};
  int epochs = 15;
  int batch_size = 16;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
};

struct FewShotSetting {
  double blr = 0.0;
  double warmup_epochs = 0.0;
  double top1 = 0.0;
};

struct FewShotResult {
  std::vector<FewShotSetting> settings;
  double avg = 0.0;
  double max = 0.0;
  std::size_t subset_size = 0;
};

// Fine-tunes a copy of the whole encoder plus a zero-initialized linear
// classifier on a class-balanced subset, once per (blr, warmup) pair.
// lr = scaled_lr(blr, batch, world), linear warmup then cosine decay.
FewShotResult few_shot_finetune(const nets::ParamTree& params, const FolkConfig& cfg, const data::Dataset& train,
                                const data::Dataset& test, const FewShotOptions& opt);

struct NoiseRow {
  imaging::Corruption corruption = imaging::Corruption::None;
  double mean_loss = 0.0;
  std::size_t count = 0;
};

// For each corruption (none first): corrupt -> informed filter from the
// corrupted image -> student reconstruction -> mfm_loss against the
// corrupted image. Image i uses the same random streams under every
// corruption. Uses the first n images; throws if fewer are available.
std::vector<NoiseRow> noise_robustness(const nets::ParamTree& params, const FolkConfig& cfg,
                                       const std::vector<imaging::Image>& images, std::size_t n, std::uint64_t seed,
                                       const imaging::CorruptionParams& corruption = {});

struct AblationPoint {
  std::string name;
  filters::FilterSpec spec;
  // Optional overrides of distill.alpha for the alpha grid.
  double alpha = -1.0;
};

struct AblationRow {
  std::string name;
  std::vector<double> top1_per_seed;
  double median_top1 = 0.0;
  int rank = 0;  // 1 = best
};

// Named grids: "default" (7 filter families), "com-prob", "rates", "alpha".
std::vector<AblationPoint> named_grid(const std::string& name, const FolkConfig& base);

// Pretrains and probes every grid point under every seed (shared across
// points) and ranks the rows by median top-1. `progress` may be null.
std::vector<AblationRow> filter_ablation(const FolkConfig& base, const std::vector<AblationPoint>& grid,
                                         const std::vector<std::uint64_t>& seeds, const data::Dataset& train,
                                         const data::Dataset& test, const ProbeOptions& probe,
                                         const std::function<void(const std::string&)>& progress = {});

// Sorts by descending median and assigns ranks; ties keep grid order.
void rank_rows(std::vector<AblationRow>& rows);

double median(std::vector<double> v);

}  // namespace evalkit
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
