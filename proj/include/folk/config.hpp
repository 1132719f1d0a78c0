#pragma once

// Run configuration: plain structs plus strict JSON (de)serialization.
// Unknown keys are rejected; errors carry the dotted key path.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "folk/augment.hpp"
#include "folk/filters.hpp"

namespace folk {

enum class Arch { ViT, CNN };

struct EncoderConfig {
  Arch arch = Arch::ViT;
  int image_size = 32;
  int in_channels = 3;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 4;
  int num_heads = 4;
  int mlp_ratio = 4;
  std::vector<int> cnn_channels{16, 32, 64};

  // Tokens per side of the final feature grid.
  int grid_size() const;
  int feature_dim() const { return arch == Arch::ViT ? embed_dim : cnn_channels.back(); }
  // Pixels per token side handled by the MFM head.
  int cell_size() const { return image_size / grid_size(); }
};

struct HeadsConfig {
  int proj_hidden_dim = 256;
  int proj_out_dim = 256;
};

struct ModelConfig {
  EncoderConfig encoder;
  HeadsConfig heads;
};

enum class MfmNorm { Mean, Sum };

struct DistillConfig {
  double tau_s = 0.001;
  double tau_t = 0.0002;
  double center_momentum = 0.9;
  // EMA coefficient, raised from ema_base to 1 along a cosine over training
  // when ema_cosine is set.
  double ema_base = 0.996;
  bool ema_cosine = true;
  double alpha = 1.0;
  MfmNorm mfm_norm = MfmNorm::Mean;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double base_lr = 0.016;
  double warmup_epochs = 2.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double grad_clip_norm = 3.0;
  int world_size = 1;
  std::optional<std::uint64_t> seed;
  std::string schedule = "cosine";
  // Parameter-name substrings excluded from weight decay.
  std::vector<std::string> wd_exclude{"bias", "gain", "center"};
  int checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  long long max_steps = -1;  // stop after this many steps in total; -1 runs the schedule
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or a directory of class folders
  int train_per_class = 150;
  int test_per_class = 40;
  std::uint64_t seed = 7;
  int num_classes = 10;
};

struct IoConfig {
  std::string out = "folk.ckpt";  // checkpoint written by pretrain
  std::string metrics = "";       // JSON-lines sink
  std::string results = "";       // CSV written by the evaluation commands
  std::string ckpt = "";          // checkpoint read by the evaluation commands
  std::string resume = "";        // checkpoint pretrain continues from
  std::string input = "";         // image read by mask
  std::string out_dir = ".";      // directory mask writes into
  int workers = 1;
  bool deterministic = false;
};

struct EvalConfig {
  int probe_epochs = 100;
  double probe_lr = 0.01;
  int probe_batch_size = 64;
  double fewshot_fraction = 0.1;
  std::vector<double> fewshot_blr{0.004, 0.008, 0.016};
  std::vector<double> fewshot_warmup{0.0, 2.0};
  int fewshot_epochs = 15;
  int noise_n = 100;
  std::string ablation_grid = "default";
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};
};

struct FolkConfig {
  ModelConfig model;
  filters::FilterSpec filter;
  augment::AugmentConfig augment;
  DistillConfig distill;
  TrainConfig trainer;
  DataConfig data;
  IoConfig io;
  EvalConfig eval;
};

// Throws ConfigError naming the first invalid key.
void validate(const FolkConfig& cfg);

nlohmann::json to_json(const FolkConfig& cfg);

// Missing keys take defaults except those listed in required_keys().
FolkConfig config_from_json(const nlohmann::json& j);
FolkConfig load_config(const std::string& path);
const std::vector<std::string>& required_keys();

std::string to_string(Arch a);

}  // namespace folk
