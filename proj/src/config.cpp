#include "folk/config.hpp"

#include <fstream>
#include <set>

#include "folk/error.hpp"

namespace folk {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <typename T>
  void field(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(key_path(key), std::string("wrong type: ") + e.what());
    }
  }

  template <typename T>
  void field(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T value{};
    field(key, value);
    out = value;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void section(ObjectReader& parent, const char* key, Fn&& fn) {
  if (const json* j = parent.child(key)) {
    ObjectReader r(*j, parent.key_path(key));
    fn(r);
    r.finish();
  }
}

Arch parse_arch(const std::string& s) {
  if (s == "vit") return Arch::ViT;
  if (s == "cnn") return Arch::CNN;
  throw ConfigError("model.encoder.arch", "expected vit or cnn, got '" + s + "'");
}

}  // namespace

std::string to_string(Arch a) { return a == Arch::ViT ? "vit" : "cnn"; }

int EncoderConfig::grid_size() const {
  if (arch == Arch::ViT) return patch_size > 0 ? image_size / patch_size : 0;
  return image_size >> static_cast<int>(cnn_channels.size());
}

const std::vector<std::string>& required_keys() {
  static const std::vector<std::string> keys{"trainer.base_lr"};
  return keys;
}

void validate(const FolkConfig& cfg) {
  const auto& e = cfg.model.encoder;
  if (e.image_size < 1) throw ConfigError("model.encoder.image_size", "must be positive");
  if (e.in_channels != 1 && e.in_channels != 3) throw ConfigError("model.encoder.in_channels", "must be 1 or 3");
  if (e.depth < 1) throw ConfigError("model.encoder.depth", "must be >= 1");
  if (e.arch == Arch::ViT) {
    if (e.patch_size < 1 || e.image_size % e.patch_size != 0) {
      throw ConfigError("model.encoder.patch_size", "image_size must be divisible by patch_size");
    }
    if (e.embed_dim < 1 || e.num_heads < 1 || e.embed_dim % e.num_heads != 0) {
      throw ConfigError("model.encoder.num_heads", "embed_dim must be divisible by num_heads");
    }
    if (e.mlp_ratio < 1) throw ConfigError("model.encoder.mlp_ratio", "must be >= 1");
  } else {
    if (e.cnn_channels.empty()) throw ConfigError("model.encoder.cnn_channels", "must not be empty");
    for (int c : e.cnn_channels)
      if (c < 1) throw ConfigError("model.encoder.cnn_channels", "every width must be >= 1");
    if (e.grid_size() < 1 || (e.image_size % (1 << e.cnn_channels.size())) != 0) {
      throw ConfigError("model.encoder.cnn_channels", "image_size must be divisible by 2^stages");
    }
  }
  if (cfg.model.heads.proj_hidden_dim < 1) throw ConfigError("model.heads.proj_hidden_dim", "must be >= 1");
  if (cfg.model.heads.proj_out_dim < 1) throw ConfigError("model.heads.proj_out_dim", "must be >= 1");

  filters::validate(cfg.filter);
  augment::validate(cfg.augment);
  if (static_cast<int>(cfg.augment.crop_size) != e.image_size) {
    throw ConfigError("augment.crop_size", "must equal model.encoder.image_size");
  }
  if (static_cast<int>(cfg.augment.mean.size()) < e.in_channels) {
    throw ConfigError("augment.mean", "need one mean/std per input channel");
  }

  const auto& d = cfg.distill;
  if (!(d.tau_s > 0.0)) throw ConfigError("distill.tau_s", "must be positive");
  if (!(d.tau_t > 0.0)) throw ConfigError("distill.tau_t", "must be positive");
  if (!(d.center_momentum >= 0.0 && d.center_momentum <= 1.0)) throw ConfigError("distill.center_momentum", "must lie in [0, 1]");
  if (!(d.ema_base >= 0.0 && d.ema_base <= 1.0)) throw ConfigError("distill.ema_base", "must lie in [0, 1]");
  if (!(d.alpha >= 0.0)) throw ConfigError("distill.alpha", "must be non-negative");

  const auto& t = cfg.trainer;
  if (t.epochs < 1) throw ConfigError("trainer.epochs", "must be >= 1");
  if (t.batch_size < 1) throw ConfigError("trainer.batch_size", "must be >= 1");
  if (!(t.base_lr > 0.0)) throw ConfigError("trainer.base_lr", "must be positive");
  if (!(t.warmup_epochs >= 0.0 && t.warmup_epochs <= t.epochs)) throw ConfigError("trainer.warmup_epochs", "must lie in [0, epochs]");
  if (!(t.weight_decay >= 0.0)) throw ConfigError("trainer.weight_decay", "must be non-negative");
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0)) throw ConfigError("trainer.betas", "beta1 must lie in [0, 1)");
  if (!(t.beta2 >= 0.0 && t.beta2 < 1.0)) throw ConfigError("trainer.betas", "beta2 must lie in [0, 1)");
  if (!(t.grad_clip_norm > 0.0)) throw ConfigError("trainer.grad_clip_norm", "must be positive");
  if (t.world_size < 1) throw ConfigError("trainer.world_size", "must be >= 1");
  if (t.schedule != "cosine") throw ConfigError("trainer.schedule", "only 'cosine' is supported");
  if (t.checkpoint_every < 0) throw ConfigError("trainer.checkpoint_every", "must be non-negative");
  if (t.max_steps < -1) throw ConfigError("trainer.max_steps", "must be -1 or non-negative");
  const auto& ev = cfg.eval;
  if (ev.probe_epochs < 0) throw ConfigError("eval.probe_epochs", "must be non-negative");
  if (!(ev.probe_lr > 0.0)) throw ConfigError("eval.probe_lr", "must be positive");
  if (ev.probe_batch_size < 1) throw ConfigError("eval.probe_batch_size", "must be >= 1");
  if (!(ev.fewshot_fraction > 0.0 && ev.fewshot_fraction <= 1.0)) throw ConfigError("eval.fewshot_fraction", "must lie in (0, 1]");
  if (ev.fewshot_blr.empty()) throw ConfigError("eval.fewshot_blr", "must not be empty");
  if (ev.fewshot_warmup.empty()) throw ConfigError("eval.fewshot_warmup", "must not be empty");
  if (ev.fewshot_epochs < 0) throw ConfigError("eval.fewshot_epochs", "must be non-negative");
  if (ev.noise_n < 1) throw ConfigError("eval.noise_n", "must be >= 1");
  if (ev.ablation_seeds.empty()) throw ConfigError("eval.ablation_seeds", "must not be empty");

  if (cfg.data.train_per_class < 1) throw ConfigError("data.train_per_class", "must be >= 1");
  if (cfg.data.test_per_class < 0) throw ConfigError("data.test_per_class", "must be >= 0");
  if (cfg.data.num_classes < 1) throw ConfigError("data.num_classes", "must be >= 1");
  if (cfg.io.workers < 1) throw ConfigError("io.workers", "must be >= 1");
}

nlohmann::json to_json(const FolkConfig& c) {
  const auto& e = c.model.encoder;
  const auto& f = c.filter;
  const auto& b = f.baseline;
  json j;
  j["model"] = {{"encoder",
                 {{"arch", to_string(e.arch)},
                  {"image_size", e.image_size},
                  {"in_channels", e.in_channels},
                  {"patch_size", e.patch_size},
                  {"embed_dim", e.embed_dim},
                  {"depth", e.depth},
                  {"num_heads", e.num_heads},
                  {"mlp_ratio", e.mlp_ratio},
                  {"cnn_channels", e.cnn_channels}}},
                {"heads", {{"proj_hidden_dim", c.model.heads.proj_hidden_dim}, {"proj_out_dim", c.model.heads.proj_out_dim}}}};
  j["filter"] = {{"kind", filters::to_string(f.kind)},
                 {"rate_set", f.rate_set},
                 {"com_prob", f.com_prob},
                 {"radius", f.radius},
                 {"low_prob", f.low_prob},
                 {"baseline",
                  {{"token_count", b.token_count},
                   {"token_side", b.token_side},
                   {"circle_count", b.circle_count},
                   {"circle_min_radius", b.circle_min_radius},
                   {"circle_max_radius", b.circle_max_radius},
                   {"gabor_count", b.gabor_count},
                   {"gabor_sigma", b.gabor_sigma},
                   {"gabor_level", b.gabor_level},
                   {"gabor_min_freq", b.gabor_min_freq},
                   {"gabor_max_freq", b.gabor_max_freq}}}};
  const auto& a = c.augment;
  j["augment"] = {{"crop_size", a.crop_size}, {"scale_min", a.scale_min}, {"scale_max", a.scale_max},
                  {"ratio_min", a.ratio_min}, {"ratio_max", a.ratio_max}, {"flip_prob", a.flip_prob},
                  {"color_jitter", a.color_jitter}, {"mean", a.mean}, {"std", a.stddev}};
  const auto& d = c.distill;
  j["distill"] = {{"tau_s", d.tau_s}, {"tau_t", d.tau_t}, {"center_momentum", d.center_momentum},
                  {"ema_base", d.ema_base}, {"ema_schedule", d.ema_cosine ? "cosine" : "constant"},
                  {"alpha", d.alpha}, {"mfm_norm", d.mfm_norm == MfmNorm::Mean ? "mean" : "sum"}};
  const auto& t = c.trainer;
  j["trainer"] = {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"base_lr", t.base_lr},
                  {"warmup_epochs", t.warmup_epochs}, {"weight_decay", t.weight_decay},
                  {"betas", {t.beta1, t.beta2}}, {"adam_eps", t.adam_eps}, {"grad_clip_norm", t.grad_clip_norm},
                  {"world_size", t.world_size}, {"schedule", t.schedule}, {"wd_exclude", t.wd_exclude},
                  {"checkpoint_every", t.checkpoint_every}, {"max_steps", t.max_steps}};
  j["trainer"]["seed"] = t.seed ? json(*t.seed) : json(nullptr);
  j["data"] = {{"source", c.data.source}, {"train_per_class", c.data.train_per_class},
               {"test_per_class", c.data.test_per_class}, {"seed", c.data.seed}, {"num_classes", c.data.num_classes}};
  j["io"] = {{"out", c.io.out},         {"metrics", c.io.metrics}, {"results", c.io.results},
             {"ckpt", c.io.ckpt},       {"resume", c.io.resume},   {"input", c.io.input},
             {"out_dir", c.io.out_dir}, {"workers", c.io.workers}, {"deterministic", c.io.deterministic}};
  const auto& ev = c.eval;
  j["eval"] = {{"probe_epochs", ev.probe_epochs},         {"probe_lr", ev.probe_lr},
               {"probe_batch_size", ev.probe_batch_size}, {"fewshot_fraction", ev.fewshot_fraction},
               {"fewshot_blr", ev.fewshot_blr},           {"fewshot_warmup", ev.fewshot_warmup},
               {"fewshot_epochs", ev.fewshot_epochs},     {"noise_n", ev.noise_n},
               {"ablation_grid", ev.ablation_grid},       {"ablation_seeds", ev.ablation_seeds}};
  return j;
}

FolkConfig config_from_json(const nlohmann::json& j) {
  FolkConfig c;
  ObjectReader root(j, "");
  for (const auto& key : required_keys()) {
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot), leaf = key.substr(dot + 1);
    if (!j.contains(sec) || !j.at(sec).is_object() || !j.at(sec).contains(leaf)) {
      throw ConfigError(key, "required key is missing");
    }
  }
  section(root, "model", [&](ObjectReader& m) {
    section(m, "encoder", [&](ObjectReader& r) {
      auto& e = c.model.encoder;
      std::string arch = to_string(e.arch);
      r.field("arch", arch);
      e.arch = parse_arch(arch);
      r.field("image_size", e.image_size);
      r.field("in_channels", e.in_channels);
      r.field("patch_size", e.patch_size);
      r.field("embed_dim", e.embed_dim);
      r.field("depth", e.depth);
      r.field("num_heads", e.num_heads);
      r.field("mlp_ratio", e.mlp_ratio);
      r.field("cnn_channels", e.cnn_channels);
    });
    section(m, "heads", [&](ObjectReader& r) {
      r.field("proj_hidden_dim", c.model.heads.proj_hidden_dim);
      r.field("proj_out_dim", c.model.heads.proj_out_dim);
    });
  });
  section(root, "filter", [&](ObjectReader& r) {
    auto& f = c.filter;
    std::string kind = filters::to_string(f.kind);
    r.field("kind", kind);
    try {
      f.kind = filters::parse_filter_kind(kind);
    } catch (const ConfigError& e) {
      throw ConfigError("filter.kind", e.what());
    }
    r.field("rate_set", f.rate_set);
    r.field("com_prob", f.com_prob);
    r.field("radius", f.radius);
    r.field("low_prob", f.low_prob);
    section(r, "baseline", [&](ObjectReader& b) {
      auto& p = f.baseline;
      b.field("token_count", p.token_count);
      b.field("token_side", p.token_side);
      b.field("circle_count", p.circle_count);
      b.field("circle_min_radius", p.circle_min_radius);
      b.field("circle_max_radius", p.circle_max_radius);
      b.field("gabor_count", p.gabor_count);
      b.field("gabor_sigma", p.gabor_sigma);
      b.field("gabor_level", p.gabor_level);
      b.field("gabor_min_freq", p.gabor_min_freq);
      b.field("gabor_max_freq", p.gabor_max_freq);
    });
  });
  section(root, "augment", [&](ObjectReader& r) {
    auto& a = c.augment;
    r.field("crop_size", a.crop_size);
    r.field("scale_min", a.scale_min);
    r.field("scale_max", a.scale_max);
    r.field("ratio_min", a.ratio_min);
    r.field("ratio_max", a.ratio_max);
    r.field("flip_prob", a.flip_prob);
    r.field("color_jitter", a.color_jitter);
    r.field("mean", a.mean);
    r.field("std", a.stddev);
  });
  section(root, "distill", [&](ObjectReader& r) {
    auto& d = c.distill;
    r.field("tau_s", d.tau_s);
    r.field("tau_t", d.tau_t);
    r.field("center_momentum", d.center_momentum);
    r.field("ema_base", d.ema_base);
    std::string sched = d.ema_cosine ? "cosine" : "constant";
    r.field("ema_schedule", sched);
    if (sched != "cosine" && sched != "constant") throw ConfigError("distill.ema_schedule", "expected cosine or constant");
    d.ema_cosine = sched == "cosine";
    r.field("alpha", d.alpha);
    std::string norm = d.mfm_norm == MfmNorm::Mean ? "mean" : "sum";
    r.field("mfm_norm", norm);
    if (norm != "mean" && norm != "sum") throw ConfigError("distill.mfm_norm", "expected mean or sum");
    d.mfm_norm = norm == "mean" ? MfmNorm::Mean : MfmNorm::Sum;
  });
  section(root, "trainer", [&](ObjectReader& r) {
    auto& t = c.trainer;
    r.field("epochs", t.epochs);
    r.field("batch_size", t.batch_size);
    r.field("base_lr", t.base_lr);
    r.field("warmup_epochs", t.warmup_epochs);
    r.field("weight_decay", t.weight_decay);
    std::vector<double> betas{t.beta1, t.beta2};
    r.field("betas", betas);
    if (betas.size() != 2) throw ConfigError("trainer.betas", "expected [beta1, beta2]");
    t.beta1 = betas[0];
    t.beta2 = betas[1];
    r.field("adam_eps", t.adam_eps);
    r.field("grad_clip_norm", t.grad_clip_norm);
    r.field("world_size", t.world_size);
    r.field("seed", t.seed);
    r.field("schedule", t.schedule);
    r.field("wd_exclude", t.wd_exclude);
    r.field("checkpoint_every", t.checkpoint_every);
    r.field("max_steps", t.max_steps);
  });
  section(root, "data", [&](ObjectReader& r) {
    r.field("source", c.data.source);
    r.field("train_per_class", c.data.train_per_class);
    r.field("test_per_class", c.data.test_per_class);
    r.field("seed", c.data.seed);
    r.field("num_classes", c.data.num_classes);
  });
  section(root, "io", [&](ObjectReader& r) {
    r.field("out", c.io.out);
    r.field("metrics", c.io.metrics);
    r.field("results", c.io.results);
    r.field("ckpt", c.io.ckpt);
    r.field("resume", c.io.resume);
    r.field("input", c.io.input);
    r.field("out_dir", c.io.out_dir);
    r.field("workers", c.io.workers);
    r.field("deterministic", c.io.deterministic);
  });
  section(root, "eval", [&](ObjectReader& r) {
    auto& ev = c.eval;
    r.field("probe_epochs", ev.probe_epochs);
    r.field("probe_lr", ev.probe_lr);
    r.field("probe_batch_size", ev.probe_batch_size);
    r.field("fewshot_fraction", ev.fewshot_fraction);
    r.field("fewshot_blr", ev.fewshot_blr);
    r.field("fewshot_warmup", ev.fewshot_warmup);
    r.field("fewshot_epochs", ev.fewshot_epochs);
    r.field("noise_n", ev.noise_n);
    r.field("ablation_grid", ev.ablation_grid);
    r.field("ablation_seeds", ev.ablation_seeds);
  });
  root.finish();
  validate(c);
  return c;
}

FolkConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config '") + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace folk
