// folk: masking visualisation, pretraining, evaluation, checkpoint
// inspection and gradient checks.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 numerical failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "folk/augment.hpp"
#include "folk/checkpoint.hpp"
#include "folk/config.hpp"
#include "folk/dataset.hpp"
#include "folk/error.hpp"
#include "folk/evalkit.hpp"
#include "folk/gradcheck_bridge.hpp"
#include "folk/imaging.hpp"
#include "folk/spectral.hpp"
#include "folk/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0, kUsage = 1, kNumerical = 2;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  bool deterministic = false;
  int workers = 1;
  CLI::Option* workers_opt = nullptr;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file (default: $FOLK_CONFIG, else built-in defaults)");
  c.seed_opt = app->add_option("--seed", c.seed, "Seed for all randomness [config: trainer.seed]");
  app->add_flag("--deterministic", c.deterministic, "Single worker, fixed reduction order [config: io.deterministic]");
  c.workers_opt = app->add_option("--workers", c.workers, "View-preparation threads [config: io.workers]")
                      ->check(CLI::PositiveNumber);
}

folk::FolkConfig load_base(const Common& c) {
  std::string path = c.config;
  if (path.empty()) {
    if (const char* env = std::getenv("FOLK_CONFIG")) path = env;
  }
  folk::FolkConfig cfg = path.empty() ? folk::FolkConfig{} : folk::load_config(path);
  if (c.seed_opt->count()) cfg.trainer.seed = c.seed;
  if (c.deterministic) cfg.io.deterministic = true;
  if (c.workers_opt->count()) cfg.io.workers = c.workers;
  if (cfg.io.deterministic) cfg.io.workers = 1;
  return cfg;
}

// Flag > config > system entropy; a drawn seed is reported.
std::uint64_t resolve_seed(folk::FolkConfig& cfg) {
  if (!cfg.trainer.seed) {
    cfg.trainer.seed = folk::entropy_seed();
    std::cout << "seed: " << *cfg.trainer.seed << " (drawn from system entropy)\n";
  }
  return *cfg.trainer.seed;
}

template <typename T>
void set_if(CLI::Option* opt, T& dst, const T& value) {
  if (opt->count()) dst = value;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw folk::Error("cannot write '" + path + "'");
  return f;
}

// ---- mask -----------------------------------------------------------------

struct MaskArgs {
  Common common;
  std::string input, filter = "com", out = ".";
  double rate = 0, radius = 0;
  CLI::Option *input_opt, *filter_opt, *rate_opt, *radius_opt, *out_opt;
};

int run_mask(MaskArgs& a) {
  using namespace folk;
  FolkConfig cfg = load_base(a.common);
  set_if(a.input_opt, cfg.io.input, a.input);
  set_if(a.out_opt, cfg.io.out_dir, a.out);
  if (cfg.io.input.empty()) throw ConfigError("io.input", "no input image (use --input)");
  std::string name = a.filter_opt->count() ? a.filter : filters::to_string(cfg.filter.kind);
  filters::FilterSpec spec = cfg.filter;
  spec.kind = filters::parse_filter_kind(name);
  if (a.rate_opt->count()) {
    if (!(a.rate > 0.0 && a.rate < 1.0)) throw InvalidArgument("--rate must lie in (0, 1), got " + std::to_string(a.rate));
    spec.rate_set = {a.rate};
  }
  if (a.radius_opt->count()) {
    if (!(a.radius >= 0.0) || !std::isfinite(a.radius)) throw InvalidArgument("--radius must be a non-negative number");
    spec.radius = a.radius;
  }
  // The named filter is applied as asked: no Com/RCom or low/high coin flip.
  if (spec.kind == filters::FilterKind::Com) spec.com_prob = 1.0;
  if (spec.kind == filters::FilterKind::RCom) spec.com_prob = 0.0;
  if (spec.kind == filters::FilterKind::LowPass) spec.low_prob = 1.0;
  if (spec.kind == filters::FilterKind::HighPass) spec.low_prob = 0.0;
  filters::validate(spec);
  const std::uint64_t seed = resolve_seed(cfg);

  const imaging::Image img = imaging::read_image(cfg.io.input);
  const spectral::RealGrid gray = imaging::to_grayscale(img);
  Rng rng = Rng::substream(seed, {0x3a5cull});
  const filters::MaskDraw draw = filters::sample_filter(gray, spec, rng);
  double residual = 0.0;
  const imaging::Image masked = imaging::apply_frequency_mask(img, draw.mask, &residual);

  const fs::path dir(cfg.io.out_dir);
  fs::create_directories(dir);
  imaging::write_image(masked, dir / "masked.ppm");
  imaging::write_grid_pgm(filters::to_grid(draw.mask, true), dir / "mask.pgm", 0.0, 1.0);
  spectral::RealGrid logmag = spectral::magnitude(spectral::fftshift(spectral::fft2(gray)));
  double hi = 0.0;
  for (auto& v : logmag.data) hi = std::max(hi, v = std::log1p(v));
  imaging::write_grid_pgm(logmag, dir / "spectrum_logmag.pgm", 0.0, hi > 0.0 ? hi : 1.0);

  std::cout << "filter " << filters::to_string(draw.applied);
  if (draw.rate) std::cout << " rate " << *draw.rate;
  std::cout << " kept " << draw.mask.popcount() << "/" << draw.mask.size() << " bins; wrote " << (dir / "masked.ppm").string()
            << ", mask.pgm, spectrum_logmag.pgm\n";
  return kOk;
}

// ---- pretrain -------------------------------------------------------------

struct PretrainArgs {
  Common common;
  std::string out, metrics, resume, data;
  long long max_steps = -1;
  CLI::Option *out_opt, *metrics_opt, *resume_opt, *steps_opt, *data_opt;
};

int run_pretrain(PretrainArgs& a) {
  using namespace folk;
  FolkConfig cfg = load_base(a.common);
  set_if(a.out_opt, cfg.io.out, a.out);
  set_if(a.metrics_opt, cfg.io.metrics, a.metrics);
  set_if(a.resume_opt, cfg.io.resume, a.resume);
  set_if(a.steps_opt, cfg.trainer.max_steps, a.max_steps);
  set_if(a.data_opt, cfg.data.source, a.data);
  validate(cfg);

  trainer::TrainState state;
  if (!cfg.io.resume.empty()) {
    auto loaded = checkpoint::load(cfg.io.resume);
    const FolkConfig saved = loaded.config;
    if (to_json(saved)["model"] != to_json(cfg)["model"]) {
      throw ConfigError("io.resume", "checkpoint model config differs from the run config");
    }
    state = std::move(loaded.state);
    cfg.trainer.seed = state.seed;
    std::cout << "resuming from step " << state.step << "\n";
  } else {
    state = trainer::init_state(cfg, resolve_seed(cfg));
  }
  const auto [train_set, test_set] = data::load(cfg.data, cfg.model.encoder.in_channels, cfg.model.encoder.image_size);
  (void)test_set;

  std::ofstream metrics;
  trainer::TrainHooks hooks;
  if (!cfg.io.metrics.empty()) {
    metrics = open_out(cfg.io.metrics);
    hooks.metrics = &metrics;
  }
  hooks.checkpoint_path = cfg.io.out;
  const auto sch = trainer::make_schedule(cfg, train_set.size());
  hooks.on_step = [&](const trainer::StepMetrics& m, const trainer::TrainState&) {
    if (m.step % sch.steps_per_epoch == 0 || m.step == sch.total_steps) {
      std::cout << "epoch " << std::setw(3) << m.epoch << " step " << std::setw(6) << m.step << " loss "
                << m.loss_tot << " (dis " << m.loss_dis << ", mfm " << m.loss_mfm << ") lr " << m.lr << "\n";
    }
  };
  try {
    trainer::train(cfg, train_set, state, hooks);
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort at batch " << e.batch_index() << ": " << e.what() << "\n";
    std::cerr << "pre-step state written to " << cfg.io.out << ".abort\n";
    return kNumerical;
  }
  checkpoint::save(cfg.io.out, state, cfg);
  std::cout << "wrote " << cfg.io.out << " at step " << state.step << "\n";
  return kOk;
}

// ---- evaluation commands --------------------------------------------------

struct EvalArgs {
  Common common;
  std::string ckpt, data, out, metrics;
  bool random_init = false;
  int epochs = 0, n = 0;
  double lr = 0, fraction = 0;
  std::vector<double> blr, warmup;
  std::string grid;
  std::vector<std::uint64_t> seeds;
  CLI::Option *ckpt_opt = nullptr, *data_opt = nullptr, *out_opt = nullptr, *metrics_opt = nullptr;
  CLI::Option *epochs_opt = nullptr, *lr_opt = nullptr, *n_opt = nullptr, *fraction_opt = nullptr;
  CLI::Option *blr_opt = nullptr, *warmup_opt = nullptr, *grid_opt = nullptr, *seeds_opt = nullptr;
};

void add_eval_io(CLI::App* app, EvalArgs& a, bool ckpt_required) {
  add_common(app, a.common);
  a.ckpt_opt = app->add_option("--ckpt", a.ckpt,
                               std::string("Checkpoint to evaluate") + (ckpt_required ? "" : " (optional)") +
                                   " [config: io.ckpt]");
  a.data_opt = app->add_option("--data", a.data, "'synthetic' or a directory with train/ and test/ [config: data.source]");
  a.out_opt = app->add_option("--out", a.out, "CSV results file [config: io.results]");
  a.metrics_opt = app->add_option("--metrics", a.metrics, "JSON-lines results file [config: io.metrics]");
}

struct EvalContext {
  folk::FolkConfig cfg;  // model and distill settings from the checkpoint, the rest from the command line
  folk::trainer::TrainState state;
  folk::data::Dataset train, test;
};

EvalContext open_eval(EvalArgs& a, bool need_ckpt) {
  using namespace folk;
  FolkConfig cli = load_base(a.common);
  set_if(a.ckpt_opt, cli.io.ckpt, a.ckpt);
  set_if(a.data_opt, cli.data.source, a.data);
  set_if(a.out_opt, cli.io.results, a.out);
  set_if(a.metrics_opt, cli.io.metrics, a.metrics);
  EvalContext ctx;
  ctx.cfg = cli;
  if (!cli.io.ckpt.empty()) {
    auto loaded = checkpoint::load(cli.io.ckpt);
    ctx.cfg.model = loaded.config.model;
    ctx.cfg.augment = loaded.config.augment;
    ctx.cfg.distill = loaded.config.distill;
    ctx.cfg.filter = loaded.config.filter;
    ctx.state = std::move(loaded.state);
  } else if (need_ckpt) {
    throw ConfigError("io.ckpt", "no checkpoint given (use --ckpt)");
  }
  validate(ctx.cfg);
  auto [tr, te] = data::load(ctx.cfg.data, ctx.cfg.model.encoder.in_channels, ctx.cfg.model.encoder.image_size);
  ctx.train = std::move(tr);
  ctx.test = std::move(te);
  return ctx;
}

void emit_jsonl(const folk::FolkConfig& cfg, const json& j) {
  if (cfg.io.metrics.empty()) return;
  std::ofstream f(cfg.io.metrics, std::ios::app);
  if (!f) throw folk::Error("cannot write '" + cfg.io.metrics + "'");
  f << j.dump() << '\n';
}

int run_probe(EvalArgs& a) {
  using namespace folk;
  EvalContext ctx = open_eval(a, !a.random_init);
  auto& cfg = ctx.cfg;
  set_if(a.epochs_opt, cfg.eval.probe_epochs, a.epochs);
  set_if(a.lr_opt, cfg.eval.probe_lr, a.lr);
  validate(cfg);
  const std::uint64_t seed = resolve_seed(cfg);
  const nets::ParamTree params = a.random_init ? nets::init_params(cfg.model, seed) : ctx.state.student;
  evalkit::ProbeOptions po;
  po.epochs = cfg.eval.probe_epochs;
  po.lr = cfg.eval.probe_lr;
  po.batch_size = cfg.eval.probe_batch_size;
  po.seed = seed;
  const auto r = evalkit::linear_probe(params, cfg, ctx.train, ctx.test, po);
  std::cout << "top1 " << r.top1 << " (" << ctx.test.size() << " test images, " << po.epochs << " epochs)\n";
  if (!cfg.io.results.empty()) {
    auto f = open_out(cfg.io.results);
    f << "top1,epochs,train_size,test_size";
    for (int k = 0; k < ctx.train.num_classes; ++k) f << ",acc_class" << k;
    f << "\n" << r.top1 << "," << po.epochs << "," << ctx.train.size() << "," << ctx.test.size();
    for (double v : r.per_class) f << "," << v;
    f << "\n";
  }
  emit_jsonl(cfg, {{"harness", "probe"}, {"top1", r.top1}, {"per_class", r.per_class}, {"confusion", r.confusion},
                   {"loss_curve", r.loss_curve}, {"config", r.config}, {"random_init", a.random_init}});
  return kOk;
}

int run_fewshot(EvalArgs& a) {
  using namespace folk;
  EvalContext ctx = open_eval(a, true);
  auto& cfg = ctx.cfg;
  set_if(a.fraction_opt, cfg.eval.fewshot_fraction, a.fraction);
  set_if(a.blr_opt, cfg.eval.fewshot_blr, a.blr);
  set_if(a.warmup_opt, cfg.eval.fewshot_warmup, a.warmup);
  set_if(a.epochs_opt, cfg.eval.fewshot_epochs, a.epochs);
  validate(cfg);
  evalkit::FewShotOptions fo;
  fo.fraction = cfg.eval.fewshot_fraction;
  fo.blr = cfg.eval.fewshot_blr;
  fo.warmup_epochs = cfg.eval.fewshot_warmup;
  fo.epochs = cfg.eval.fewshot_epochs;
  fo.seed = resolve_seed(cfg);
  fo.weight_decay = cfg.trainer.weight_decay;
  const auto r = evalkit::few_shot_finetune(ctx.state.student, cfg, ctx.train, ctx.test, fo);
  std::cout << "subset " << r.subset_size << " images\n";
  for (const auto& s : r.settings) std::cout << "blr " << s.blr << " warmup " << s.warmup_epochs << " top1 " << s.top1 << "\n";
  std::cout << "AVG " << r.avg << " MAX " << r.max << "\n";
  if (!cfg.io.results.empty()) {
    auto f = open_out(cfg.io.results);
    f << "blr,warmup_epochs,top1\n";
    for (const auto& s : r.settings) f << s.blr << "," << s.warmup_epochs << "," << s.top1 << "\n";
    f << "AVG,," << r.avg << "\nMAX,," << r.max << "\n";
  }
  json settings = json::array();
  for (const auto& s : r.settings) settings.push_back({{"blr", s.blr}, {"warmup_epochs", s.warmup_epochs}, {"top1", s.top1}});
  emit_jsonl(cfg, {{"harness", "fewshot"}, {"fraction", fo.fraction}, {"subset_size", r.subset_size},
                   {"settings", settings}, {"avg", r.avg}, {"max", r.max}});
  return kOk;
}

int run_noise(EvalArgs& a) {
  using namespace folk;
  EvalContext ctx = open_eval(a, true);
  auto& cfg = ctx.cfg;
  set_if(a.n_opt, cfg.eval.noise_n, a.n);
  validate(cfg);
  const std::uint64_t seed = resolve_seed(cfg);
  const auto& pool = ctx.test.size() >= static_cast<std::size_t>(cfg.eval.noise_n) ? ctx.test : ctx.train;
  const auto rows = evalkit::noise_robustness(ctx.state.student, cfg, pool.images,
                                              static_cast<std::size_t>(cfg.eval.noise_n), seed);
  const double clean = rows.front().mean_loss;
  std::ostringstream csv;
  csv << "corruption,mean_mfm_loss,relative_to_clean,count\n";
  for (const auto& r : rows) {
    csv << imaging::to_string(r.corruption) << "," << r.mean_loss << "," << r.mean_loss / clean << "," << r.count << "\n";
    emit_jsonl(cfg, {{"harness", "eval-noise"}, {"corruption", imaging::to_string(r.corruption)},
                     {"mean_mfm_loss", r.mean_loss}, {"count", r.count}});
  }
  std::cout << csv.str();
  if (!cfg.io.results.empty()) open_out(cfg.io.results) << csv.str();
  return kOk;
}

int run_ablate(EvalArgs& a) {
  using namespace folk;
  EvalContext ctx = open_eval(a, false);
  auto& cfg = ctx.cfg;
  set_if(a.grid_opt, cfg.eval.ablation_grid, a.grid);
  set_if(a.seeds_opt, cfg.eval.ablation_seeds, a.seeds);
  set_if(a.epochs_opt, cfg.eval.probe_epochs, a.epochs);
  validate(cfg);
  const auto grid = evalkit::named_grid(cfg.eval.ablation_grid, cfg);
  evalkit::ProbeOptions po;
  po.epochs = cfg.eval.probe_epochs;
  po.lr = cfg.eval.probe_lr;
  po.batch_size = cfg.eval.probe_batch_size;
  const auto rows = evalkit::filter_ablation(cfg, grid, cfg.eval.ablation_seeds, ctx.train, ctx.test, po,
                                             [](const std::string& s) { std::cerr << s << "\n"; });
  std::ostringstream csv;
  csv << "rank,filter,median_top1";
  for (std::size_t i = 0; i < cfg.eval.ablation_seeds.size(); ++i) csv << ",top1_seed" << cfg.eval.ablation_seeds[i];
  csv << "\n";
  for (const auto& r : rows) {
    csv << r.rank << "," << r.name << "," << r.median_top1;
    for (double v : r.top1_per_seed) csv << "," << v;
    csv << "\n";
    emit_jsonl(cfg, {{"harness", "ablate-filters"}, {"grid", cfg.eval.ablation_grid}, {"filter", r.name},
                     {"rank", r.rank}, {"median_top1", r.median_top1}, {"top1_per_seed", r.top1_per_seed}});
  }
  std::cout << csv.str();
  if (!cfg.io.results.empty()) open_out(cfg.io.results) << csv.str();
  return kOk;
}

// ---- inspect / gradcheck --------------------------------------------------

int run_inspect(const std::string& path) {
  using namespace folk;
  json m = checkpoint::read_manifest(path);
  json sections = m["sections"];
  m.erase("sections");
  std::cout << m.dump(2) << "\n";
  for (const auto& sec : sections) {
    std::cout << "[" << sec["name"].get<std::string>() << "]\n";
    for (const auto& e : sec["entries"]) std::cout << "  " << e["name"].get<std::string>() << " " << e["shape"].dump() << "\n";
  }
  return kOk;
}

int run_gradcheck_cmd(const std::string& ops, std::uint64_t seed) {
  const auto reports = folk::run_gradcheck(ops, seed);
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(20) << r.name << " max_rel_err "
              << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat << " ("
              << r.checked << " coords)\n";
    ok = ok && r.passed;
  }
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"folk: frequency-masked self-distillation toolkit"};
  app.require_subcommand(1);

  MaskArgs mask;
  auto* mask_cmd = app.add_subcommand("mask", "Apply one frequency filter to an image and write the panels");
  add_common(mask_cmd, mask.common);
  mask.input_opt = mask_cmd->add_option("--input", mask.input, "Input PPM/PGM image [config: io.input]");
  mask.filter_opt = mask_cmd->add_option("--filter", mask.filter, "com|rcom|low|high|gabor|token|circle [config: filter.kind]")
                        ->check(CLI::IsMember({"com", "rcom", "low", "high", "gabor", "token", "circle"}));
  mask.rate_opt = mask_cmd->add_option("--rate", mask.rate, "Com/RCom retention rate in (0, 1) [config: filter.rate_set]");
  mask.radius_opt = mask_cmd->add_option("--radius", mask.radius, "Low/high-pass radius in bins [config: filter.radius]");
  mask.rate_opt->excludes(mask.radius_opt);
  mask.out_opt = mask_cmd->add_option("--out", mask.out, "Output directory [config: io.out_dir]");

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Run pretraining and write a checkpoint");
  add_common(pre_cmd, pre.common);
  pre.out_opt = pre_cmd->add_option("--out", pre.out, "Checkpoint path [config: io.out]");
  pre.metrics_opt = pre_cmd->add_option("--metrics", pre.metrics, "JSON-lines metrics path [config: io.metrics]");
  pre.resume_opt = pre_cmd->add_option("--resume", pre.resume, "Continue from this checkpoint [config: io.resume]");
  pre.steps_opt = pre_cmd->add_option("--max-steps", pre.max_steps, "Stop after this many steps in total, -1 = full schedule [config: trainer.max_steps]");
  pre.data_opt = pre_cmd->add_option("--data", pre.data, "'synthetic' or a directory with train/ [config: data.source]");

  EvalArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "Linear probe on frozen encoder features");
  add_eval_io(probe_cmd, probe, true);
  probe.epochs_opt = probe_cmd->add_option("--epochs", probe.epochs, "Probe epochs [config: eval.probe_epochs]");
  probe.lr_opt = probe_cmd->add_option("--lr", probe.lr, "Probe learning rate [config: eval.probe_lr]");
  probe_cmd->add_flag("--random-init", probe.random_init, "Probe a freshly initialised encoder instead [config: none, baseline only]");

  EvalArgs few;
  auto* few_cmd = app.add_subcommand("fewshot", "Fine-tune on a class-balanced subset over a (blr, warmup) grid");
  add_eval_io(few_cmd, few, true);
  few.fraction_opt = few_cmd->add_option("--fraction", few.fraction, "Labelled fraction in (0, 1] [config: eval.fewshot_fraction]");
  few.blr_opt = few_cmd->add_option("--blr", few.blr, "Base learning rates [config: eval.fewshot_blr]");
  few.warmup_opt = few_cmd->add_option("--warmup", few.warmup, "Warmup epochs [config: eval.fewshot_warmup]");
  few.epochs_opt = few_cmd->add_option("--epochs", few.epochs, "Fine-tune epochs [config: eval.fewshot_epochs]");

  EvalArgs noise;
  auto* noise_cmd = app.add_subcommand("eval-noise", "Mean reconstruction loss under image corruptions");
  add_eval_io(noise_cmd, noise, true);
  noise.n_opt = noise_cmd->add_option("--n", noise.n, "Number of images [config: eval.noise_n]");

  EvalArgs abl;
  auto* abl_cmd = app.add_subcommand("ablate-filters", "Pretrain and probe once per filter family and seed");
  add_eval_io(abl_cmd, abl, false);
  abl.grid_opt = abl_cmd->add_option("--grid", abl.grid, "default|com-prob|rates|alpha [config: eval.ablation_grid]");
  abl.seeds_opt = abl_cmd->add_option("--seeds", abl.seeds, "Seeds shared by every row [config: eval.ablation_seeds]");
  abl.epochs_opt = abl_cmd->add_option("--probe-epochs", abl.epochs, "Probe epochs [config: eval.probe_epochs]");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint manifest and parameter shapes");
  inspect_cmd->add_option("--ckpt", inspect_path, "Checkpoint [config: io.ckpt]")->required();

  std::string ops = "all";
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every autodiff op and the full loss");
  gc_cmd->add_option("--ops", ops, "all or one op name [config: none, developer tool]");
  gc_cmd->add_option("--seed", gc_seed, "Seed for the random inputs [config: trainer.seed]");

  auto* defaults_cmd = app.add_subcommand("default-config", "Print the built-in configuration as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*mask_cmd) return run_mask(mask);
    if (*pre_cmd) return run_pretrain(pre);
    if (*probe_cmd) return run_probe(probe);
    if (*few_cmd) return run_fewshot(few);
    if (*noise_cmd) return run_noise(noise);
    if (*abl_cmd) return run_ablate(abl);
    if (*inspect_cmd) return run_inspect(inspect_path);
    if (*gc_cmd) return run_gradcheck_cmd(ops, gc_seed);
    if (*defaults_cmd) {
      std::cout << folk::to_json(folk::FolkConfig{}).dump(2) << "\n";
      return kOk;
    }
  } catch (const folk::NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const folk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
