#include "folk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <thread>

#include "folk/augment.hpp"
#include "folk/checkpoint.hpp"
#include "folk/distill.hpp"
#include "folk/error.hpp"
#include "folk/rng.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace trainer {

using ad::Tensor;

double scaled_lr(double base_lr, int batch_size, int world_size) {
  return base_lr * batch_size * (static_cast<double>(world_size) / 512.0);
}

double lr_at(long long step, long long total_steps, long long warmup_steps, double peak) {
  if (warmup_steps > total_steps) throw InvalidArgument("lr_at: warmup_steps exceeds total_steps");
  if (step < 0 || step > total_steps) throw InvalidArgument("lr_at: step outside [0, total_steps]");
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const long long decay = total_steps - warmup_steps;
  if (decay == 0) return peak;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState adam_init(const nets::ParamTree& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.add(params.names()[i], Tensor::zeros(params.tensors()[i].shape()));
    s.v.add(params.names()[i], Tensor::zeros(params.tensors()[i].shape()));
  }
  s.steps.assign(params.size(), 0);
  return s;
}

void adamw_step(nets::ParamTree& params, AdamState& state, const AdamWOptions& opt) {
  if (!state.m.congruent(params) || !state.v.congruent(params) || state.steps.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state does not match the parameter tree");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.tensors()[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    for (real x : g) {
      if (!std::isfinite(x)) throw NumericalAbort(-1, "non-finite gradient in '" + params.names()[i] + "'");
    }
    const std::string& name = params.names()[i];
    const bool decay = std::none_of(opt.wd_exclude.begin(), opt.wd_exclude.end(),
                                    [&](const std::string& s) { return name.find(s) != std::string::npos; });
    const long long t = ++state.steps[i];
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
    const real b1 = static_cast<real>(opt.beta1), b2 = static_cast<real>(opt.beta2);
    const real shrink = static_cast<real>(decay ? 1.0 - opt.lr * opt.weight_decay : 1.0);
    const real step = static_cast<real>(opt.lr / bc1);
    const real inv_sqrt_bc2 = static_cast<real>(1.0 / std::sqrt(bc2));
    const real eps = static_cast<real>(opt.eps);
    auto pd = p.data();
    auto m = state.m.tensors()[i].data();
    auto v = state.v.tensors()[i].data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      m[k] = b1 * m[k] + (1 - b1) * g[k];
      v[k] = b2 * v[k] + (1 - b2) * g[k] * g[k];
      pd[k] *= shrink;
      pd[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
}

double global_grad_norm(const nets::ParamTree& params) {
  double s = 0.0;
  for (const auto& t : params.tensors())
    if (t.has_grad())
      for (real g : t.grad()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

double clip_grad_norm(nets::ParamTree& params, double max_norm, double* norm_out) {
  if (!(max_norm > 0.0)) throw InvalidArgument("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm_out) *norm_out = norm;
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& t : params.tensors())
    if (t.has_grad())
      for (real& g : t.grad()) g = static_cast<real>(g * factor);
  return factor;
}

TrainState init_state(const FolkConfig& cfg, std::uint64_t seed) {
  TrainState s;
  s.seed = seed;
  s.student = nets::init_params(cfg.model, seed);
  s.teacher = nets::teacher_from(s.student);
  s.adam = adam_init(s.student);
  s.center = Tensor::zeros({cfg.model.heads.proj_out_dim});
  return s;
}

nlohmann::json to_json(const StepMetrics& m) {
  return {{"step", m.step},         {"epoch", m.epoch},   {"loss_tot", m.loss_tot},
          {"loss_dis", m.loss_dis}, {"loss_mfm", m.loss_mfm}, {"lr", m.lr},
          {"lambda", m.lambda},     {"grad_norm", m.grad_norm}};
}

Schedule make_schedule(const FolkConfig& cfg, std::size_t n) {
  if (n == 0) throw InvalidArgument("train: dataset is empty");
  const auto& t = cfg.trainer;
  Schedule s;
  s.steps_per_epoch = std::max<long long>(1, static_cast<long long>(n) / t.batch_size);
  s.total_steps = s.steps_per_epoch * t.epochs;
  s.warmup_steps = std::llround(t.warmup_epochs * static_cast<double>(s.steps_per_epoch));
  s.warmup_steps = std::min(s.warmup_steps, s.total_steps);
  s.peak_lr = scaled_lr(t.base_lr, t.batch_size, t.world_size);
  return s;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, long long epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::substream(seed, {0x0dec0ull, static_cast<std::uint64_t>(epoch)});
  // Fisher-Yates with our own index draw so the order is library-independent.
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

namespace {

std::vector<augment::ViewPair> prepare_views(const FolkConfig& cfg, const data::Dataset& ds,
                                             const std::vector<std::size_t>& batch, std::uint64_t seed,
                                             long long epoch) {
  std::vector<augment::ViewPair> views(batch.size());
  auto work = [&](std::size_t i) {
    const augment::ViewKey key{seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch[i])};
    views[i] = augment::make_views(ds.images.at(batch[i]), cfg.augment, cfg.filter, key);
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.io.workers), batch.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
    return views;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < batch.size(); i += workers) work(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return views;
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

PreparedBatch prepare_batch(const FolkConfig& cfg, const data::Dataset& ds, const std::vector<std::size_t>& batch,
                            std::uint64_t seed, long long epoch) {
  const auto views = prepare_views(cfg, ds, batch, seed, epoch);
  std::vector<imaging::Image> clean, masked;
  PreparedBatch out;
  for (const auto& vp : views) clean.push_back(vp.u);
  for (const auto& vp : views) clean.push_back(vp.v);
  for (const auto& vp : views) masked.push_back(vp.u_masked);
  for (const auto& vp : views) masked.push_back(vp.v_masked);
  for (const auto& vp : views) out.masks_u.push_back(vp.mask_u);
  for (const auto& vp : views) out.masks_v.push_back(vp.mask_v);
  out.teacher_in = nets::to_batch(clean);
  out.student_in = nets::to_batch(masked);
  return out;
}

Losses student_losses(const FolkConfig& cfg, const nets::ParamTree& student, const PreparedBatch& pb,
                      const Tensor& pt) {
  const auto& d = cfg.distill;
  const std::int64_t B = pb.student_in.dim(0) / 2;
  const auto enc = nets::encode(pb.student_in, student, cfg.model.encoder);
  const Tensor recon = nets::mfm_head(enc.tokens, student, cfg.model.encoder);
  Losses l;
  l.mfm_u = distill::mfm_loss(ad::slice(recon, 0, 0, B), ad::slice(pb.teacher_in, 0, 0, B), pb.masks_u, d.mfm_norm);
  l.mfm_v =
      distill::mfm_loss(ad::slice(recon, 0, B, 2 * B), ad::slice(pb.teacher_in, 0, B, 2 * B), pb.masks_v, d.mfm_norm);
  l.dis = Tensor::scalar(0);
  if (d.alpha > 0.0) {
    const Tensor ps = distill::student_probs(nets::proj_head(enc.cls, student), static_cast<real>(d.tau_s));
    l.dis = distill::distillation_loss(ad::slice(pt, 0, 0, B), ad::slice(pt, 0, B, 2 * B), ad::slice(ps, 0, 0, B),
                                       ad::slice(ps, 0, B, 2 * B));
  }
  l.total = distill::total_loss(l.dis, l.mfm_u, l.mfm_v, static_cast<real>(d.alpha));
  return l;
}

StepMetrics train_step(const FolkConfig& cfg, const data::Dataset& ds, TrainState& state,
                       const std::vector<std::size_t>& batch, const Schedule& schedule) {
  const auto& d = cfg.distill;
  const long long epoch = state.step / schedule.steps_per_epoch;
  const PreparedBatch pb = prepare_batch(cfg, ds, batch, state.seed, epoch);
  const bool distill_on = d.alpha > 0.0;

  Tensor teacher_logits, pt;
  if (distill_on) {
    ad::NoGradGuard guard;
    const auto enc = nets::encode(pb.teacher_in, state.teacher, cfg.model.encoder);
    teacher_logits = nets::proj_head(enc.cls, state.teacher);
    pt = distill::teacher_probs(teacher_logits, state.center, static_cast<real>(d.tau_t));
  }

  for (auto& t : state.student.tensors()) t.clear_grad();
  ad::TapeScope scope;
  const Losses l = student_losses(cfg, state.student, pb, pt);
  const Tensor& total = l.total;
  const Tensor& dis = l.dis;
  const Tensor& mfm_u = l.mfm_u;
  const Tensor& mfm_v = l.mfm_v;

  StepMetrics m;
  m.step = state.step + 1;
  m.epoch = static_cast<int>(epoch);
  m.loss_tot = total.item();
  m.loss_dis = dis.item();
  m.loss_mfm = 0.5 * (static_cast<double>(mfm_u.item()) + mfm_v.item());
  if (!finite(m.loss_tot) || !finite(m.loss_dis) || !finite(m.loss_mfm)) {
    throw NumericalAbort(state.step, "non-finite loss at batch " + std::to_string(state.step));
  }
  ad::backward(total);

  if (!finite(global_grad_norm(state.student))) {
    throw NumericalAbort(state.step, "non-finite gradient at batch " + std::to_string(state.step));
  }
  clip_grad_norm(state.student, cfg.trainer.grad_clip_norm, &m.grad_norm);

  m.lr = lr_at(state.step, schedule.total_steps, schedule.warmup_steps, schedule.peak_lr);
  AdamWOptions opt;
  opt.lr = m.lr;
  opt.beta1 = cfg.trainer.beta1;
  opt.beta2 = cfg.trainer.beta2;
  opt.eps = cfg.trainer.adam_eps;
  opt.weight_decay = cfg.trainer.weight_decay;
  opt.wd_exclude = cfg.trainer.wd_exclude;
  adamw_step(state.student, state.adam, opt);

  m.lambda = distill::ema_lambda(state.step, schedule.total_steps, d.ema_base, d.ema_cosine);
  distill::ema_update(state.teacher, state.student, m.lambda);
  if (distill_on) distill::center_update(state.center, teacher_logits, d.center_momentum);

  ++state.step;
  state.epoch = state.step / schedule.steps_per_epoch;
  return m;
}

void train(const FolkConfig& cfg, const data::Dataset& ds, TrainState& state, const TrainHooks& hooks) {
  const Schedule sch = make_schedule(cfg, ds.size());
  const auto bs = static_cast<std::size_t>(cfg.trainer.batch_size);
  long long end = sch.total_steps;
  if (cfg.trainer.max_steps >= 0) end = std::min(end, cfg.trainer.max_steps);
  if (hooks.stop_at_step >= 0) end = std::min(end, hooks.stop_at_step);
  std::vector<std::size_t> order;
  long long order_epoch = -1;
  while (state.step < end) {
    const long long epoch = state.step / sch.steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(ds.size(), state.seed, epoch);
      order_epoch = epoch;
    }
    const auto k = static_cast<std::size_t>(state.step % sch.steps_per_epoch);
    const std::size_t first = k * bs, last = std::min(first + bs, ds.size());
    const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(last));
    StepMetrics m;
    TrainState backup;
    const bool keep_backup = !hooks.checkpoint_path.empty();
    if (keep_backup) {
      backup.student = state.student.clone(true);
      backup.teacher = state.teacher.clone(false);
      backup.adam.m = state.adam.m.clone(false);
      backup.adam.v = state.adam.v.clone(false);
      backup.adam.steps = state.adam.steps;
      backup.center = state.center.detach();
      backup.step = state.step;
      backup.epoch = state.epoch;
      backup.seed = state.seed;
    }
    try {
      m = train_step(cfg, ds, state, batch, sch);
    } catch (const NumericalAbort& e) {
      if (keep_backup) checkpoint::save(hooks.checkpoint_path + ".abort", backup, cfg);
      throw NumericalAbort(backup.step, std::string(e.what()) + " (batch index " + std::to_string(backup.step) + ")");
    }
    if (hooks.metrics) *hooks.metrics << to_json(m).dump() << '\n';
    if (hooks.on_step) hooks.on_step(m, state);
    if (!hooks.checkpoint_path.empty() && cfg.trainer.checkpoint_every > 0 &&
        state.step % cfg.trainer.checkpoint_every == 0) {
      checkpoint::save(hooks.checkpoint_path, state, cfg);
    }
  }
  if (hooks.metrics) hooks.metrics->flush();
}

}  // namespace trainer
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
