#pragma once

// Pretraining loop, AdamW, learning-rate schedule and gradient clipping.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "folk/autodiff.hpp"
#include "folk/config.hpp"
#include "folk/dataset.hpp"
#include "folk/nets.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace trainer {

// base_lr * batch_size * world_size / 512
double scaled_lr(double base_lr, int batch_size, int world_size);

// Linear warmup from 0 to peak over warmup_steps, then half-cosine decay
// to 0 at total_steps. Throws InvalidArgument if warmup_steps > total_steps.
double lr_at(long long step, long long total_steps, long long warmup_steps, double peak);

struct AdamState {
  nets::ParamTree m, v;
  std::vector<long long> steps;  // per parameter, for bias correction
};

AdamState adam_init(const nets::ParamTree& params);

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
  // Parameters whose name contains one of these get no weight decay.
  std::vector<std::string> wd_exclude{"bias", "gain", "center"};
};

// Decoupled weight decay, then the bias-corrected Adam update. Parameters
// without a gradient buffer are skipped entirely. Throws NumericalAbort on a
// non-finite gradient.
void adamw_step(nets::ParamTree& params, AdamState& state, const AdamWOptions& opt);

double global_grad_norm(const nets::ParamTree& params);

// Rescales all gradients so their global l2 norm is at most max_norm.
// Returns the factor applied (1 when untouched); `norm_out` receives the
// norm before clipping.
double clip_grad_norm(nets::ParamTree& params, double max_norm, double* norm_out = nullptr);

struct TrainState {
  nets::ParamTree student;
  nets::ParamTree teacher;
  AdamState adam;
  ad::Tensor center;  // [K]
  long long step = 0;   // completed optimisation steps
  long long epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
};

TrainState init_state(const FolkConfig& cfg, std::uint64_t seed);

struct StepMetrics {
  long long step = 0;  // 1-based count of completed steps
  int epoch = 0;
  double loss_tot = 0, loss_dis = 0, loss_mfm = 0;
  double lr = 0, lambda = 0, grad_norm = 0;
};

nlohmann::json to_json(const StepMetrics& m);

struct Schedule {
  long long steps_per_epoch = 0;
  long long total_steps = 0;
  long long warmup_steps = 0;
  double peak_lr = 0;
};

// Batches per epoch are floor(n / batch), or one short batch when n < batch.
Schedule make_schedule(const FolkConfig& cfg, std::size_t dataset_size);

struct TrainHooks {
  std::ostream* metrics = nullptr;  // JSON-lines sink
  std::function<void(const StepMetrics&, const TrainState&)> on_step;
  // Stop once state.step reaches this value; negative runs to the end.
  long long stop_at_step = -1;
  // Destination of periodic checkpoints and of the repro dump on abort.
  std::string checkpoint_path;
};

// Runs from state.step to the end of the schedule (or hooks.stop_at_step).
// A non-finite loss or gradient throws NumericalAbort after writing the
// pre-step state to `<checkpoint_path>.abort` when a path is set.
void train(const FolkConfig& cfg, const data::Dataset& dataset, TrainState& state, const TrainHooks& hooks = {});

// Inputs of one step: teacher_in = [u; v], student_in = [u~; v~].
struct PreparedBatch {
  ad::Tensor teacher_in, student_in;
  std::vector<filters::FrequencyMask> masks_u, masks_v;
};

PreparedBatch prepare_batch(const FolkConfig& cfg, const data::Dataset& dataset,
                            const std::vector<std::size_t>& batch, std::uint64_t seed, long long epoch);

struct Losses {
  ad::Tensor total, dis, mfm_u, mfm_v;
};

// Student side of a step. `pt` holds teacher probabilities for [u; v]; it
// is ignored (and dis is 0) when distill.alpha is 0.
Losses student_losses(const FolkConfig& cfg, const nets::ParamTree& student, const PreparedBatch& batch,
                      const ad::Tensor& pt);

// One optimisation step on the given sample indices; exposed for tests.
StepMetrics train_step(const FolkConfig& cfg, const data::Dataset& dataset, TrainState& state,
                       const std::vector<std::size_t>& batch, const Schedule& schedule);

// Sample order for an epoch; a seeded permutation.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, long long epoch);

}  // namespace trainer
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
