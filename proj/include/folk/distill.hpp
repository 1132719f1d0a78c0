#pragma once

// Losses and the teacher-side state updates.

#include <vector>

#include "folk/autodiff.hpp"
#include "folk/config.hpp"
#include "folk/filters.hpp"
#include "folk/nets.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace distill {

// Masked frequency loss. recon and target are [B, C, H, W]; masks holds one
// H x W mask per sample, 1 = kept by the filter. For every (b, c):
//   sqrt( sum over M = 0 bins of |F(target) - F(recon)|^2 / d )
// with d = max(1, #masked bins) in Mean mode and d = 1 in Sum mode; the
// result is averaged over channels and batch. Differentiable in recon only.
ad::Tensor mfm_loss(const ad::Tensor& recon, const ad::Tensor& target,
                    const std::vector<filters::FrequencyMask>& masks, MfmNorm norm = MfmNorm::Mean);

// softmax(logits / tau_s) along the last axis.
ad::Tensor student_probs(const ad::Tensor& logits, real tau_s);

// softmax((logits - center) / tau_t), evaluated without recording. center
// has shape [K].
ad::Tensor teacher_probs(const ad::Tensor& logits, const ad::Tensor& center, real tau_t);

// Row-sum tolerance applied by distillation_loss.
real probability_tolerance();

// -mean_b [ sum_k Pt(u) log Ps(v~) + sum_k Pt(v) log Ps(u~) ] with the log
// floored at 1e-12. All inputs are [B, K] (or [K]); rows must sum to one
// within probability_tolerance() or InvalidArgument is thrown.
ad::Tensor distillation_loss(const ad::Tensor& pt_u, const ad::Tensor& pt_v, const ad::Tensor& ps_u_masked,
                             const ad::Tensor& ps_v_masked);

// alpha * dis + (mfm_u + mfm_v) / 2
ad::Tensor total_loss(const ad::Tensor& dis, const ad::Tensor& mfm_u, const ad::Tensor& mfm_v, real alpha);

// phi <- lambda * phi + (1 - lambda) * theta for every teacher entry; theta
// is looked up by name in the student tree.
void ema_update(nets::ParamTree& teacher, const nets::ParamTree& student, double lambda);

// EMA coefficient at `step`: cosine from base (step 0) to 1 (final step),
// or constant base.
double ema_lambda(long long step, long long total_steps, double base, bool cosine);

// c <- m * c + (1 - m) * mean over the batch of teacher logits [B, K].
void center_update(ad::Tensor& center, const ad::Tensor& teacher_logits, double momentum);

}  // namespace distill
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
