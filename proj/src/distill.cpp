#include "folk/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "folk/error.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace distill {

using ad::Tensor;

Tensor mfm_loss(const Tensor& recon, const Tensor& target, const std::vector<filters::FrequencyMask>& masks,
                MfmNorm norm) {
  if (recon.shape() != target.shape() || recon.ndim() != 4) {
    throw ShapeError("mfm_loss: reconstruction " + ad::to_string(recon.shape()) + " and target " +
                     ad::to_string(target.shape()) + " must both be [B, C, H, W]");
  }
  const std::int64_t B = recon.dim(0), C = recon.dim(1), H = recon.dim(2), W = recon.dim(3);
  if (static_cast<std::int64_t>(masks.size()) != B) {
    throw ShapeError("mfm_loss: " + std::to_string(masks.size()) + " masks for a batch of " + std::to_string(B));
  }
  // Per-bin weight (1 - M) / d as a constant [B, 1, H, W].
  std::vector<real> weight(static_cast<std::size_t>(B * H * W));
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& m = masks[b];
    if (static_cast<std::int64_t>(m.height) != H || static_cast<std::int64_t>(m.width) != W) {
      throw ShapeError("mfm_loss: mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                       " does not match image " + std::to_string(H) + "x" + std::to_string(W));
    }
    const double d = norm == MfmNorm::Mean ? std::max<double>(1.0, static_cast<double>(m.masked_count())) : 1.0;
    for (std::int64_t i = 0; i < H * W; ++i) weight[b * H * W + i] = m.bits[i] ? real(0) : static_cast<real>(1.0 / d);
  }
  const Tensor w({B, 1, H, W}, std::move(weight));
  Tensor target_spec;
  {
    ad::NoGradGuard guard;
    target_spec = ad::fft2(target.detach());
  }
  const Tensor diff = ad::sub(ad::fft2(recon), target_spec);      // [B, C, H, W, 2]
  const Tensor sq = ad::sum(ad::mul(diff, diff), -1);              // [B, C, H, W]
  const Tensor per_bin = ad::reshape(ad::mul(sq, w), {B, C, H * W});
  return ad::mean(ad::sqrt(ad::sum(per_bin, 2)));
}

Tensor student_probs(const Tensor& logits, real tau_s) {
  if (!(tau_s > 0)) throw InvalidArgument("tau_s must be positive");
  return ad::softmax(logits, -1, tau_s);
}

Tensor teacher_probs(const Tensor& logits, const Tensor& center, real tau_t) {
  if (!(tau_t > 0)) throw InvalidArgument("tau_t must be positive");
  if (center.ndim() != 1 || center.dim(0) != logits.dim(-1)) {
    throw ShapeError("teacher_probs: center " + ad::to_string(center.shape()) + " does not match logits " +
                     ad::to_string(logits.shape()));
  }
  ad::NoGradGuard guard;
  return ad::softmax(ad::sub(logits.detach(), center.detach()), -1, tau_t);
}

real probability_tolerance() { return sizeof(real) == sizeof(double) ? real(1e-6) : real(1e-4); }

namespace {

void check_distribution(const Tensor& p, const char* name) {
  const std::int64_t K = p.dim(-1);
  const auto d = p.data();
  const real tol = probability_tolerance();
  for (std::int64_t r = 0; r < p.numel() / K; ++r) {
    double s = 0.0;
    for (std::int64_t k = 0; k < K; ++k) s += d[r * K + k];
    if (!(std::abs(s - 1.0) <= tol)) {
      throw InvalidArgument(std::string("distillation_loss: ") + name + " row " + std::to_string(r) + " sums to " +
                            std::to_string(s));
    }
  }
}

}  // namespace

Tensor distillation_loss(const Tensor& pt_u, const Tensor& pt_v, const Tensor& ps_u_masked,
                         const Tensor& ps_v_masked) {
  const auto& s = pt_u.shape();
  if (pt_v.shape() != s || ps_u_masked.shape() != s || ps_v_masked.shape() != s || s.empty() || s.size() > 2) {
    throw ShapeError("distillation_loss: inputs must share one [B, K] or [K] shape, got " + ad::to_string(s) + ", " +
                     ad::to_string(pt_v.shape()) + ", " + ad::to_string(ps_u_masked.shape()) + ", " +
                     ad::to_string(ps_v_masked.shape()));
  }
  check_distribution(pt_u, "Pt(u)");
  check_distribution(pt_v, "Pt(v)");
  check_distribution(ps_u_masked, "Ps(u~)");
  check_distribution(ps_v_masked, "Ps(v~)");
  const real floor = real(1e-12);
  const Tensor cross = ad::add(ad::sum(ad::mul(pt_u, ad::log(ps_v_masked, floor))),
                               ad::sum(ad::mul(pt_v, ad::log(ps_u_masked, floor))));
  const std::int64_t rows = s.size() == 2 ? s[0] : 1;
  return ad::scale(cross, real(-1) / static_cast<real>(rows));
}

Tensor total_loss(const Tensor& dis, const Tensor& mfm_u, const Tensor& mfm_v, real alpha) {
  return ad::add(ad::scale(dis, alpha), ad::scale(ad::add(mfm_u, mfm_v), real(0.5)));
}

void ema_update(nets::ParamTree& teacher, const nets::ParamTree& student, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("ema_update: lambda must lie in [0, 1]");
  const real l = static_cast<real>(lambda), r = static_cast<real>(1.0 - lambda);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const std::string& name = teacher.names()[i];
    if (!student.contains(name)) throw ShapeError("ema_update: student has no parameter '" + name + "'");
    const Tensor& theta = student[name];
    Tensor& phi = teacher.tensors()[i];
    if (theta.shape() != phi.shape()) {
      throw ShapeError("ema_update: '" + name + "' is " + ad::to_string(phi.shape()) + " in the teacher and " +
                       ad::to_string(theta.shape()) + " in the student");
    }
    auto pd = phi.data();
    const auto td = theta.data();
    for (std::size_t k = 0; k < pd.size(); ++k) pd[k] = l * pd[k] + r * td[k];
  }
}

double ema_lambda(long long step, long long total_steps, double base, bool cosine) {
  if (!cosine || total_steps <= 0) return base;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return 1.0 - (1.0 - base) * (std::cos(std::numbers::pi * t) + 1.0) / 2.0;
}

void center_update(Tensor& center, const Tensor& teacher_logits, double momentum) {
  const std::int64_t K = center.numel();
  if (teacher_logits.dim(-1) != K) {
    throw ShapeError("center_update: logits " + ad::to_string(teacher_logits.shape()) + " vs center " +
                     ad::to_string(center.shape()));
  }
  const std::int64_t rows = teacher_logits.numel() / K;
  std::vector<double> mean(static_cast<std::size_t>(K), 0.0);
  const auto d = teacher_logits.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t k = 0; k < K; ++k) mean[k] += d[r * K + k];
  const real m = static_cast<real>(momentum), rm = static_cast<real>(1.0 - momentum);
  auto c = center.data();
  for (std::int64_t k = 0; k < K; ++k) c[k] = m * c[k] + rm * static_cast<real>(mean[k] / rows);
}

}  // namespace distill
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
