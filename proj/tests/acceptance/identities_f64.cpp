#include <cmath>
#include <random>
#include <sstream>

#include "folk/distill.hpp"
#include "oracles.hpp"
#include "verdict.hpp"

namespace acceptance {

using folk::ad::Tensor;
namespace distill = folk::distill;

namespace {

std::vector<double> random_distribution(std::size_t k, std::mt19937_64& gen) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  double s = 0.0;
  for (double& x : p) s += (x = e(gen) + 1e-12);
  for (double& x : p) x /= s;
  return p;
}

Tensor vec(const std::vector<double>& v) { return Tensor({static_cast<std::int64_t>(v.size())}, v); }

}  // namespace

Verdict loss_identities() {
  std::mt19937_64 gen(2024);
  double worst_self = 0.0, worst_ones = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = oracle::random_tensor({2, 3, 32, 32}, gen, false, 0.0, 1.0);
    const Tensor r = oracle::random_tensor({2, 3, 32, 32}, gen, false, 0.0, 1.0);
    std::vector<folk::filters::FrequencyMask> masks;
    std::bernoulli_distribution keep(0.3);
    for (int b = 0; b < 2; ++b) {
      folk::filters::FrequencyMask m(32, 32, 1);
      for (auto& bit : m.bits) bit = keep(gen);
      masks.push_back(m);
    }
    worst_self = std::max(worst_self, std::abs(distill::mfm_loss(x, x, masks).item()));
    const std::vector<folk::filters::FrequencyMask> ones(2, folk::filters::FrequencyMask(32, 32, 1));
    worst_ones = std::max(worst_ones, std::abs(distill::mfm_loss(r, x, ones).item()));
  }

  std::uniform_int_distribution<std::size_t> dims(2, 64);
  int violations = 0;
  double tightest = INFINITY;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = dims(gen);
    const auto pu = random_distribution(k, gen), pv = random_distribution(k, gen);
    const auto su = random_distribution(k, gen), sv = random_distribution(k, gen);
    const double loss = distill::distillation_loss(vec(pu), vec(pv), vec(su), vec(sv)).item();
    const double gap = loss - (oracle::entropy(pu) + oracle::entropy(pv));
    tightest = std::min(tightest, gap);
    violations += gap < -1e-9;
  }

  std::ostringstream d;
  d << "mfm(x,x)=" << worst_self << ", mfm(all-ones)=" << worst_ones << ", Gibbs violations " << violations
    << "/1000 (smallest gap " << tightest << ")";
  return {worst_self == 0.0 && worst_ones == 0.0 && violations == 0, d.str()};
}

Verdict ema_center_algebra() {
  std::mt19937_64 gen(7);
  const Tensor theta_w = oracle::random_tensor({16, 8}, gen, false);
  const Tensor phi_w = oracle::random_tensor({16, 8}, gen, false);
  folk::nets::ParamTree theta;
  theta.add("encoder.w", theta_w);
  bool ok = true;
  std::ostringstream d;
  for (double lambda : {0.0, 0.5, 1.0}) {
    folk::nets::ParamTree phi;
    phi.add("encoder.w", phi_w.detach());
    distill::ema_update(phi, theta, lambda);
    double err = 0.0;
    for (std::int64_t i = 0; i < phi_w.numel(); ++i) {
      const double want = lambda * phi_w.data()[i] + (1.0 - lambda) * theta_w.data()[i];
      err = std::max(err, std::abs(phi["encoder.w"].data()[i] - want));
    }
    ok &= err == 0.0;
    d << "lambda " << lambda << " err " << err << "; ";
  }
  const Tensor logits = oracle::random_tensor({32, 10}, gen, false, -5.0, 5.0);
  const Tensor c0 = oracle::random_tensor({10}, gen, false);
  std::vector<double> mean(10, 0.0);
  for (int r = 0; r < 32; ++r)
    for (int k = 0; k < 10; ++k) mean[k] += logits.data()[r * 10 + k];
  for (double& v : mean) v /= 32.0;
  for (double m : {0.0, 1.0}) {
    Tensor c = c0.detach();
    distill::center_update(c, logits, m);
    double err = 0.0;
    for (int k = 0; k < 10; ++k) err = std::max(err, std::abs(c.data()[k] - (m == 1.0 ? c0.data()[k] : mean[k])));
    ok &= err == 0.0;
    d << "m " << m << " err " << err << "; ";
  }
  return {ok, d.str()};
}

}  // namespace acceptance
