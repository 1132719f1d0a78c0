#include "folk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "folk/dataset.hpp"
#include "folk/distill.hpp"
#include "folk/error.hpp"
#include "folk/nets.hpp"
#include "folk/rng.hpp"
#include "folk/trainer.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace gradcheck {

using ad::Shape;
using ad::Tensor;

GradcheckReport check(const std::string& name, std::vector<Tensor> inputs, const Fn& f, const Options& opt) {
  for (auto& t : inputs) t.clear_grad();
  {
    ad::TapeScope scope;
    const Tensor loss = f(inputs);
    ad::backward(loss);
  }
  GradcheckReport rep;
  rep.name = name;
  Rng pick = Rng::substream(opt.seed, {0x6c0ull});
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::size_t n = static_cast<std::size_t>(t.numel());
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > opt.max_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), pick.engine());
      coords.resize(opt.max_per_tensor);
    }
    auto data = t.data();
    for (std::size_t i : coords) {
      const double analytic = t.has_grad() ? static_cast<double>(t.grad()[i]) : 0.0;
      const real saved = data[i];
      double fp, fm;
      {
        ad::NoGradGuard guard;
        data[i] = static_cast<real>(saved + opt.eps);
        fp = f(inputs).item();
        data[i] = static_cast<real>(saved - opt.eps);
        fm = f(inputs).item();
      }
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
      ++rep.checked;
    }
  }
  rep.passed = rep.checked > 0 && rep.max_rel_error < opt.tol;
  return rep;
}

namespace {

class Maker {
 public:
  explicit Maker(std::uint64_t seed) : rng_(Rng::substream(seed, {0x6c1ull})) {}
  Tensor randn(Shape s, bool grad = true, double lo = -1.0, double hi = 1.0) {
    std::vector<real> v(static_cast<std::size_t>(ad::numel(s)));
    for (auto& x : v) x = static_cast<real>(rng_.uniform(lo, hi));
    return Tensor(std::move(s), std::move(v), grad);
  }
  Tensor positive(Shape s) { return randn(std::move(s), true, 0.5, 2.0); }

 private:
  Rng rng_;
};

// Projects an output onto a fixed random direction so every coordinate of
// the output influences the scalar.
Tensor project(const Tensor& y, std::uint64_t salt) {
  Maker m(salt);
  return ad::sum(ad::mul(y, m.randn(y.shape(), false)));
}

struct Case {
  std::vector<Tensor> inputs;
  Fn f;
};

FolkConfig tiny_config(Arch arch) {
  FolkConfig c;
  auto& e = c.model.encoder;
  e.arch = arch;
  e.image_size = 16;
  e.in_channels = 3;
  e.patch_size = 4;
  e.embed_dim = 8;
  e.depth = 1;
  e.num_heads = 2;
  e.mlp_ratio = 2;
  e.cnn_channels = {4, 6};
  c.model.heads.proj_hidden_dim = 12;
  c.model.heads.proj_out_dim = 8;
  c.augment.crop_size = 16;
  c.distill.tau_s = 0.5;
  c.distill.tau_t = 0.2;
  return c;
}

Case folk_loss_case(Arch arch, std::uint64_t seed) {
  const FolkConfig cfg = tiny_config(arch);
  data::SyntheticSpec spec;
  spec.num_classes = 2;
  spec.per_class = 1;
  spec.size = 16;
  spec.seed = seed;
  const auto ds = std::make_shared<data::Dataset>(data::synthetic(spec));
  const auto pb = std::make_shared<trainer::PreparedBatch>(trainer::prepare_batch(cfg, *ds, {0, 1}, seed, 0));
  // A generic point rather than the small-scale init, so no coordinate has a
  // vanishing gradient that finite differences cannot resolve.
  const nets::ParamTree student = nets::init_params(cfg.model, seed);
  Maker m(seed + 1);
  for (std::size_t i = 0; i < student.size(); ++i) {
    Tensor t = student.tensors()[i];
    const bool gain = student.names()[i].find("gain") != std::string::npos;
    const Shape& s = t.shape();
    const double fan_in = s.size() == 2 ? static_cast<double>(s[0])
                          : s.size() == 4 ? static_cast<double>(s[1] * s[2] * s[3])
                                          : 1.0;
    const double w = std::min(0.5, 1.5 / std::sqrt(fan_in));
    const Tensor r = m.randn(s, false, gain ? 0.5 : -w, gain ? 1.5 : w);
    std::copy(r.data().begin(), r.data().end(), t.data().begin());
  }
  // Perturb the teacher away from the student so both loss terms carry signal.
  nets::ParamTree teacher = nets::teacher_from(student);
  for (auto& t : teacher.tensors()) {
    const Tensor noise = m.randn(t.shape(), false, -0.05, 0.05);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] += noise.data()[i];
  }
  Tensor pt;
  {
    ad::NoGradGuard guard;
    const auto enc = nets::encode(pb->teacher_in, teacher, cfg.model.encoder);
    const Tensor center = m.randn({cfg.model.heads.proj_out_dim}, false, -0.1, 0.1);
    pt = distill::teacher_probs(nets::proj_head(enc.cls, teacher), center, static_cast<real>(cfg.distill.tau_t));
  }
  const auto names = std::make_shared<std::vector<std::string>>(student.names());
  return {student.tensors(), [cfg, pb, pt, names](const std::vector<Tensor>& in) {
            nets::ParamTree p;
            for (std::size_t i = 0; i < in.size(); ++i) p.add((*names)[i], in[i]);
            return trainer::student_losses(cfg, p, *pb, pt).total;
          }};
}

std::map<std::string, std::function<Case(Maker&, std::uint64_t)>> registry() {
  std::map<std::string, std::function<Case(Maker&, std::uint64_t)>> r;
  r["matmul"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 3, 4}), m.randn({4, 5})}, [](auto& x) { return project(ad::matmul(x[0], x[1]), 1); }};
  };
  r["bmm"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 2, 3, 4}), m.randn({2, 2, 4, 3})},
                [](auto& x) { return project(ad::matmul(x[0], x[1]), 2); }};
  };
  r["add"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 4}), m.randn({4})}, [](auto& x) { return project(ad::add(x[0], x[1]), 3); }};
  };
  r["sub"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 1, 4}), m.randn({3, 1})}, [](auto& x) { return project(ad::sub(x[0], x[1]), 4); }};
  };
  r["mul"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 4}), m.randn({3, 4})}, [](auto& x) { return project(ad::mul(x[0], x[1]), 5); }};
  };
  r["scale"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({5})}, [](auto& x) { return project(ad::scale(x[0], real(-1.7)), 6); }};
  };
  r["add_scalar"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({5})}, [](auto& x) { return project(ad::mul(ad::add_scalar(x[0], real(0.3)), x[0]), 7); }};
  };
  r["reshape"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 6})}, [](auto& x) { return project(ad::reshape(x[0], {3, -1}), 8); }};
  };
  r["permute"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 3, 4})}, [](auto& x) { return project(ad::permute(x[0], {2, 0, 1}), 9); }};
  };
  r["transpose"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 3, 4})}, [](auto& x) { return project(ad::transpose(x[0], 0, 2), 10); }};
  };
  r["broadcast_to"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({1, 3})}, [](auto& x) { return project(ad::broadcast_to(x[0], {4, 3}), 11); }};
  };
  r["concat"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 3}), m.randn({2, 2})}, [](auto& x) { return project(ad::concat({x[0], x[1]}, 1), 12); }};
  };
  r["slice"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({4, 3})}, [](auto& x) { return project(ad::slice(x[0], 0, 1, 3), 13); }};
  };
  r["sum"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 4})}, [](auto& x) { return ad::mul(ad::sum(x[0]), ad::sum(x[0])); }};
  };
  r["sum_axis"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 4, 2})}, [](auto& x) { return project(ad::sum(x[0], 1, true), 14); }};
  };
  r["mean"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 4})}, [](auto& x) { return ad::mul(ad::mean(x[0]), ad::mean(x[0])); }};
  };
  r["mean_axis"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 4, 2})}, [](auto& x) { return project(ad::mean(x[0], 0), 15); }};
  };
  r["layernorm"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 6}), m.randn({6}), m.randn({6})},
                [](auto& x) { return project(ad::layernorm(x[0], x[1], x[2]), 16); }};
  };
  r["gelu"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({4, 5}, true, -3.0, 3.0)}, [](auto& x) { return project(ad::gelu(x[0]), 17); }};
  };
  r["softmax"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 5})}, [](auto& x) { return project(ad::softmax(x[0], -1, real(0.7)), 18); }};
  };
  r["log_softmax"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({3, 5})}, [](auto& x) { return project(ad::log_softmax(x[0], 0), 19); }};
  };
  r["log"] = [](Maker& m, std::uint64_t) {
    return Case{{m.positive({6})}, [](auto& x) { return project(ad::log(x[0], real(1e-12)), 20); }};
  };
  r["exp"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({6})}, [](auto& x) { return project(ad::exp(x[0]), 21); }};
  };
  r["sqrt"] = [](Maker& m, std::uint64_t) {
    return Case{{m.positive({6})}, [](auto& x) { return project(ad::sqrt(x[0]), 22); }};
  };
  r["conv2d"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 2, 5, 5}), m.randn({3, 2, 3, 3}), m.randn({3})},
                [](auto& x) { return project(ad::conv2d(x[0], x[1], x[2], 2, 1), 23); }};
  };
  r["avgpool2d"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 2, 4, 4})}, [](auto& x) { return project(ad::avgpool2d(x[0], 2, 2), 24); }};
  };
  r["embedding"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({5, 3})}, [](auto& x) { return project(ad::embedding(x[0], {4, 0, 4, 2}), 25); }};
  };
  r["fft2"] = [](Maker& m, std::uint64_t) {
    return Case{{m.randn({2, 4, 8})}, [](auto& x) { return project(ad::fft2(x[0]), 26); }};
  };
  r["mfm_loss"] = [](Maker& m, std::uint64_t seed) {
    Rng rng = Rng::substream(seed, {0x6c2ull});
    std::vector<filters::FrequencyMask> masks(2);
    for (auto& mk : masks) {
      mk.height = mk.width = 8;
      mk.bits.resize(64);
      for (auto& b : mk.bits) b = rng.bernoulli(0.3) ? 1 : 0;
    }
    const Tensor target = m.randn({2, 3, 8, 8}, false);
    return Case{{m.randn({2, 3, 8, 8})},
                [masks, target](auto& x) { return distill::mfm_loss(x[0], target, masks, MfmNorm::Mean); }};
  };
  r["distillation_loss"] = [](Maker& m, std::uint64_t) {
    Tensor pt_u, pt_v;
    {
      ad::NoGradGuard guard;
      pt_u = ad::softmax(m.randn({3, 6}, false), -1);
      pt_v = ad::softmax(m.randn({3, 6}, false), -1);
    }
    return Case{{m.randn({3, 6}), m.randn({3, 6})}, [pt_u, pt_v](auto& x) {
                  return distill::distillation_loss(pt_u, pt_v, distill::student_probs(x[0], real(0.5)),
                                                    distill::student_probs(x[1], real(0.5)));
                }};
  };
  r["folk_loss_vit"] = [](Maker&, std::uint64_t seed) { return folk_loss_case(Arch::ViT, seed); };
  r["folk_loss_cnn"] = [](Maker&, std::uint64_t seed) { return folk_loss_case(Arch::CNN, seed); };
  return r;
}

}  // namespace

std::vector<std::string> names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : registry()) out.push_back(k);
  return out;
}

std::vector<GradcheckReport> run(const std::string& which, const Options& opt) {
  const auto reg = registry();
  std::vector<std::string> selected;
  if (which == "all") {
    selected = names();
  } else if (reg.count(which)) {
    selected = {which};
  } else {
    throw InvalidArgument("unknown gradcheck target '" + which + "'");
  }
  const auto all = names();
  std::vector<GradcheckReport> out;
  for (const auto& n : selected) {
    const auto slot = static_cast<std::uint64_t>(std::find(all.begin(), all.end(), n) - all.begin());
    Maker m(opt.seed * 1000003ull + slot);
    Case c = reg.at(n)(m, opt.seed);
    out.push_back(check(n, std::move(c.inputs), c.f, opt));
  }
  return out;
}

}  // namespace gradcheck
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
