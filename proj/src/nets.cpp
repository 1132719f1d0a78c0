#include "folk/nets.hpp"

#include <cmath>

#include "folk/error.hpp"
#include "folk/rng.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace nets {

using ad::Shape;
using ad::Tensor;

void ParamTree::add(const std::string& name, Tensor t) {
  if (contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
}

const Tensor& ParamTree::operator[](const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return tensors_[it->second];
}

Tensor& ParamTree::operator[](const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return tensors_[it->second];
}

std::int64_t ParamTree::total_elements() const {
  std::int64_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

ParamTree ParamTree::clone(bool requires_grad) const {
  ParamTree out;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto d = tensors_[i].data();
    out.add(names_[i], Tensor(tensors_[i].shape(), std::vector<real>(d.begin(), d.end()), requires_grad));
  }
  return out;
}

ParamTree ParamTree::select(const std::vector<std::string>& prefixes) const {
  ParamTree out;
  for (std::size_t i = 0; i < size(); ++i) {
    for (const auto& p : prefixes) {
      if (names_[i].rfind(p, 0) == 0) {
        out.add(names_[i], tensors_[i]);
        break;
      }
    }
  }
  return out;
}

bool ParamTree::congruent(const ParamTree& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
  return true;
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(Rng::substream(seed, {0x1a17ull})) {}

  Tensor trunc_normal(Shape shape, double std) {
    std::vector<real> v(static_cast<std::size_t>(ad::numel(shape)));
    for (auto& x : v) {
      double z;
      do z = rng_.normal(); while (std::abs(z) > 2.0);
      x = static_cast<real>(z * std);
    }
    return Tensor(std::move(shape), std::move(v), true);
  }
  Tensor he_normal(Shape shape, std::int64_t fan_in) {
    std::vector<real> v(static_cast<std::size_t>(ad::numel(shape)));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& x : v) x = static_cast<real>(rng_.normal(0.0, std));
    return Tensor(std::move(shape), std::move(v), true);
  }
  static Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
  static Tensor ones(Shape shape) { return Tensor::full(std::move(shape), real(1), true); }

 private:
  Rng rng_;
};

void add_linear(ParamTree& p, Initializer& init, const std::string& name, std::int64_t in, std::int64_t out) {
  p.add(name + ".weight", init.trunc_normal({in, out}, 0.02));
  p.add(name + ".bias", Initializer::zeros({out}));
}

void add_norm(ParamTree& p, const std::string& name, std::int64_t dim) {
  p.add(name + ".gain", Initializer::ones({dim}));
  p.add(name + ".bias", Initializer::zeros({dim}));
}

Tensor linear(const Tensor& x, const ParamTree& p, const std::string& name) {
  return ad::add(ad::matmul(x, p[name + ".weight"]), p[name + ".bias"]);
}

Tensor norm(const Tensor& x, const ParamTree& p, const std::string& name) {
  return ad::layernorm(x, p[name + ".gain"], p[name + ".bias"]);
}

void check_input(const Tensor& images, const EncoderConfig& cfg) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.in_channels || s[2] != cfg.image_size || s[3] != cfg.image_size) {
    throw ShapeError("encode: expected [B, " + std::to_string(cfg.in_channels) + ", " +
                     std::to_string(cfg.image_size) + ", " + std::to_string(cfg.image_size) + "], got " +
                     ad::to_string(s));
  }
}

Tensor attention(const Tensor& x, const ParamTree& p, const std::string& name, int heads) {
  const std::int64_t B = x.dim(0), T = x.dim(1), D = x.dim(2), dh = D / heads;
  // No key bias: it shifts every score in a row equally and cannot matter.
  const Tensor bias = ad::concat({p[name + ".q_bias"], Tensor::zeros({D}), p[name + ".v_bias"]}, 0);
  Tensor qkv = ad::reshape(ad::add(ad::matmul(x, p[name + ".qkv.weight"]), bias), {B, T, 3, heads, dh});
  qkv = ad::permute(qkv, {2, 0, 3, 1, 4});  // [3, B, H, T, dh]
  auto part = [&](int i) { return ad::reshape(ad::slice(qkv, 0, i, i + 1), {B, heads, T, dh}); };
  const Tensor q = part(0), k = part(1), v = part(2);
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k, 2, 3)), real(1) / std::sqrt(static_cast<real>(dh)));
  Tensor att = ad::softmax(scores, -1);
  Tensor out = ad::permute(ad::matmul(att, v), {0, 2, 1, 3});  // [B, T, H, dh]
  return linear(ad::reshape(out, {B, T, D}), p, name + ".proj");
}

Encoded encode_vit(const Tensor& images, const ParamTree& p, const EncoderConfig& cfg) {
  const std::int64_t B = images.dim(0), C = cfg.in_channels, P = cfg.patch_size, G = cfg.grid_size();
  const std::int64_t D = cfg.embed_dim, N = G * G;
  Tensor patches = ad::reshape(images, {B, C, G, P, G, P});
  patches = ad::reshape(ad::permute(patches, {0, 2, 4, 1, 3, 5}), {B, N, C * P * P});
  Tensor x = linear(patches, p, "encoder.patch");
  const Tensor cls = ad::broadcast_to(p["encoder.cls"], {B, 1, D});
  x = ad::add(ad::concat({cls, x}, 1), p["encoder.pos"]);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string b = "encoder.blocks." + std::to_string(i);
    x = ad::add(x, attention(norm(x, p, b + ".ln1"), p, b + ".attn", cfg.num_heads));
    Tensor h = ad::gelu(linear(norm(x, p, b + ".ln2"), p, b + ".mlp.fc1"));
    x = ad::add(x, linear(h, p, b + ".mlp.fc2"));
  }
  x = norm(x, p, "encoder.norm");
  return {ad::slice(x, 1, 1, N + 1), ad::reshape(ad::slice(x, 1, 0, 1), {B, D})};
}

Encoded encode_cnn(const Tensor& images, const ParamTree& p, const EncoderConfig& cfg) {
  Tensor x = images;
  for (std::size_t s = 0; s < cfg.cnn_channels.size(); ++s) {
    const std::string n = "encoder.stages." + std::to_string(s);
    x = ad::gelu(ad::conv2d(x, p[n + ".conv1.weight"], p[n + ".conv1.bias"], 2, 1));
    x = ad::gelu(ad::conv2d(x, p[n + ".conv2.weight"], p[n + ".conv2.bias"], 1, 1));
  }
  const std::int64_t B = x.dim(0), F = x.dim(1), g = x.dim(2);
  Tensor tokens = ad::reshape(ad::permute(x, {0, 2, 3, 1}), {B, g * g, F});
  tokens = norm(tokens, p, "encoder.norm");
  return {tokens, ad::mean(tokens, 1)};
}

}  // namespace

ParamTree init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const EncoderConfig& e = cfg.encoder;
  ParamTree p;
  Initializer init(seed);
  const std::int64_t C = e.in_channels;
  if (e.arch == Arch::ViT) {
    const std::int64_t D = e.embed_dim, P = e.patch_size, G = e.grid_size();
    add_linear(p, init, "encoder.patch", C * P * P, D);
    p.add("encoder.cls", init.trunc_normal({1, 1, D}, 0.02));
    p.add("encoder.pos", init.trunc_normal({1, G * G + 1, D}, 0.02));
    for (int i = 0; i < e.depth; ++i) {
      const std::string b = "encoder.blocks." + std::to_string(i);
      add_norm(p, b + ".ln1", D);
      p.add(b + ".attn.qkv.weight", init.trunc_normal({D, 3 * D}, 0.02));
      p.add(b + ".attn.q_bias", Initializer::zeros({D}));
      p.add(b + ".attn.v_bias", Initializer::zeros({D}));
      add_linear(p, init, b + ".attn.proj", D, D);
      add_norm(p, b + ".ln2", D);
      add_linear(p, init, b + ".mlp.fc1", D, D * e.mlp_ratio);
      add_linear(p, init, b + ".mlp.fc2", D * e.mlp_ratio, D);
    }
    add_norm(p, "encoder.norm", D);
  } else {
    std::int64_t in = C;
    for (std::size_t s = 0; s < e.cnn_channels.size(); ++s) {
      const std::string n = "encoder.stages." + std::to_string(s);
      const std::int64_t out = e.cnn_channels[s];
      p.add(n + ".conv1.weight", init.he_normal({out, in, 3, 3}, in * 9));
      p.add(n + ".conv1.bias", Initializer::zeros({out}));
      p.add(n + ".conv2.weight", init.he_normal({out, out, 3, 3}, out * 9));
      p.add(n + ".conv2.bias", Initializer::zeros({out}));
      in = out;
    }
    add_norm(p, "encoder.norm", in);
  }
  const std::int64_t F = e.feature_dim(), Hd = cfg.heads.proj_hidden_dim, K = cfg.heads.proj_out_dim;
  add_linear(p, init, "head.fc1", F, Hd);
  add_linear(p, init, "head.fc2", Hd, Hd);
  add_linear(p, init, "head.fc3", Hd, K);
  const std::int64_t cs = e.cell_size();
  add_linear(p, init, "mfm", F, C * cs * cs);
  return p;
}

ParamTree teacher_from(const ParamTree& student) {
  return student.select({"encoder.", "head."}).clone(false);
}

Encoded encode(const Tensor& images, const ParamTree& params, const EncoderConfig& cfg) {
  check_input(images, cfg);
  return cfg.arch == Arch::ViT ? encode_vit(images, params, cfg) : encode_cnn(images, params, cfg);
}

Tensor mfm_head(const Tensor& tokens, const ParamTree& params, const EncoderConfig& cfg) {
  const std::int64_t G = cfg.grid_size(), cs = cfg.cell_size(), C = cfg.in_channels;
  if (tokens.ndim() != 3 || tokens.dim(1) != G * G || tokens.dim(2) != cfg.feature_dim()) {
    throw ShapeError("mfm_head: expected tokens [B, " + std::to_string(G * G) + ", " +
                     std::to_string(cfg.feature_dim()) + "], got " + ad::to_string(tokens.shape()));
  }
  const std::int64_t B = tokens.dim(0);
  Tensor px = ad::reshape(linear(tokens, params, "mfm"), {B, G, G, C, cs, cs});
  px = ad::permute(px, {0, 3, 1, 4, 2, 5});  // [B, C, G, cs, G, cs]
  return ad::reshape(px, {B, C, G * cs, G * cs});
}

Tensor proj_head(const Tensor& cls, const ParamTree& params) {
  const Tensor& w1 = params["head.fc1.weight"];
  if (cls.ndim() != 2 || cls.dim(1) != w1.dim(0)) {
    throw ShapeError("proj_head: expected cls [B, " + std::to_string(w1.dim(0)) + "], got " +
                     ad::to_string(cls.shape()));
  }
  Tensor h = ad::gelu(linear(cls, params, "head.fc1"));
  h = ad::gelu(linear(h, params, "head.fc2"));
  return linear(h, params, "head.fc3");
}

Tensor to_batch(const std::vector<imaging::Image>& images) {
  if (images.empty()) throw InvalidArgument("to_batch: no images");
  const auto& f = images.front();
  std::vector<real> data;
  data.reserve(images.size() * f.data.size());
  for (const auto& img : images) {
    if (img.channels != f.channels || img.height != f.height || img.width != f.width) {
      throw ShapeError("to_batch: images differ in size");
    }
    for (double v : img.data) data.push_back(static_cast<real>(v));
  }
  return Tensor({static_cast<std::int64_t>(images.size()), static_cast<std::int64_t>(f.channels),
                 static_cast<std::int64_t>(f.height), static_cast<std::int64_t>(f.width)},
                std::move(data));
}

std::vector<imaging::Image> from_batch(const Tensor& batch) {
  if (batch.ndim() != 4) throw ShapeError("from_batch: expected [B, C, H, W], got " + ad::to_string(batch.shape()));
  const auto B = batch.dim(0);
  const auto C = static_cast<std::size_t>(batch.dim(1)), H = static_cast<std::size_t>(batch.dim(2)),
             W = static_cast<std::size_t>(batch.dim(3));
  std::vector<imaging::Image> out;
  const auto d = batch.data();
  for (std::int64_t b = 0; b < B; ++b) {
    imaging::Image img(C, H, W);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = d[b * img.data.size() + i];
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace nets
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
