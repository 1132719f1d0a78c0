#pragma once

// Tiny ViT / CNN encoders and the MFM and projection heads.
//
// Parameter names:
//   encoder.*  backbone (shared layout between student and teacher)
//   head.*     projection head, 3-layer MLP
//   mfm.*      reconstruction head (student only)

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "folk/autodiff.hpp"
#include "folk/config.hpp"
#include "folk/imaging.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace nets {

// Ordered name -> tensor map. Copies share tensors; clone() does not.
class ParamTree {
 public:
  void add(const std::string& name, ad::Tensor t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ad::Tensor& operator[](const std::string& name) const;
  ad::Tensor& operator[](const std::string& name);

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<ad::Tensor>& tensors() { return tensors_; }
  const std::vector<ad::Tensor>& tensors() const { return tensors_; }
  std::int64_t total_elements() const;

  ParamTree clone(bool requires_grad) const;
  // Entries whose name starts with one of the prefixes, sharing storage.
  ParamTree select(const std::vector<std::string>& prefixes) const;
  // Same names in the same order with the same shapes.
  bool congruent(const ParamTree& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Student parameters (encoder, head, mfm), seed-deterministic, all
// requiring grad.
ParamTree init_params(const ModelConfig& cfg, std::uint64_t seed);

// Teacher: a copy of the student's encoder.* and head.*, no grad.
ParamTree teacher_from(const ParamTree& student);

struct Encoded {
  ad::Tensor tokens;  // [B, N, F]
  ad::Tensor cls;     // [B, F]
};

// images [B, C, H, W]. ViT: patch tokens and the class token after the
// final norm. CNN: the normed final feature map as N = g*g tokens and
// their mean as cls. Each CNN stage is conv3x3/2 - GELU - conv3x3 - GELU;
// depth, num_heads and mlp_ratio apply to the ViT only.
Encoded encode(const ad::Tensor& images, const ParamTree& params, const EncoderConfig& cfg);

// tokens [B, N, F] -> reconstruction [B, C, H, W]. One linear map per
// token to a C x cell x cell pixel block.
ad::Tensor mfm_head(const ad::Tensor& tokens, const ParamTree& params, const EncoderConfig& cfg);

// cls [B, F] -> logits [B, K].
ad::Tensor proj_head(const ad::Tensor& cls, const ParamTree& params);

// Stacks equally sized images into [B, C, H, W].
ad::Tensor to_batch(const std::vector<imaging::Image>& images);
std::vector<imaging::Image> from_batch(const ad::Tensor& batch);

}  // namespace nets
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
