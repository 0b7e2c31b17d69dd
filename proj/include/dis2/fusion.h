#pragma once

#include <torch/torch.h>

#include <optional>
#include <utility>
#include <vector>

#include "dis2/encoders.h"

namespace dis2 {

/// Fused features F_1..F_4 (same shapes as the inputs at each level) plus the
/// transformed fusion token, which stands in for level 4 during feature
/// distillation.
struct FusedPyramid {
  std::vector<torch::Tensor> levels;
  torch::Tensor token;                   // [B, d]
  std::vector<torch::Tensor> attention;  // per transformer layer, [B, heads, S, S]
  int64_t sequence_length = 0;

  const torch::Tensor& level(int i) const { return levels.at(static_cast<size_t>(i - 1)); }
};

/// Convolutional fusion at levels 1..3:
///   F_i = GN(phi_i(concat(a_i, b_i)) + proj_i(F_{i-1}))
/// where proj_i is a stride-2 conv to the level-i width. Level 1 has no
/// residual input.
class ConvFusionImpl : public torch::nn::Module {
 public:
  ConvFusionImpl(int level, int base_width);

  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b,
                        const std::optional<torch::Tensor>& previous = std::nullopt);
  torch::Tensor project_previous(const torch::Tensor& previous);

  int level() const { return level_; }

  torch::nn::Sequential phi{nullptr};
  torch::nn::Conv2d residual{nullptr};
  torch::nn::GroupNorm norm{nullptr};

 private:
  int level_;
};
TORCH_MODULE(ConvFusion);

struct AttentionOutput {
  torch::Tensor values;   // [B, S, d]
  torch::Tensor weights;  // [B, heads, S, S]
};

class MultiHeadSelfAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadSelfAttentionImpl(int dim, int heads);

  AttentionOutput forward(const torch::Tensor& x);

  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear out{nullptr};

 private:
  int dim_;
  int heads_;
};
TORCH_MODULE(MultiHeadSelfAttention);

/// Pre-norm transformer encoder layer.
class TransformerLayerImpl : public torch::nn::Module {
 public:
  TransformerLayerImpl(int dim, int heads);

  AttentionOutput forward(const torch::Tensor& x);

 private:
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  MultiHeadSelfAttention attention_{nullptr};
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(TransformerLayer);

struct TransformerFusionOutput {
  torch::Tensor fused;  // [B, d, h, w]
  torch::Tensor token;  // [B, d]
  std::vector<torch::Tensor> attention;
  int64_t sequence_length = 0;
};

/// Deepest-level fusion. The sequence is
///   [t*] ++ tokens(a_L) ++ tokens(b_L) ++ [context(F_{L-1})]
/// with learned positional embeddings; the context token is the
/// attention-pooled previous fused level projected to d. The two spatial
/// token groups are merged per position back into an [d, h, w] map.
class TransformerFusionImpl : public torch::nn::Module {
 public:
  TransformerFusionImpl(int dim, int context_channels, int64_t height, int64_t width, int layers,
                        int heads);

  TransformerFusionOutput forward(const torch::Tensor& a, const torch::Tensor& b,
                                  const torch::Tensor& previous);

  /// 1 + 2*h*w + 1
  static int64_t sequence_length(int64_t height, int64_t width) { return 2 + 2 * height * width; }

  torch::Tensor fusion_token;   // [1, 1, d]
  torch::Tensor pos_embedding;  // [1, S, d]

 private:
  int dim_;
  int64_t height_, width_;
  AttentionPool context_pool_{nullptr};
  torch::nn::Linear context_proj_{nullptr};
  std::vector<TransformerLayer> layers_;
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear merge_{nullptr};
};
TORCH_MODULE(TransformerFusion);

/// Convolutional fusion at levels 1..3 followed by transformer fusion at
/// level 4. Scenario-agnostic: the same parameters fuse whichever pair of
/// branches is active.
class HybridFusionImpl : public torch::nn::Module {
 public:
  HybridFusionImpl(int base_width, int patch_size, int layers = 2, int heads = 4);

  FusedPyramid forward(const FeaturePyramid& a, const FeaturePyramid& b);

  ConvFusion conv_level(int level) { return conv_.at(static_cast<size_t>(level - 1)); }
  TransformerFusion transformer() { return transformer_; }

 private:
  std::vector<ConvFusion> conv_;
  TransformerFusion transformer_{nullptr};
};
TORCH_MODULE(HybridFusion);

}  // namespace dis2
