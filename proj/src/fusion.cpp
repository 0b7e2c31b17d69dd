#include "dis2/fusion.h"

#include <cmath>

namespace dis2 {

namespace nn = torch::nn;

ConvFusionImpl::ConvFusionImpl(int level, int base_width) : level_(level) {
  const int c = level_channels(base_width, level);
  auto block = conv_norm_relu(2 * c, c);
  block->push_back(nn::Conv2d(nn::Conv2dOptions(c, c, 1)));
  phi = register_module("phi", block);
  norm = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(norm_groups(c), c)));
  if (level > 1) {
    const int prev = level_channels(base_width, level - 1);
    residual = register_module(
        "residual", nn::Conv2d(nn::Conv2dOptions(prev, c, 3).stride(2).padding(1)));
  }
}

torch::Tensor ConvFusionImpl::project_previous(const torch::Tensor& previous) {
  if (!residual) throw Error("level-1 fusion has no residual input");
  return residual->forward(previous);
}

torch::Tensor ConvFusionImpl::forward(const torch::Tensor& a, const torch::Tensor& b,
                                      const std::optional<torch::Tensor>& previous) {
  if (a.sizes() != b.sizes())
    throw Error("fusion level " + std::to_string(level_) + ": branch feature shapes differ");
  auto fused = phi->forward(torch::cat({a, b}, 1));
  if (previous && residual) {
    auto proj = residual->forward(*previous);
    if (proj.sizes() != fused.sizes())
      throw Error("fusion level " + std::to_string(level_) + ": residual shape mismatch");
    fused = fused + proj;
  }
  return norm->forward(fused);
}

MultiHeadSelfAttentionImpl::MultiHeadSelfAttentionImpl(int dim, int heads) : dim_(dim), heads_(heads) {
  if (dim % heads != 0) throw Error("attention width must be divisible by the head count");
  qkv = register_module("qkv", nn::Linear(dim, 3 * dim));
  out = register_module("out", nn::Linear(dim, dim));
}

AttentionOutput MultiHeadSelfAttentionImpl::forward(const torch::Tensor& x) {
  const auto batch = x.size(0);
  const auto seq = x.size(1);
  const int head_dim = dim_ / heads_;
  auto parts = qkv->forward(x).view({batch, seq, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = parts[0], k = parts[1], v = parts[2];  // [B, heads, S, hd]
  auto weights = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(double(head_dim)), -1);
  auto mixed = torch::matmul(weights, v).transpose(1, 2).reshape({batch, seq, dim_});
  return {out->forward(mixed), weights};
}

TransformerLayerImpl::TransformerLayerImpl(int dim, int heads) {
  norm1_ = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  norm2_ = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
  attention_ = register_module("attention", MultiHeadSelfAttention(dim, heads));
  mlp_ = register_module("mlp", nn::Sequential(nn::Linear(dim, 2 * dim), nn::GELU(), nn::Linear(2 * dim, dim)));
}

AttentionOutput TransformerLayerImpl::forward(const torch::Tensor& x) {
  auto attn = attention_->forward(norm1_->forward(x));
  auto h = x + attn.values;
  h = h + mlp_->forward(norm2_->forward(h));
  return {h, attn.weights};
}

TransformerFusionImpl::TransformerFusionImpl(int dim, int context_channels, int64_t height, int64_t width,
                                             int layers, int heads)
    : dim_(dim), height_(height), width_(width) {
  fusion_token = register_parameter("fusion_token", torch::randn({1, 1, dim}) * 0.02);
  pos_embedding =
      register_parameter("pos_embedding", torch::randn({1, sequence_length(height, width), dim}) * 0.02);
  context_pool_ = register_module("context_pool", AttentionPool(context_channels));
  context_proj_ = register_module("context_proj", nn::Linear(context_channels, dim));
  for (int i = 0; i < layers; ++i)
    layers_.push_back(register_module("layer" + std::to_string(i), TransformerLayer(dim, heads)));
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dim})));
  merge_ = register_module("merge", nn::Linear(2 * dim, dim));
}

TransformerFusionOutput TransformerFusionImpl::forward(const torch::Tensor& a, const torch::Tensor& b,
                                                       const torch::Tensor& previous) {
  if (a.sizes() != b.sizes()) throw Error("transformer fusion: branch feature shapes differ");
  if (a.size(1) != dim_ || a.size(2) != height_ || a.size(3) != width_)
    throw Error("transformer fusion built for [" + std::to_string(dim_) + ", " + std::to_string(height_) +
                ", " + std::to_string(width_) + "] inputs; patch size does not match the model");
  const auto batch = a.size(0);
  const auto n = height_ * width_;

  auto a_tokens = a.flatten(2).transpose(1, 2);  // [B, N, d]
  auto b_tokens = b.flatten(2).transpose(1, 2);
  auto context = context_proj_->forward(context_pool_->forward(previous)).unsqueeze(1);  // [B, 1, d]
  auto x = torch::cat({fusion_token.expand({batch, 1, dim_}), a_tokens, b_tokens, context}, 1);
  x = x + pos_embedding;

  TransformerFusionOutput out;
  out.sequence_length = x.size(1);
  for (auto& layer : layers_) {
    auto r = layer->forward(x);
    x = r.values;
    out.attention.push_back(r.weights);
  }
  x = norm_->forward(x);

  using torch::indexing::Slice;
  out.token = x.select(1, 0);
  auto spatial = torch::cat({x.index({Slice(), Slice(1, 1 + n)}), x.index({Slice(), Slice(1 + n, 1 + 2 * n)})}, 2);
  out.fused = merge_->forward(spatial).transpose(1, 2).reshape({batch, dim_, height_, width_});
  return out;
}

HybridFusionImpl::HybridFusionImpl(int base_width, int patch_size, int layers, int heads) {
  for (int level = 1; level < kNumLevels; ++level)
    conv_.push_back(register_module("conv" + std::to_string(level), ConvFusion(level, base_width)));
  const int deep = patch_size / 16;
  transformer_ = register_module(
      "transformer", TransformerFusion(level_channels(base_width, kNumLevels),
                                       level_channels(base_width, kNumLevels - 1), deep, deep, layers, heads));
}

FusedPyramid HybridFusionImpl::forward(const FeaturePyramid& a, const FeaturePyramid& b) {
  if (a.size() != kNumLevels || b.size() != kNumLevels) throw Error("fusion expects 4-level pyramids");
  FusedPyramid out;
  std::optional<torch::Tensor> previous;
  for (int level = 1; level < kNumLevels; ++level) {
    auto f = conv_[level - 1]->forward(a.level(level), b.level(level), previous);
    out.levels.push_back(f);
    previous = f;
  }
  auto t = transformer_->forward(a.level(kNumLevels), b.level(kNumLevels), *previous);
  out.levels.push_back(t.fused);
  out.token = t.token;
  out.attention = std::move(t.attention);
  out.sequence_length = t.sequence_length;
  return out;
}

}  // namespace dis2
