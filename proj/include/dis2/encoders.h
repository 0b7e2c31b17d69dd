#pragma once

#include <torch/torch.h>

#include <vector>

#include "dis2/types.h"

namespace dis2 {

inline constexpr int kNumLevels = 4;

/// Channel width at pyramid level i (1-based): base * 2^(i-1).
constexpr int level_channels(int base_width, int level) {
  return base_width << (level - 1 < 3 ? level - 1 : 3);
}

/// GroupNorm group count used throughout the network.
int norm_groups(int channels);

/// conv(k x k) -> GroupNorm -> ReLU
torch::nn::Sequential conv_norm_relu(int in, int out, int kernel = 3, int stride = 1);

/// Four feature maps; level i (1-based) is [B, C_i, H/2^i, W/2^i].
struct FeaturePyramid {
  std::vector<torch::Tensor> levels;

  const torch::Tensor& level(int i) const { return levels.at(static_cast<size_t>(i - 1)); }
  size_t size() const { return levels.size(); }
};

/// UNet-style contracting path. Each level runs two conv-norm-relu blocks at
/// the incoming resolution and then halves it with max pooling.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(int in_channels, int base_width);

  FeaturePyramid forward(const torch::Tensor& image);

  int in_channels() const { return in_channels_; }
  int base_width() const { return base_width_; }

 private:
  int in_channels_;
  int base_width_;
  std::vector<torch::nn::Sequential> blocks_;
};
TORCH_MODULE(Encoder);

/// Softmax-weighted spatial average with a learnable linear scoring head.
/// [B, C, h, w] (or [B, C, N]) -> [B, C].
class AttentionPoolImpl : public torch::nn::Module {
 public:
  explicit AttentionPoolImpl(int channels);

  torch::Tensor forward(const torch::Tensor& features);
  /// Pooling weights [B, N]; each row sums to one.
  torch::Tensor weights(const torch::Tensor& features);

  torch::nn::Linear score{nullptr};
};
TORCH_MODULE(AttentionPool);

/// One attention pool per pyramid level, shared by the orthogonality and the
/// feature-distillation terms at that level.
class PoolBankImpl : public torch::nn::Module {
 public:
  explicit PoolBankImpl(int base_width);

  torch::Tensor pool(int level, const torch::Tensor& features);
  std::vector<torch::Tensor> pool_pyramid(const FeaturePyramid& pyramid);

 private:
  std::vector<AttentionPool> pools_;
};
TORCH_MODULE(PoolBank);

}  // namespace dis2
