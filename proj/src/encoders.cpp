#include "dis2/encoders.h"

namespace dis2 {

namespace nn = torch::nn;

int norm_groups(int channels) {
  for (int g : {4, 2}) if (channels % g == 0 && channels / g >= 2) return g;
  return 1;
}

nn::Sequential conv_norm_relu(int in, int out, int kernel, int stride) {
  return nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2)),
      nn::GroupNorm(nn::GroupNormOptions(norm_groups(out), out)), nn::ReLU());
}

EncoderImpl::EncoderImpl(int in_channels, int base_width)
    : in_channels_(in_channels), base_width_(base_width) {
  int in = in_channels;
  for (int level = 1; level <= kNumLevels; ++level) {
    const int out = level_channels(base_width, level);
    auto block = conv_norm_relu(in, out);
    block->extend(*conv_norm_relu(out, out));
    blocks_.push_back(register_module("level" + std::to_string(level), block));
    in = out;
  }
}

FeaturePyramid EncoderImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != in_channels_)
    throw Error("encoder expects [B, " + std::to_string(in_channels_) + ", H, W] input, got " +
                std::to_string(image.dim() == 4 ? image.size(1) : -1) + " channels");
  if (image.size(2) % 16 != 0 || image.size(3) % 16 != 0)
    throw Error("encoder input height and width must be divisible by 16");
  FeaturePyramid out;
  auto x = image;
  for (auto& block : blocks_) {
    x = torch::max_pool2d(block->forward(x), 2);
    out.levels.push_back(x);
  }
  return out;
}

AttentionPoolImpl::AttentionPoolImpl(int channels) {
  score = register_module("score", nn::Linear(channels, 1));
}

torch::Tensor AttentionPoolImpl::weights(const torch::Tensor& features) {
  auto flat = features.flatten(2).transpose(1, 2);  // [B, N, C]
  return torch::softmax(score->forward(flat).squeeze(-1), 1);
}

torch::Tensor AttentionPoolImpl::forward(const torch::Tensor& features) {
  auto flat = features.flatten(2);  // [B, C, N]
  return torch::bmm(flat, weights(features).unsqueeze(-1)).squeeze(-1);
}

PoolBankImpl::PoolBankImpl(int base_width) {
  for (int level = 1; level <= kNumLevels; ++level)
    pools_.push_back(register_module("level" + std::to_string(level),
                                     AttentionPool(level_channels(base_width, level))));
}

torch::Tensor PoolBankImpl::pool(int level, const torch::Tensor& features) {
  return pools_.at(static_cast<size_t>(level - 1))->forward(features);
}

std::vector<torch::Tensor> PoolBankImpl::pool_pyramid(const FeaturePyramid& pyramid) {
  std::vector<torch::Tensor> out;
  for (int level = 1; level <= static_cast<int>(pyramid.size()); ++level)
    out.push_back(pool(level, pyramid.level(level)));
  return out;
}

}  // namespace dis2
