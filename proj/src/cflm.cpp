#include "dis2/cflm.h"

#include <algorithm>
#include <cmath>

namespace dis2 {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor upsample_to(const torch::Tensor& x, int64_t height, int64_t width) {
  if (x.size(2) == height && x.size(3) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

ClasswiseAttention classwise_attention(const torch::Tensor& deepest, const torch::Tensor& queries) {
  if (queries.dim() != 2 || queries.size(1) != deepest.size(1))
    throw Error("class query width must equal the fused channel count");
  const auto batch = deepest.size(0);
  const auto channels = deepest.size(1);
  const auto n = deepest.size(2) * deepest.size(3);
  auto flat = deepest.flatten(2);  // [B, C, N]
  auto scores = torch::matmul(queries, flat) / std::sqrt(static_cast<double>(channels));  // [B, K, N]
  auto alpha = torch::softmax(scores, -1);
  auto attended = alpha.unsqueeze(2) * flat.unsqueeze(1) * static_cast<double>(n);
  return {alpha, attended.view({batch, queries.size(0), channels, deepest.size(2), deepest.size(3)})};
}

int class_decoder_width(int base_width, int level) {
  return std::max(4, level_channels(base_width, level) / 4);
}

namespace {

// Depthwise 3x3 with replicate padding, then a pointwise conv split into
// `groups` independent blocks.
nn::Sequential grouped_stage(int groups, int in_per_group, int out_per_group) {
  const int in = groups * in_per_group;
  return nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(in, in, 3).padding(1).groups(in).padding_mode(torch::kReplicate)),
      nn::Conv2d(nn::Conv2dOptions(in, groups * out_per_group, 1).groups(groups)), nn::ReLU());
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  return upsample_to(x, x.size(2) * 2, x.size(3) * 2);
}

}  // namespace

ClasswiseDecoderImpl::ClasswiseDecoderImpl(int num_classes, int base_width)
    : num_classes_(num_classes), base_width_(base_width) {
  if (num_classes < 1) throw Error("classwise decoder needs at least one class");
  const int deep = level_channels(base_width, kNumLevels);
  queries = register_parameter("queries", torch::randn({num_classes, deep}));
  for (int level = 1; level <= kNumLevels; ++level) {
    const int w = class_decoder_width(base_width, level);
    stages_.push_back(register_module("stage" + std::to_string(level),
                                      grouped_stage(num_classes, stage_input_width(level), w)));
    aux_.push_back(register_module("aux" + std::to_string(level),
                                   nn::Conv2d(nn::Conv2dOptions(num_classes * w, num_classes, 1))));
  }
  aggregate_ = register_module(
      "aggregate", conv_norm_relu(num_classes * class_decoder_width(base_width, 1), penultimate_channels(base_width)));
}

int ClasswiseDecoderImpl::stage_input_width(int level) const {
  if (level == kNumLevels) return level_channels(base_width_, kNumLevels);
  return level_channels(base_width_, level) + class_decoder_width(base_width_, level + 1);
}

torch::Tensor ClasswiseDecoderImpl::stage_input(int level, const torch::Tensor& fused,
                                                const torch::Tensor& deeper) const {
  const auto b = fused.size(0), c = fused.size(1), h = fused.size(2), w = fused.size(3);
  auto up = upsample2x(deeper);
  auto per_class = up.view({b, num_classes_, up.size(1) / num_classes_, h, w});
  auto shared = fused.unsqueeze(1).expand({b, num_classes_, c, h, w});
  return torch::cat({shared, per_class}, 2).reshape({b, num_classes_ * stage_input_width(level), h, w});
}

DecoderOutput ClasswiseDecoderImpl::decode(const FusedPyramid& fused) {
  DecoderOutput out;
  const auto& deepest = fused.level(kNumLevels);
  auto attn = classwise_attention(deepest, queries);
  out.alpha = attn.alpha;
  out.attended = attn.attended;

  const auto b = deepest.size(0);
  const int64_t height = fused.level(1).size(2) * 2;
  const int64_t width = fused.level(1).size(3) * 2;

  out.levels.resize(kNumLevels);
  auto d = stages_[kNumLevels - 1]->forward(
      attn.attended.reshape({b, -1, deepest.size(2), deepest.size(3)}));
  out.levels[kNumLevels - 1] = d;
  for (int level = kNumLevels - 1; level >= 1; --level) {
    d = stages_[level - 1]->forward(stage_input(level, fused.level(level), d));
    out.levels[level - 1] = d;
  }
  for (int level = 1; level <= kNumLevels; ++level)
    out.aux_logits.push_back(upsample_to(aux_[level - 1]->forward(out.levels[level - 1]), height, width));
  out.penultimate = upsample_to(aggregate_->forward(out.levels[0]), height, width);
  return out;
}

PlainDecoderImpl::PlainDecoderImpl(int num_classes, int base_width) {
  for (int level = 1; level <= kNumLevels; ++level) {
    const int c = level_channels(base_width, level);
    const int in = level == kNumLevels ? c : c + level_channels(base_width, level + 1);
    stages_.push_back(register_module("stage" + std::to_string(level), conv_norm_relu(in, c)));
    aux_.push_back(
        register_module("aux" + std::to_string(level), nn::Conv2d(nn::Conv2dOptions(c, num_classes, 1))));
  }
  aggregate_ = register_module(
      "aggregate", conv_norm_relu(level_channels(base_width, 1), penultimate_channels(base_width)));
}

DecoderOutput PlainDecoderImpl::decode(const FusedPyramid& fused) {
  DecoderOutput out;
  const int64_t height = fused.level(1).size(2) * 2;
  const int64_t width = fused.level(1).size(3) * 2;
  out.levels.resize(kNumLevels);
  auto d = stages_[kNumLevels - 1]->forward(fused.level(kNumLevels));
  out.levels[kNumLevels - 1] = d;
  for (int level = kNumLevels - 1; level >= 1; --level) {
    d = stages_[level - 1]->forward(torch::cat({fused.level(level), upsample2x(d)}, 1));
    out.levels[level - 1] = d;
  }
  for (int level = 1; level <= kNumLevels; ++level)
    out.aux_logits.push_back(upsample_to(aux_[level - 1]->forward(out.levels[level - 1]), height, width));
  out.penultimate = upsample_to(aggregate_->forward(out.levels[0]), height, width);
  return out;
}

}  // namespace dis2
