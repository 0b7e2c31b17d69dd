#pragma once

#include <torch/torch.h>

#include <memory>
#include <vector>

#include "dis2/fusion.h"

namespace dis2 {

/// Everything a decoder produces for one forward pass.
///
/// For the classwise decoder `levels[l-1]` holds D_k^l for all classes stacked
/// along channels ([B, K*w_l, h_l, w_l], class k in channels [k*w_l, (k+1)*w_l)).
/// `alpha` and `attended` are undefined for the plain decoder.
struct DecoderOutput {
  torch::Tensor alpha;     // [B, K, N]
  torch::Tensor attended;  // [B, K, C, h, w]
  std::vector<torch::Tensor> levels;
  torch::Tensor penultimate;              // Z, [B, C, H, W]
  std::vector<torch::Tensor> aux_logits;  // per level, [B, K, H, W]
};

struct ClasswiseAttention {
  torch::Tensor alpha;     // [B, K, N], softmax over N
  torch::Tensor attended;  // [B, K, C, h, w]
};

/// alpha_k = softmax_p(q_k . F[:, p] / sqrt(C)); M_k = N * alpha_k (.) F, with
/// alpha broadcast over channels so that uniform attention is the identity.
ClasswiseAttention classwise_attention(const torch::Tensor& deepest, const torch::Tensor& queries);

/// Per-class decoder width at level l.
int class_decoder_width(int base_width, int level);

/// Channel width of the penultimate map Z.
constexpr int penultimate_channels(int base_width) { return level_channels(base_width, kNumLevels); }

class DecoderBase : public torch::nn::Module {
 public:
  virtual DecoderOutput decode(const FusedPyramid& fused) = 0;
};

/// Learnable class queries, classwise attention over F_4 and a per-class
/// hierarchical decoder. All K per-class blocks run as one grouped
/// convolution; group k owns class k's parameters.
class ClasswiseDecoderImpl : public DecoderBase {
 public:
  ClasswiseDecoderImpl(int num_classes, int base_width);

  DecoderOutput decode(const FusedPyramid& fused) override;
  DecoderOutput forward(const FusedPyramid& fused) { return decode(fused); }

  /// Decoder stage for level l: depthwise 3x3 -> grouped pointwise -> ReLU.
  torch::nn::Sequential stage(int level) { return stages_.at(static_cast<size_t>(level - 1)); }
  /// Input channels seen by one class at level l.
  int stage_input_width(int level) const;

  torch::Tensor queries;  // [K, C]

 private:
  torch::Tensor stage_input(int level, const torch::Tensor& fused, const torch::Tensor& deeper) const;

  int num_classes_;
  int base_width_;
  std::vector<torch::nn::Sequential> stages_;
  std::vector<torch::nn::Conv2d> aux_;
  torch::nn::Sequential aggregate_{nullptr};
};
TORCH_MODULE(ClasswiseDecoder);

/// Non-classwise decoder used when the classwise module is ablated: a plain
/// UNet expanding path over the fused pyramid with the same outputs.
class PlainDecoderImpl : public DecoderBase {
 public:
  PlainDecoderImpl(int num_classes, int base_width);

  DecoderOutput decode(const FusedPyramid& fused) override;
  DecoderOutput forward(const FusedPyramid& fused) { return decode(fused); }

 private:
  std::vector<torch::nn::Sequential> stages_;
  std::vector<torch::nn::Conv2d> aux_;
  torch::nn::Sequential aggregate_{nullptr};
};
TORCH_MODULE(PlainDecoder);

/// Bilinear resize to (height, width).
torch::Tensor upsample_to(const torch::Tensor& x, int64_t height, int64_t width);

}  // namespace dis2
