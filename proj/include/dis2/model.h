#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>

#include "dis2/cflm.h"
#include "dis2/encoders.h"
#include "dis2/fusion.h"
#include "dis2/types.h"

namespace dis2 {

struct ModelConfig {
  int num_classes = 6;
  int base_width = 16;
  int patch_size = 64;
  bool classwise = true;  // false: plain decoder (classwise module ablated)
  int transformer_layers = 2;
  int transformer_heads = 4;

  void validate() const;
};

/// Images per modality; a modality that is absent in the scenario may be left
/// undefined and is never read.
struct ModalityInputs {
  torch::Tensor rgir;  // [B, 3, H, W]
  torch::Tensor ndsm;  // [B, 1, H, W]

  const torch::Tensor& get(Modality m) const { return m == Modality::RGIR ? rgir : ndsm; }
};

struct ScenarioOutput {
  ScenarioRun run;
  FeaturePyramid first;   // pyramid of run.active_branches.first
  FeaturePyramid second;  // pyramid of run.active_branches.second
  FusedPyramid fused;
  DecoderOutput decoded;
  torch::Tensor logits;  // [B, K, H, W]
};

/// Lightweight segmentation head over one modality's Distinct pyramid:
/// top-down 1x1 laterals with progressive upsampling, then a 1x1 classifier.
class UnimodalHeadImpl : public torch::nn::Module {
 public:
  UnimodalHeadImpl(int num_classes, int base_width);

  torch::Tensor forward(const FeaturePyramid& pyramid);

 private:
  std::vector<torch::nn::Conv2d> laterals_;
  torch::nn::Conv2d classifier_{nullptr};
};
TORCH_MODULE(UnimodalHead);

/// Four encoders (RGIR/NDSM x Distinct/Supplement), hierarchical hybrid
/// fusion, the classwise (or plain) decoder, the 1x1 prediction head, the
/// per-level attention pools and the unimodal heads.
class Dis2NetImpl : public torch::nn::Module {
 public:
  explicit Dis2NetImpl(const ModelConfig& config);

  FeaturePyramid encode(BranchId branch, const torch::Tensor& image);
  /// Routes the scenario to its branch pair and runs the full network.
  ScenarioOutput forward(const ModalityInputs& inputs, ScenarioMask scenario);
  /// Fusion onwards, for pyramids already computed by `encode`.
  ScenarioOutput forward_pyramids(const ScenarioRun& run, FeaturePyramid first, FeaturePyramid second);

  torch::Tensor predict(const torch::Tensor& penultimate);
  torch::Tensor unimodal_logits(Modality modality, const FeaturePyramid& distinct);

  Encoder encoder(BranchId branch) { return encoders_.at(static_cast<size_t>(branch.index())); }
  PoolBank pools() { return pools_; }
  HybridFusion fusion() { return fusion_; }
  DecoderBase& decoder() { return *decoder_; }
  /// Throws when the classwise module is disabled.
  ClasswiseDecoder classwise_decoder();
  torch::nn::Conv2d head() { return head_; }

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  std::array<Encoder, 4> encoders_{nullptr, nullptr, nullptr, nullptr};
  PoolBank pools_{nullptr};
  HybridFusion fusion_{nullptr};
  std::shared_ptr<DecoderBase> decoder_;
  torch::nn::Conv2d head_{nullptr};
  std::array<UnimodalHead, 2> unimodal_{nullptr, nullptr};
};
TORCH_MODULE(Dis2Net);

}  // namespace dis2
