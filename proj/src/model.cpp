#include "dis2/model.h"

namespace dis2 {

namespace nn = torch::nn;

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
  if (base_width < 1) throw ConfigError("model: base_width must be >= 1");
  if (patch_size < 16 || patch_size % 16 != 0) throw ConfigError("model: patch_size must be a positive multiple of 16");
  if (transformer_layers < 1 || transformer_heads < 1) throw ConfigError("model: transformer needs layers and heads");
  if (level_channels(base_width, kNumLevels) % transformer_heads != 0)
    throw ConfigError("model: deepest width must be divisible by the transformer head count");
}

UnimodalHeadImpl::UnimodalHeadImpl(int num_classes, int base_width) {
  const int width = level_channels(base_width, 1);
  for (int level = 1; level <= kNumLevels; ++level)
    laterals_.push_back(register_module("lateral" + std::to_string(level),
                                        nn::Conv2d(nn::Conv2dOptions(level_channels(base_width, level), width, 1))));
  classifier_ = register_module("classifier", nn::Conv2d(nn::Conv2dOptions(width, num_classes, 1)));
}

torch::Tensor UnimodalHeadImpl::forward(const FeaturePyramid& pyramid) {
  auto y = laterals_[kNumLevels - 1]->forward(pyramid.level(kNumLevels));
  for (int level = kNumLevels - 1; level >= 1; --level) {
    const auto& x = pyramid.level(level);
    y = upsample_to(y, x.size(2), x.size(3)) + laterals_[level - 1]->forward(x);
  }
  auto logits = classifier_->forward(torch::relu(y));
  return upsample_to(logits, logits.size(2) * 2, logits.size(3) * 2);
}

Dis2NetImpl::Dis2NetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  for (auto branch : kAllBranches)
    encoders_[branch.index()] =
        register_module(branch.name(), Encoder(channels(branch.modality), config_.base_width));
  pools_ = register_module("pools", PoolBank(config_.base_width));
  fusion_ = register_module("fusion", HybridFusion(config_.base_width, config_.patch_size, config_.transformer_layers,
                                                   config_.transformer_heads));
  if (config_.classwise)
    decoder_ = register_module("decoder", std::make_shared<ClasswiseDecoderImpl>(config_.num_classes, config_.base_width));
  else
    decoder_ = register_module("decoder", std::make_shared<PlainDecoderImpl>(config_.num_classes, config_.base_width));
  head_ = register_module(
      "head", nn::Conv2d(nn::Conv2dOptions(penultimate_channels(config_.base_width), config_.num_classes, 1)));
  unimodal_[0] = register_module("uni_RGIR", UnimodalHead(config_.num_classes, config_.base_width));
  unimodal_[1] = register_module("uni_NDSM", UnimodalHead(config_.num_classes, config_.base_width));
}

FeaturePyramid Dis2NetImpl::encode(BranchId branch, const torch::Tensor& image) {
  if (!image.defined()) throw Error(branch.name() + ": input image for " + std::string(to_string(branch.modality)) + " is missing");
  return encoder(branch)->forward(image);
}

ScenarioOutput Dis2NetImpl::forward(const ModalityInputs& inputs, ScenarioMask scenario) {
  const auto run = route(scenario);
  auto first = encode(run.active_branches.first, inputs.get(run.active_branches.first.modality));
  auto second = encode(run.active_branches.second, inputs.get(run.active_branches.second.modality));
  return forward_pyramids(run, std::move(first), std::move(second));
}

ScenarioOutput Dis2NetImpl::forward_pyramids(const ScenarioRun& run, FeaturePyramid first, FeaturePyramid second) {
  ScenarioOutput out;
  out.run = run;
  out.fused = fusion_->forward(first, second);
  out.first = std::move(first);
  out.second = std::move(second);
  out.decoded = decoder_->decode(out.fused);
  out.logits = predict(out.decoded.penultimate);
  return out;
}

torch::Tensor Dis2NetImpl::predict(const torch::Tensor& penultimate) { return head_->forward(penultimate); }

torch::Tensor Dis2NetImpl::unimodal_logits(Modality modality, const FeaturePyramid& distinct) {
  return unimodal_[modality == Modality::RGIR ? 0 : 1]->forward(distinct);
}

ClasswiseDecoder Dis2NetImpl::classwise_decoder() {
  auto impl = std::dynamic_pointer_cast<ClasswiseDecoderImpl>(decoder_);
  if (!impl) throw Error("model was built without the classwise module");
  return ClasswiseDecoder(impl);
}

}  // namespace dis2
