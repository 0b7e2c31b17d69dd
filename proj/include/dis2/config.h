#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

#include "dis2/data.h"
#include "dis2/losses.h"
#include "dis2/model.h"

namespace dis2 {

enum class DatasetSource { Synthetic, Isprs };

struct IsprsSettings {
  std::filesystem::path root;
  int stride = 512;
  ColorMap colors;
};

/// The ablation axes. Hybrid fusion is always present; `classwise` and `dlkd`
/// give the four rows HF, HF+CW, HF+DLKD, HF+CW+DLKD.
struct Toggles {
  bool classwise = true;
  bool dlkd = true;

  std::string name() const;
};

struct OptimizerSettings {
  double learning_rate = 2e-3;
  double min_learning_rate = 1e-4;  // end of the cosine decay
  double weight_decay = 0.0;
  double grad_clip = 5.0;           // global norm; <= 0 disables
  int warmup_steps = 0;             // linear ramp before the cosine decay
  int steps = 2000;
  int batch_size = 8;
};

struct ExperimentConfig {
  DatasetSource source = DatasetSource::Synthetic;
  SyntheticSpec synthetic = SyntheticSpec::defaults();
  int eval_patches = 16;  // held-out synthetic patches for eval/diagnose
  IsprsSettings isprs;

  int num_classes = 6;
  int patch_size = 64;
  int base_width = 8;
  Toggles toggles;
  LossCoefficients loss;
  OptimizerSettings optim;
  bool augment = true;
  uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/default";

  ModelConfig model_config() const;
  /// FNV-1a over the architecture-defining fields.
  uint64_t architecture_hash() const;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// A standalone synthetic spec (the `dataset.synthetic` section); missing
/// fields keep their defaults.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Training data for the configured source.
std::vector<SamplePatch> load_training_set(const ExperimentConfig& config);
/// Evaluation data: the ISPRS test split, or a synthetic set drawn with a
/// seed disjoint from the training one.
std::vector<SamplePatch> load_evaluation_set(const ExperimentConfig& config);

/// Default ISPRS colour legend (impervious, building, low vegetation, tree,
/// car, clutter).
ColorMap isprs_color_map();

}  // namespace dis2
