#pragma once

#include <torch/torch.h>

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "dis2/config.h"
#include "dis2/data.h"
#include "dis2/losses.h"
#include "dis2/metrics.h"
#include "dis2/model.h"

namespace dis2 {

/// Builds a freshly initialised model for `config`, seeding libtorch with
/// config.seed first.
Dis2Net make_model(const ExperimentConfig& config);

/// Every forward product of one training step plus its loss terms.
struct StepForward {
  ScenarioOutput full;
  ScenarioOutput miss;
  FeaturePyramid rgir_dist;
  FeaturePyramid ndsm_dist;
  FeaturePyramid supplement;
  LossTerms terms;
  TotalLoss loss;
};

/// Losses for one dual pass. The full-modality (teacher) pass runs on
/// `teacher`, the missing-modality (student) pass on `student`. When both are
/// the same module the student reuses the teacher's Distinct pyramid, as in
/// training; distinct modules let a caller perturb the student alone.
StepForward step_forward(Dis2Net teacher, Dis2Net student, const Batch& batch, ScenarioMask student_scenario,
                         const LossCoefficients& coefficients, bool dlkd_on, const torch::Tensor& class_weights);

/// Dual-pass trainer. Teacher (full modality) and student (one missing
/// scenario per step) share one parameter set; the teacher enters the
/// distillation terms through a stop-gradient but is still trained by its own
/// segmentation loss.
class Trainer {
 public:
  Trainer(const ExperimentConfig& config, std::vector<SamplePatch> train_set);
  Trainer(const ExperimentConfig& config, std::vector<SamplePatch> train_set, Dis2Net model);

  /// Forward + losses, no parameter update.
  StepForward forward_losses(const Batch& batch, ScenarioMask student);

  /// One optimiser update on a sampled batch with a sampled student scenario.
  LossReport train_step();
  /// One optimiser update on the given batch and scenario.
  LossReport train_step(const Batch& batch, ScenarioMask student);

  /// Runs `steps` updates; `on_step(step, report)` after each.
  std::vector<LossReport> fit(int steps, const std::function<void(int, const LossReport&)>& on_step = {});

  Batch next_batch();
  ScenarioMask next_scenario() { return sample_training_mask(rng_); }

  Dis2Net model() { return model_; }
  const ExperimentConfig& config() const { return config_; }
  const torch::Tensor& class_weights() const { return class_weights_; }
  int step() const { return step_; }
  double learning_rate_at(int step) const;

 private:
  ExperimentConfig config_;
  std::vector<SamplePatch> train_set_;
  Dis2Net model_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  torch::Tensor class_weights_;
  std::mt19937_64 rng_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
  int step_ = 0;
};

/// Accumulates one confusion matrix over all patches under `scenario`. The
/// absent modality is never passed to the model.
MetricsReport evaluate(Dis2Net model, std::span<const SamplePatch> dataset, ScenarioMask scenario,
                       int batch_size = 8);

struct ScenarioDistance {
  ScenarioMask a;
  ScenarioMask b;
  double distance = 0.0;
};

/// Mean over patches of ||Z_a - Z_b||_2 / numel(Z) for every scenario pair.
struct DistanceTable {
  std::vector<ScenarioDistance> entries;

  double get(ScenarioMask a, ScenarioMask b) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

DistanceTable penultimate_distance(Dis2Net model, std::span<const SamplePatch> dataset, int batch_size = 8);

/// Mean |cos| between pooled Distinct and Supplement embeddings, per modality
/// (RGIR, NDSM) and level.
struct OrthogonalityStats {
  std::array<std::vector<double>, 2> mean_abs_cos;
};

OrthogonalityStats pooled_orthogonality(Dis2Net model, std::span<const SamplePatch> dataset, int batch_size = 8);

}  // namespace dis2
