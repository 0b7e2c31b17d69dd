#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <string>
#include <vector>

#include "dis2/types.h"

namespace dis2 {

/// Class-wise F1 and IoU (percent) derived from a confusion matrix whose rows
/// are true classes and columns predicted classes. A class with
/// TP + FP + FN = 0 has no defined score: it is reported as NaN and left out
/// of the means.
struct MetricsReport {
  ScenarioMask scenario;
  std::vector<double> f1;
  std::vector<double> iou;
  double mean_f1 = 0.0;
  double mean_iou = 0.0;
  double overall_accuracy = 0.0;
  torch::Tensor confusion;  // int64 [K, K]

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  /// prediction and label are integer tensors of identical shape.
  void add(const torch::Tensor& prediction, const torch::Tensor& label);
  int64_t total() const;
  const torch::Tensor& counts() const { return counts_; }

  MetricsReport report(ScenarioMask scenario = ScenarioMask::full()) const;

 private:
  int num_classes_;
  torch::Tensor counts_;
};

}  // namespace dis2
