#pragma once

#include <torch/torch.h>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dis2/types.h"

namespace dis2 {

inline constexpr double kLossEpsilon = 1e-8;

/// Orthogonality between Distinct and Supplement embeddings:
///   sum_i (1/N) sum_j cos^2(x_ij, x'_ij)
/// over levels i and batch samples j. Each entry is [N, D]. Zero vectors are
/// epsilon-guarded and yield cos = 0.
torch::Tensor orth_loss(std::span<const torch::Tensor> pooled_dist, std::span<const torch::Tensor> pooled_supp);

/// Per-level mean |cos| between two embedding sets (diagnostic).
std::vector<double> mean_abs_cosine(std::span<const torch::Tensor> a, std::span<const torch::Tensor> b);

/// Teacher representation from the full-modality pass and the same-role
/// student representation from the missing-modality pass.
struct DistillPair {
  torch::Tensor teacher;
  torch::Tensor student;
};

/// Squared L2 distance between student and stop-gradient(teacher). Dim 1 is
/// the feature axis: [N, D] vectors are compared per sample, [N, C, H, W] maps
/// per pixel; the result is averaged over every remaining axis.
torch::Tensor squared_distance(const DistillPair& pair);

/// Sum of `squared_distance` over the pooled level pairs (the deepest level is
/// represented by the fusion token) and the penultimate pair.
torch::Tensor feat_distill_loss(std::span<const DistillPair> level_pairs, const DistillPair& penultimate);

/// T^2 * KL(softmax(sg(z_full)/T) || softmax(z_miss/T)) over the class axis
/// (dim 1), averaged over pixels.
torch::Tensor logit_distill_loss(const torch::Tensor& z_full, const torch::Tensor& z_miss,
                                 double temperature = 2.0);

struct SegLossParts {
  torch::Tensor cross_entropy;  // class-weighted mean CE
  torch::Tensor dice;           // 1 - soft Dice, averaged over classes present in the label
  torch::Tensor total() const { return cross_entropy + dice; }
};

/// logits [B, K, H, W], label [B, H, W]. `class_weights` [K] may be undefined
/// (unit weights). Throws Error when a label value is outside [0, K).
SegLossParts seg_loss_parts(const torch::Tensor& logits, const torch::Tensor& label,
                            const torch::Tensor& class_weights = {});
torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& label,
                       const torch::Tensor& class_weights = {});

/// Inverse pixel frequency relative to a uniform distribution, clamped to
/// [0.1, 10] and renormalised to mean 1.
torch::Tensor class_weights_from_counts(std::span<const int64_t> counts);

struct LossCoefficients {
  double seg_full = 1.0;
  double seg_miss = 1.0;
  double orth = 1.0;
  double distill_feat = 1.0;
  double distill_logit = 1.0;
  double aux = 1.0;
  double uni = 1.0;
  double temperature = 2.0;
};

/// Raw loss terms for one step; absent terms are std::nullopt.
struct LossTerms {
  std::optional<torch::Tensor> seg_full, seg_miss, orth, distill_feat, distill_logit, aux, uni_rgir, uni_ndsm;
};

/// Weighted contribution of every term; `total` is their sum.
struct LossReport {
  double seg_full = 0, seg_miss = 0, orth = 0, distill_feat = 0, distill_logit = 0, aux = 0, uni_rgir = 0,
         uni_ndsm = 0, total = 0;
  ScenarioMask student_scenario = ScenarioMask::missing_ndsm();

  static std::string csv_header();
  std::string csv_row() const;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& term, LossReport report)
      : Error("non-finite loss term '" + term + "'"), term_(term), report_(report) {}

  const std::string& term() const { return term_; }
  const LossReport& report() const { return report_; }

 private:
  std::string term_;
  LossReport report_;
};

struct TotalLoss {
  torch::Tensor value;
  LossReport report;
};

/// total = seg_full + seg_miss + (orth + distill_feat + distill_logit) + uni_rgir + uni_ndsm + aux,
/// each scaled by its coefficient. With `dlkd_on` false the bracketed terms
/// are left out. Throws NonFiniteLoss naming the first non-finite term.
TotalLoss total_loss(const LossTerms& terms, const LossCoefficients& coefficients, bool dlkd_on);

}  // namespace dis2
