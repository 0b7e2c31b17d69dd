#include "dis2/losses.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dis2 {

namespace F = torch::nn::functional;

namespace {

torch::Tensor guarded_norm(const torch::Tensor& x) {
  return torch::sqrt(x.pow(2).sum(1) + kLossEpsilon * kLossEpsilon);
}

torch::Tensor cosine(const torch::Tensor& a, const torch::Tensor& b) {
  return (a * b).sum(1) / (guarded_norm(a) * guarded_norm(b));
}

void check_levels(std::span<const torch::Tensor> a, std::span<const torch::Tensor> b) {
  if (a.size() != b.size()) throw Error("embedding sets have different level counts");
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].sizes() != b[i].sizes() || a[i].dim() != 2)
      throw Error("embedding shapes differ at level " + std::to_string(i + 1));
}

}  // namespace

torch::Tensor orth_loss(std::span<const torch::Tensor> pooled_dist, std::span<const torch::Tensor> pooled_supp) {
  check_levels(pooled_dist, pooled_supp);
  if (pooled_dist.empty()) throw Error("orth_loss: no levels");
  torch::Tensor total;
  for (size_t i = 0; i < pooled_dist.size(); ++i) {
    auto term = cosine(pooled_dist[i], pooled_supp[i]).pow(2).mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

std::vector<double> mean_abs_cosine(std::span<const torch::Tensor> a, std::span<const torch::Tensor> b) {
  check_levels(a, b);
  std::vector<double> out;
  for (size_t i = 0; i < a.size(); ++i) out.push_back(cosine(a[i], b[i]).abs().mean().item<double>());
  return out;
}

torch::Tensor squared_distance(const DistillPair& pair) {
  if (pair.teacher.sizes() != pair.student.sizes())
    throw Error("distillation pair shape mismatch: teacher " + c10::str(pair.teacher.sizes()) + " vs student " +
                c10::str(pair.student.sizes()));
  return (pair.student - pair.teacher.detach()).pow(2).sum(1).mean();
}

torch::Tensor feat_distill_loss(std::span<const DistillPair> level_pairs, const DistillPair& penultimate) {
  auto total = squared_distance(penultimate);
  for (const auto& p : level_pairs) total = total + squared_distance(p);
  return total;
}

torch::Tensor logit_distill_loss(const torch::Tensor& z_full, const torch::Tensor& z_miss, double temperature) {
  if (!(temperature > 0.0)) throw Error("distillation temperature must be positive");
  if (z_full.sizes() != z_miss.sizes()) throw Error("logit distillation: shape mismatch");
  auto teacher = z_full.detach() / temperature;
  auto log_t = torch::log_softmax(teacher, 1);
  auto log_s = torch::log_softmax(z_miss / temperature, 1);
  auto kl = (log_t.exp() * (log_t - log_s)).sum(1).mean();
  return kl * (temperature * temperature);
}

SegLossParts seg_loss_parts(const torch::Tensor& logits, const torch::Tensor& label,
                            const torch::Tensor& class_weights) {
  const auto k = logits.size(1);
  if (label.dim() != logits.dim() - 1) throw Error("seg_loss: label must be [B, H, W]");
  const auto lo = label.min().item<int64_t>();
  const auto hi = label.max().item<int64_t>();
  if (lo < 0 || hi >= k)
    throw Error("seg_loss: label value " + std::to_string(hi >= k ? hi : lo) + " outside [0, " +
                std::to_string(k) + ")");

  auto options = F::CrossEntropyFuncOptions();
  if (class_weights.defined()) options.weight(class_weights.to(logits.dtype()));
  auto ce = F::cross_entropy(logits, label, options);

  auto probs = torch::softmax(logits, 1);
  auto onehot = F::one_hot(label, k).permute({0, 3, 1, 2}).to(logits.dtype());
  std::vector<int64_t> reduce{0, 2, 3};
  auto inter = (probs * onehot).sum(reduce);
  auto pred_mass = probs.sum(reduce);
  auto true_mass = onehot.sum(reduce);
  auto dice = 1.0 - (2.0 * inter + kLossEpsilon) / (pred_mass + true_mass + kLossEpsilon);
  auto present = (true_mass > 0).to(logits.dtype());
  auto dice_loss = (dice * present).sum() / present.sum().clamp_min(1.0);
  return {ce, dice_loss};
}

torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& label, const torch::Tensor& class_weights) {
  return seg_loss_parts(logits, label, class_weights).total();
}

torch::Tensor class_weights_from_counts(std::span<const int64_t> counts) {
  const auto k = static_cast<int64_t>(counts.size());
  if (k == 0) throw Error("class weights: no classes");
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total <= 0.0) throw Error("class weights: empty label set");
  auto w = torch::empty({k}, torch::kFloat32);
  for (int64_t i = 0; i < k; ++i) {
    const double freq = static_cast<double>(counts[static_cast<size_t>(i)]) / total;
    const double inv = freq > 0.0 ? (1.0 / static_cast<double>(k)) / freq : 10.0;
    w[i] = std::clamp(inv, 0.1, 10.0);
  }
  return w / w.mean();
}

std::string LossReport::csv_header() {
  return "scenario,seg_full,seg_miss,orth,distill_feat,distill_logit,aux,uni_rgir,uni_ndsm,total";
}

std::string LossReport::csv_row() const {
  std::ostringstream os;
  os.precision(9);
  os << student_scenario.name() << ',' << seg_full << ',' << seg_miss << ',' << orth << ',' << distill_feat << ','
     << distill_logit << ',' << aux << ',' << uni_rgir << ',' << uni_ndsm << ',' << total;
  return os.str();
}

TotalLoss total_loss(const LossTerms& terms, const LossCoefficients& c, bool dlkd_on) {
  TotalLoss out;
  torch::Tensor total;
  auto add = [&](const std::optional<torch::Tensor>& term, double coef, double& slot, const char* name) {
    if (!term || coef == 0.0) return;
    auto v = *term * coef;
    slot = v.item<double>();
    if (!std::isfinite(slot)) throw NonFiniteLoss(name, out.report);
    total = total.defined() ? total + v : v;
  };
  add(terms.seg_full, c.seg_full, out.report.seg_full, "seg_full");
  add(terms.seg_miss, c.seg_miss, out.report.seg_miss, "seg_miss");
  if (dlkd_on) {
    add(terms.orth, c.orth, out.report.orth, "orth");
    add(terms.distill_feat, c.distill_feat, out.report.distill_feat, "distill_feat");
    add(terms.distill_logit, c.distill_logit, out.report.distill_logit, "distill_logit");
  }
  add(terms.uni_rgir, c.uni, out.report.uni_rgir, "uni_rgir");
  add(terms.uni_ndsm, c.uni, out.report.uni_ndsm, "uni_ndsm");
  add(terms.aux, c.aux, out.report.aux, "aux");
  out.value = total.defined() ? total : torch::zeros({});
  const auto& r = out.report;
  out.report.total =
      r.seg_full + r.seg_miss + r.orth + r.distill_feat + r.distill_logit + r.uni_rgir + r.uni_ndsm + r.aux;
  if (!std::isfinite(out.report.total) || !std::isfinite(out.value.item<double>())) throw NonFiniteLoss("total", out.report);
  return out;
}

}  // namespace dis2
