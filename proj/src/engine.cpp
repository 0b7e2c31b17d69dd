#include "dis2/engine.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dis2 {

Dis2Net make_model(const ExperimentConfig& config) {
  torch::manual_seed(config.seed);
  return Dis2Net(config.model_config());
}

Trainer::Trainer(const ExperimentConfig& config, std::vector<SamplePatch> train_set)
    : Trainer(config, std::move(train_set), make_model(config)) {}

Trainer::Trainer(const ExperimentConfig& config, std::vector<SamplePatch> train_set, Dis2Net model)
    : config_(config), train_set_(std::move(train_set)), model_(std::move(model)), rng_(config.seed) {
  if (train_set_.empty()) throw DataError("training set is empty");
  if (model_->config().num_classes != config_.num_classes) throw ConfigError("model/config class count mismatch");
  optimizer_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(),
      torch::optim::AdamOptions(config_.optim.learning_rate).weight_decay(config_.optim.weight_decay));
  const auto counts = class_pixel_counts(train_set_, config_.num_classes);
  class_weights_ = class_weights_from_counts(counts);
  order_.resize(train_set_.size());
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = order_.size();
}

double Trainer::learning_rate_at(int step) const {
  const auto& o = config_.optim;
  if (o.steps <= 0) return o.learning_rate;
  if (step < o.warmup_steps) return o.learning_rate * static_cast<double>(step + 1) / o.warmup_steps;
  const double span = std::max(o.steps - o.warmup_steps, 1);
  const double t = std::clamp(static_cast<double>(step - o.warmup_steps) / span, 0.0, 1.0);
  return o.min_learning_rate + 0.5 * (o.learning_rate - o.min_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
}

Batch Trainer::next_batch() {
  const size_t n = std::min<size_t>(static_cast<size_t>(config_.optim.batch_size), train_set_.size());
  std::vector<int64_t> idx;
  while (idx.size() < n) {
    if (cursor_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    idx.push_back(order_[cursor_++]);
  }
  if (!config_.augment) return make_batch(train_set_, idx);
  std::vector<SamplePatch> augmented;
  for (auto i : idx) augmented.push_back(augment(train_set_[static_cast<size_t>(i)], rng_()));
  return make_batch(augmented);
}

StepForward step_forward(Dis2Net teacher, Dis2Net student, const Batch& batch, ScenarioMask student_scenario,
                         const LossCoefficients& c, bool dlkd, const torch::Tensor& class_weights) {
  if (student_scenario.is_full() || !student_scenario.legal())
    throw Error("student scenario must have exactly one modality missing");
  StepForward s;

  s.rgir_dist = teacher->encode(kRgirDist, batch.rgir);
  s.ndsm_dist = teacher->encode(kNdsmDist, batch.ndsm);
  s.full = teacher->forward_pyramids(route(ScenarioMask::full()), s.rgir_dist, s.ndsm_dist);

  const auto run = route(student_scenario);
  const Modality present = run.active_branches.first.modality;
  const auto& image = present == Modality::RGIR ? batch.rgir : batch.ndsm;
  FeaturePyramid distinct;
  if (teacher.ptr() == student.ptr())
    distinct = present == Modality::RGIR ? s.rgir_dist : s.ndsm_dist;
  else
    distinct = student->encode(run.active_branches.first, image);
  s.supplement = student->encode(run.active_branches.second, image);
  s.miss = student->forward_pyramids(run, distinct, s.supplement);

  auto seg = [&](const torch::Tensor& logits) { return seg_loss(logits, batch.label, class_weights); };
  auto& t = s.terms;
  if (c.seg_full != 0.0) t.seg_full = seg(s.full.logits);
  if (c.seg_miss != 0.0) t.seg_miss = seg(s.miss.logits);
  if (c.aux != 0.0) {
    torch::Tensor aux;
    for (const auto* pass : {&s.full, &s.miss})
      for (const auto& a : pass->decoded.aux_logits) aux = aux.defined() ? aux + seg(a) : seg(a);
    t.aux = aux;
  }
  if (c.uni != 0.0) {
    t.uni_rgir = seg(teacher->unimodal_logits(Modality::RGIR, s.rgir_dist));
    t.uni_ndsm = seg(teacher->unimodal_logits(Modality::NDSM, s.ndsm_dist));
  }
  if (dlkd) {
    auto pools = student->pools();
    if (c.orth != 0.0) t.orth = orth_loss(pools->pool_pyramid(distinct), pools->pool_pyramid(s.supplement));
    if (c.distill_feat != 0.0) {
      std::vector<DistillPair> pairs;
      for (int level = 1; level < kNumLevels; ++level)
        pairs.push_back({teacher->pools()->pool(level, s.full.fused.level(level)),
                         pools->pool(level, s.miss.fused.level(level))});
      pairs.push_back({s.full.fused.token, s.miss.fused.token});
      t.distill_feat = feat_distill_loss(pairs, {s.full.decoded.penultimate, s.miss.decoded.penultimate});
    }
    if (c.distill_logit != 0.0) t.distill_logit = logit_distill_loss(s.full.logits, s.miss.logits, c.temperature);
  }
  s.loss = total_loss(t, c, dlkd);
  s.loss.report.student_scenario = student_scenario;
  return s;
}

StepForward Trainer::forward_losses(const Batch& batch, ScenarioMask student) {
  return step_forward(model_, model_, batch, student, config_.loss, config_.toggles.dlkd, class_weights_);
}

LossReport Trainer::train_step(const Batch& batch, ScenarioMask student) {
  model_->train();
  for (auto& group : optimizer_->param_groups())
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(learning_rate_at(step_));
  optimizer_->zero_grad();
  auto s = forward_losses(batch, student);
  if (s.loss.value.requires_grad()) {
    s.loss.value.backward();
    if (config_.optim.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model_->parameters(), config_.optim.grad_clip);
    optimizer_->step();
  }
  ++step_;
  return s.loss.report;
}

LossReport Trainer::train_step() {
  auto batch = next_batch();
  return train_step(batch, next_scenario());
}

std::vector<LossReport> Trainer::fit(int steps, const std::function<void(int, const LossReport&)>& on_step) {
  std::vector<LossReport> out;
  out.reserve(static_cast<size_t>(std::max(steps, 0)));
  for (int i = 0; i < steps; ++i) {
    out.push_back(train_step());
    if (on_step) on_step(step_, out.back());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_batch(std::span<const SamplePatch> dataset, int batch_size, Fn&& fn) {
  if (dataset.empty()) throw DataError("dataset is empty");
  const size_t step = static_cast<size_t>(std::max(batch_size, 1));
  for (size_t start = 0; start < dataset.size(); start += step) {
    const auto count = std::min(step, dataset.size() - start);
    fn(make_batch(dataset.subspan(start, count)));
  }
}

ModalityInputs present_inputs(const Batch& batch, ScenarioMask scenario) {
  ModalityInputs in;
  if (scenario.rgir_present) in.rgir = batch.rgir;
  if (scenario.ndsm_present) in.ndsm = batch.ndsm;
  return in;
}

}  // namespace

MetricsReport evaluate(Dis2Net model, std::span<const SamplePatch> dataset, ScenarioMask scenario, int batch_size) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  torch::NoGradGuard no_grad;
  model->eval();
  ConfusionMatrix cm(model->config().num_classes);
  for_each_batch(dataset, batch_size, [&](const Batch& batch) {
    auto out = model->forward(present_inputs(batch, scenario), scenario);
    cm.add(out.logits.argmax(1), batch.label);
  });
  return cm.report(scenario);
}

double DistanceTable::get(ScenarioMask a, ScenarioMask b) const {
  if (a == b) return 0.0;
  for (const auto& e : entries)
    if ((e.a == a && e.b == b) || (e.a == b && e.b == a)) return e.distance;
  throw Error("no distance recorded for " + a.name() + " vs " + b.name());
}

nlohmann::json DistanceTable::to_json() const {
  auto j = nlohmann::json::array();
  for (const auto& e : entries) j.push_back({{"a", e.a.name()}, {"b", e.b.name()}, {"distance", e.distance}});
  return j;
}

std::string DistanceTable::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "scenario_a,scenario_b,distance\n";
  for (const auto& e : entries) os << e.a.name() << ',' << e.b.name() << ',' << e.distance << '\n';
  return os.str();
}

DistanceTable penultimate_distance(Dis2Net model, std::span<const SamplePatch> dataset, int batch_size) {
  torch::NoGradGuard no_grad;
  model->eval();
  constexpr std::array<std::pair<int, int>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
  std::array<double, 3> sums{0.0, 0.0, 0.0};
  int64_t count = 0;
  for_each_batch(dataset, batch_size, [&](const Batch& batch) {
    std::array<torch::Tensor, 3> z;
    for (size_t s = 0; s < kAllScenarios.size(); ++s)
      z[s] = model->forward(present_inputs(batch, kAllScenarios[s]), kAllScenarios[s]).decoded.penultimate.flatten(1);
    for (size_t p = 0; p < pairs.size(); ++p) {
      auto diff = z[pairs[p].first] - z[pairs[p].second];
      sums[p] += (diff.norm(2, 1) / static_cast<double>(diff.size(1))).sum().item<double>();
    }
    count += batch.size();
  });
  DistanceTable table;
  for (size_t p = 0; p < pairs.size(); ++p)
    table.entries.push_back({kAllScenarios[pairs[p].first], kAllScenarios[pairs[p].second], sums[p] / count});
  return table;
}

OrthogonalityStats pooled_orthogonality(Dis2Net model, std::span<const SamplePatch> dataset, int batch_size) {
  torch::NoGradGuard no_grad;
  model->eval();
  OrthogonalityStats stats;
  for (auto& v : stats.mean_abs_cos) v.assign(kNumLevels, 0.0);
  int64_t count = 0;
  auto pools = model->pools();
  for_each_batch(dataset, batch_size, [&](const Batch& batch) {
    for (int m = 0; m < 2; ++m) {
      const auto modality = kModalities[m];
      const auto& image = modality == Modality::RGIR ? batch.rgir : batch.ndsm;
      auto dist = pools->pool_pyramid(model->encode({modality, BranchKind::Dist}, image));
      auto supp = pools->pool_pyramid(model->encode({modality, BranchKind::Supp}, image));
      const auto cos = mean_abs_cosine(dist, supp);
      for (int l = 0; l < kNumLevels; ++l) stats.mean_abs_cos[m][l] += cos[l] * static_cast<double>(batch.size());
    }
    count += batch.size();
  });
  for (auto& v : stats.mean_abs_cos)
    for (auto& x : v) x /= static_cast<double>(count);
  return stats;
}

}  // namespace dis2
