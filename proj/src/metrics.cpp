#include "dis2/metrics.h"

#include <cmath>
#include <limits>
#include <sstream>

namespace dis2 {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(torch::zeros({num_classes, num_classes}, torch::kInt64)) {
  if (num_classes < 1) throw Error("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const torch::Tensor& prediction, const torch::Tensor& label) {
  if (prediction.sizes() != label.sizes()) throw Error("confusion matrix: prediction/label shape mismatch");
  auto p = prediction.flatten().to(torch::kInt64);
  auto l = label.flatten().to(torch::kInt64);
  if (p.numel() == 0) return;
  if (p.min().item<int64_t>() < 0 || p.max().item<int64_t>() >= num_classes_ || l.min().item<int64_t>() < 0 ||
      l.max().item<int64_t>() >= num_classes_)
    throw Error("confusion matrix: class index out of range");
  auto flat = torch::bincount(l * num_classes_ + p, {}, num_classes_ * num_classes_);
  counts_ += flat.view({num_classes_, num_classes_});
}

int64_t ConfusionMatrix::total() const { return counts_.sum().item<int64_t>(); }

MetricsReport ConfusionMatrix::report(ScenarioMask scenario) const {
  MetricsReport r;
  r.scenario = scenario;
  r.confusion = counts_.clone();
  auto acc = counts_.accessor<int64_t, 2>();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  double f1_sum = 0.0, iou_sum = 0.0, correct = 0.0, all = 0.0;
  int defined = 0;
  for (int k = 0; k < num_classes_; ++k) {
    int64_t tp = acc[k][k], fp = 0, fn = 0;
    for (int j = 0; j < num_classes_; ++j) {
      all += static_cast<double>(acc[k][j]);
      if (j == k) continue;
      fp += acc[j][k];
      fn += acc[k][j];
    }
    correct += static_cast<double>(tp);
    const int64_t denom = tp + fp + fn;
    if (denom == 0) {
      r.f1.push_back(nan);
      r.iou.push_back(nan);
      continue;
    }
    const double f1 = 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    const double iou = 100.0 * static_cast<double>(tp) / static_cast<double>(denom);
    r.f1.push_back(f1);
    r.iou.push_back(iou);
    f1_sum += f1;
    iou_sum += iou;
    ++defined;
  }
  if (defined > 0) {
    r.mean_f1 = f1_sum / defined;
    r.mean_iou = iou_sum / defined;
  }
  r.overall_accuracy = all > 0 ? 100.0 * correct / all : 0.0;
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  auto number = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::json j;
  j["scenario"] = scenario.name();
  j["mF1"] = mean_f1;
  j["mIoU"] = mean_iou;
  j["overall_accuracy"] = overall_accuracy;
  auto& f = j["f1"] = nlohmann::json::array();
  auto& i = j["iou"] = nlohmann::json::array();
  for (size_t k = 0; k < f1.size(); ++k) {
    f.push_back(number(f1[k]));
    i.push_back(number(iou[k]));
  }
  auto& c = j["confusion"] = nlohmann::json::array();
  if (confusion.defined()) {
    auto acc = confusion.accessor<int64_t, 2>();
    for (int64_t r = 0; r < confusion.size(0); ++r) {
      auto row = nlohmann::json::array();
      for (int64_t col = 0; col < confusion.size(1); ++col) row.push_back(acc[r][col]);
      c.push_back(row);
    }
  }
  return j;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "scenario,class,f1,iou\n";
  for (size_t k = 0; k < f1.size(); ++k) os << scenario.name() << ',' << k << ',' << f1[k] << ',' << iou[k] << '\n';
  os << scenario.name() << ",mean," << mean_f1 << ',' << mean_iou << '\n';
  return os.str();
}

}  // namespace dis2
