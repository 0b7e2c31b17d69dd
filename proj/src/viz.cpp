#include "dis2/viz.h"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <fstream>

namespace dis2 {

namespace fs = std::filesystem;

void write_matrix_csv(const fs::path& path, const torch::Tensor& matrix) {
  auto m = matrix.detach().to(torch::kFloat64).contiguous();
  if (m.dim() == 1) m = m.unsqueeze(0);
  if (m.dim() != 2) throw Error("write_matrix_csv expects a matrix");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  auto acc = m.accessor<double, 2>();
  char buf[32];
  for (int64_t r = 0; r < m.size(0); ++r) {
    for (int64_t c = 0; c < m.size(1); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", acc[r][c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

torch::Tensor normalise_unit(const torch::Tensor& map) {
  auto m = map.detach().to(torch::kFloat32);
  const auto lo = m.min();
  const auto range = (m.max() - lo).item<float>();
  if (range <= 0.0f) return torch::zeros_like(m);
  return (m - lo) / range;
}

void write_heatmap_png(const fs::path& path, const torch::Tensor& unit_map, int scale) {
  auto bytes = (unit_map.detach().to(torch::kFloat32).clamp(0, 1) * 255.0).round().to(torch::kUInt8).contiguous();
  if (bytes.dim() != 2) throw Error("heatmap must be 2-D");
  cv::Mat gray(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1, bytes.data_ptr<uint8_t>());
  cv::Mat big;
  cv::resize(gray, big, cv::Size(), scale, scale, cv::INTER_NEAREST);
  cv::Mat color;
  cv::applyColorMap(big, color, cv::COLORMAP_VIRIDIS);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), color)) throw Error("cannot write " + path.string());
}

namespace {

ModalityInputs single_patch_inputs(const SamplePatch& patch, ScenarioMask scenario) {
  ModalityInputs in;
  if (scenario.rgir_present) in.rgir = patch.rgir.unsqueeze(0);
  if (scenario.ndsm_present) in.ndsm = patch.ndsm.unsqueeze(0);
  return in;
}

}  // namespace

VizArtifacts emit_cwam(Dis2Net model, const SamplePatch& patch, ScenarioMask scenario, const fs::path& out_dir,
                       std::optional<int> only_class) {
  const int k_total = model->config().num_classes;
  if (only_class && (*only_class < 0 || *only_class >= k_total))
    throw Error("class index " + std::to_string(*only_class) + " out of range [0, " + std::to_string(k_total) + ")");
  model->classwise_decoder();  // throws without the classwise module

  torch::NoGradGuard no_grad;
  model->eval();
  auto out = model->forward(single_patch_inputs(patch, scenario), scenario);
  auto alpha = out.decoded.alpha[0];  // [K, N]
  const auto h = out.fused.level(kNumLevels).size(2);
  const auto w = out.fused.level(kNumLevels).size(3);

  VizArtifacts art;
  const auto prefix = "cwam_" + scenario.name();
  const auto dump = out_dir / (prefix + "_alpha.csv");
  write_matrix_csv(dump, alpha);
  art.dumps.push_back(dump);
  for (int k = 0; k < k_total; ++k) {
    if (only_class && k != *only_class) continue;
    auto map = alpha[k].view({1, 1, h, w});
    auto up = upsample_to(map, patch.height(), patch.width())[0][0];
    const auto img = out_dir / (prefix + "_class" + std::to_string(k) + ".png");
    write_heatmap_png(img, normalise_unit(up));
    art.images.push_back(img);
  }
  return art;
}

VizArtifacts emit_branch_activations(Dis2Net model, const SamplePatch& patch, ScenarioMask scenario,
                                     const fs::path& out_dir) {
  torch::NoGradGuard no_grad;
  model->eval();
  const auto run = route(scenario);
  const auto in = single_patch_inputs(patch, scenario);
  VizArtifacts art;
  for (auto branch : {run.active_branches.first, run.active_branches.second}) {
    auto pyramid = model->encode(branch, in.get(branch.modality));
    for (int level = 1; level <= kNumLevels; ++level) {
      auto act = pyramid.level(level)[0].abs().mean(0);  // [h, w]
      const auto stem = "branches_" + scenario.name() + "_L" + std::to_string(level) + "_" + branch.name();
      const auto dump = out_dir / (stem + ".csv");
      const auto img = out_dir / (stem + ".png");
      write_matrix_csv(dump, act);
      write_heatmap_png(img, normalise_unit(act));
      art.dumps.push_back(dump);
      art.images.push_back(img);
    }
  }
  return art;
}

VizArtifacts emit_query_heatmap(Dis2Net model, const fs::path& out_dir) {
  auto queries = model->classwise_decoder()->queries.detach();
  auto lo = std::get<0>(queries.min(1, true));
  auto hi = std::get<0>(queries.max(1, true));
  auto rows = (queries - lo) / (hi - lo).clamp_min(1e-12);
  VizArtifacts art;
  const auto dump = out_dir / "query_heatmap.csv";
  const auto img = out_dir / "query_heatmap.png";
  write_matrix_csv(dump, queries);
  write_heatmap_png(img, rows, 8);
  art.dumps.push_back(dump);
  art.images.push_back(img);
  return art;
}

VizArtifacts emit_distance_table(const DistanceTable& table, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  VizArtifacts art;
  const auto csv = out_dir / "penultimate_distance.csv";
  const auto json = out_dir / "penultimate_distance.json";
  std::ofstream(csv) << table.to_csv();
  std::ofstream(json) << table.to_json().dump(2) << '\n';
  art.dumps = {csv, json};
  return art;
}

}  // namespace dis2
