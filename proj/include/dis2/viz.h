#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <vector>

#include "dis2/data.h"
#include "dis2/engine.h"
#include "dis2/model.h"

namespace dis2 {

/// Images are 8-bit PNGs rendered with OpenCV's VIRIDIS colormap after
/// min-max scaling to [0, 1]. Every image is paired with a CSV dump of the
/// numbers it was rendered from; the dumps are the source of truth.
struct VizArtifacts {
  std::vector<std::filesystem::path> images;
  std::vector<std::filesystem::path> dumps;
};

/// Writes a [rows, cols] real matrix as CSV with 9 significant digits.
void write_matrix_csv(const std::filesystem::path& path, const torch::Tensor& matrix);
/// Min-max scales to [0, 1] (constant maps become 0).
torch::Tensor normalise_unit(const torch::Tensor& map);
/// Renders a [rows, cols] map in [0, 1] through the fixed colormap; each cell
/// becomes a scale x scale block.
void write_heatmap_png(const std::filesystem::path& path, const torch::Tensor& unit_map, int scale = 1);

/// Classwise attention maps for one patch: one image per class (or only
/// `only_class`), upsampled to the patch size, plus the raw [K, N] alpha dump.
VizArtifacts emit_cwam(Dis2Net model, const SamplePatch& patch, ScenarioMask scenario,
                       const std::filesystem::path& out_dir, std::optional<int> only_class = std::nullopt);

/// Channel-mean absolute activation at each pyramid level for both active
/// branches of the scenario (2 branches x 4 levels).
VizArtifacts emit_branch_activations(Dis2Net model, const SamplePatch& patch, ScenarioMask scenario,
                                     const std::filesystem::path& out_dir);

/// The K x C class-query matrix, rows normalised individually.
VizArtifacts emit_query_heatmap(Dis2Net model, const std::filesystem::path& out_dir);

VizArtifacts emit_distance_table(const DistanceTable& table, const std::filesystem::path& out_dir);

}  // namespace dis2
