#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dis2/types.h"

namespace dis2 {

/// One co-registered two-modality patch with dense labels.
///   rgir  float32 [3, H, W] in [0, 1]
///   ndsm  float32 [1, H, W] in [0, 1]
///   label int64   [H, W]    in [0, K)
struct SamplePatch {
  torch::Tensor rgir;
  torch::Tensor ndsm;
  torch::Tensor label;
  std::string patch_id;

  int64_t height() const { return label.size(0); }
  int64_t width() const { return label.size(1); }
};

/// A stacked mini-batch: rgir [B,3,H,W], ndsm [B,1,H,W], label [B,H,W].
struct Batch {
  torch::Tensor rgir;
  torch::Tensor ndsm;
  torch::Tensor label;

  int64_t size() const { return label.size(0); }
};

Batch make_batch(std::span<const SamplePatch> patches, std::span<const int64_t> indices);
Batch make_batch(std::span<const SamplePatch> patches);

/// Which modality carries a synthetic class's signal.
enum class SignalAssignment { SpectralOnly, HeightOnly, Both };

std::string to_string(SignalAssignment s);
SignalAssignment parse_signal_assignment(const std::string& s);

/// Recipe for the deterministic synthetic stand-in dataset.
///
/// Class 0 is the background fill: it defines the base spectral and height
/// statistics, so its own signal assignment is not used. Every other class
/// deviates from background only in the modality named by its assignment.
struct SyntheticSpec {
  int num_classes = 6;
  int patch_size = 64;
  int num_patches = 16;
  uint64_t seed = 7;
  std::vector<double> class_frequency;
  std::vector<SignalAssignment> signal_assignment;

  /// K=6 layout mirroring the ISPRS class count, with one rare (~1%) class.
  static SyntheticSpec defaults();
  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Deterministic in spec.seed. Throws DataError if the class frequencies
/// cannot be packed into a patch of the requested size.
std::vector<SamplePatch> generate_synthetic(const SyntheticSpec& spec);

/// Per-class pixel counts over a set of patches.
std::vector<int64_t> class_pixel_counts(std::span<const SamplePatch> patches, int num_classes);

// ---------------------------------------------------------------------------
// ISPRS-style tile directories

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Label colour -> class index. Index i of `colors` is class i.
struct ColorMap {
  std::vector<std::array<uint8_t, 3>> colors;  // RGB

  int lookup(std::array<uint8_t, 3> rgb) const;  // -1 if unknown
};

/// Window origins along one axis: multiples of stride, plus a final window
/// clamped against the far edge, deduplicated.
std::vector<int64_t> window_origins(int64_t extent, int64_t patch_size, int64_t stride);

/// Reads `<root>/<split>/{rgir,ndsm,label}/<tile_id>.<ext>` and cuts every
/// tile into patch_size windows at the given stride. Each modality is min-max
/// normalised per tile.
std::vector<SamplePatch> load_isprs_tiles(const std::filesystem::path& root, Split split,
                                          int patch_size, int stride, const ColorMap& colors);

/// Writes patches in the layout `load_isprs_tiles` reads back (PNG; NDSM at
/// 16 bit).
void write_isprs_tiles(const std::filesystem::path& root, Split split,
                       std::span<const SamplePatch> patches, const ColorMap& colors);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;            // quarter turns, counter-clockwise
  double brightness = 0.0;  // additive, rgir only
  double contrast = 1.0;    // multiplicative about 0.5, rgir only

  bool is_identity() const {
    return !hflip && !vflip && rot90 == 0 && brightness == 0.0 && contrast == 1.0;
  }
};

AugmentDraw draw_augmentation(uint64_t seed);
/// Geometric part applied identically to all three maps; jitter to rgir only.
SamplePatch apply_augmentation(const SamplePatch& patch, const AugmentDraw& draw);
SamplePatch augment(const SamplePatch& patch, uint64_t seed);

/// Training-time scenario: missing NDSM or missing RGIR, each with p = 0.5.
ScenarioMask sample_training_mask(std::mt19937_64& rng);

}  // namespace dis2
