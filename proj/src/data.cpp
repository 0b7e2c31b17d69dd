#include "dis2/data.h"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace dis2 {

namespace fs = std::filesystem;

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Zero channel-sum colour shifts: spectral classes differ from background in
// hue only, so the channel-mean of a pixel carries no class information.
constexpr std::array<std::array<double, 3>, 6> kSpectralOffsets{{
    {0.18, -0.09, -0.09},
    {-0.09, 0.18, -0.09},
    {-0.09, -0.09, 0.18},
    {0.12, 0.06, -0.18},
    {-0.18, 0.12, 0.06},
    {0.06, -0.18, 0.12},
}};

constexpr std::array<double, 3> kBaseColor{0.45, 0.50, 0.55};
constexpr double kSpectralNoise = 0.04;
constexpr double kGroundLevel = 0.10;
constexpr double kHeightNoise = 0.03;
constexpr double kPatchJitter = 0.03;

struct ClassAppearance {
  std::array<double, 3> offset{0.0, 0.0, 0.0};
  double height = 0.0;
};

std::vector<ClassAppearance> class_appearance(const SyntheticSpec& spec) {
  std::vector<ClassAppearance> out(spec.num_classes);
  int n_height = 0;
  for (int k = 1; k < spec.num_classes; ++k)
    if (spec.signal_assignment[k] != SignalAssignment::SpectralOnly) ++n_height;
  int spectral_idx = 0;
  int height_idx = 0;
  for (int k = 1; k < spec.num_classes; ++k) {
    const auto s = spec.signal_assignment[k];
    if (s != SignalAssignment::HeightOnly) {
      const auto& base = kSpectralOffsets[spectral_idx % kSpectralOffsets.size()];
      const double scale = 1.0 + 0.5 * static_cast<double>(spectral_idx / kSpectralOffsets.size());
      for (int c = 0; c < 3; ++c) out[k].offset[c] = base[c] * scale;
      ++spectral_idx;
    }
    if (s != SignalAssignment::SpectralOnly) {
      out[k].height = 0.25 + 0.6 * static_cast<double>(height_idx + 1) / n_height;
      ++height_idx;
    }
  }
  return out;
}

// Places axis-aligned rectangles of class k onto background pixels until
// exactly `target` pixels carry the class.
void place_class(std::vector<int64_t>& label, int size, int k, int64_t target,
                 std::mt19937_64& rng) {
  const double side = std::sqrt(static_cast<double>(target));
  const int max_side = std::clamp(static_cast<int>(std::lround(side / 1.5)), 2, std::max(2, size / 2));
  const int min_side = std::max(2, max_side / 2);
  std::uniform_int_distribution<int> side_dist(min_side, max_side);

  int64_t placed = 0;
  for (int attempt = 0; placed < target; ++attempt) {
    if (attempt > 20000)
      throw DataError("synthetic generator: cannot pack class " + std::to_string(k) +
                      " into a " + std::to_string(size) + "x" + std::to_string(size) + " patch");
    const int h = std::min(side_dist(rng), size);
    const int w = std::min(side_dist(rng), size);
    std::uniform_int_distribution<int> y_dist(0, size - h);
    std::uniform_int_distribution<int> x_dist(0, size - w);
    const int y0 = y_dist(rng);
    const int x0 = x_dist(rng);
    for (int y = y0; y < y0 + h && placed < target; ++y)
      for (int x = x0; x < x0 + w && placed < target; ++x) {
        auto& v = label[static_cast<size_t>(y) * size + x];
        if (v == 0) {
          v = k;
          ++placed;
        }
      }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Batch make_batch(std::span<const SamplePatch> patches, std::span<const int64_t> indices) {
  if (indices.empty()) throw DataError("make_batch: empty batch");
  std::vector<torch::Tensor> rgir, ndsm, label;
  for (auto i : indices) {
    const auto& p = patches[static_cast<size_t>(i)];
    rgir.push_back(p.rgir);
    ndsm.push_back(p.ndsm);
    label.push_back(p.label);
  }
  return {torch::stack(rgir), torch::stack(ndsm), torch::stack(label)};
}

Batch make_batch(std::span<const SamplePatch> patches) {
  std::vector<int64_t> idx(patches.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(patches, idx);
}

std::string to_string(SignalAssignment s) {
  switch (s) {
    case SignalAssignment::SpectralOnly: return "SPECTRAL_ONLY";
    case SignalAssignment::HeightOnly: return "HEIGHT_ONLY";
    case SignalAssignment::Both: return "BOTH";
  }
  return "?";
}

SignalAssignment parse_signal_assignment(const std::string& s) {
  if (s == "SPECTRAL_ONLY") return SignalAssignment::SpectralOnly;
  if (s == "HEIGHT_ONLY") return SignalAssignment::HeightOnly;
  if (s == "BOTH") return SignalAssignment::Both;
  throw ConfigError("unknown signal assignment '" + s + "'");
}

SyntheticSpec SyntheticSpec::defaults() {
  SyntheticSpec spec;
  spec.class_frequency = {0.36, 0.20, 0.15, 0.16, 0.12, 0.01};
  spec.signal_assignment = {SignalAssignment::Both,         SignalAssignment::SpectralOnly,
                            SignalAssignment::HeightOnly,   SignalAssignment::Both,
                            SignalAssignment::SpectralOnly, SignalAssignment::Both};
  return spec;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic spec: num_classes must be >= 2");
  if (patch_size < 2) throw ConfigError("synthetic spec: patch_size must be >= 2");
  if (num_patches < 1) throw ConfigError("synthetic spec: num_patches must be >= 1");
  if (static_cast<int>(class_frequency.size()) != num_classes)
    throw ConfigError("synthetic spec: class_frequency needs one entry per class");
  if (static_cast<int>(signal_assignment.size()) != num_classes)
    throw ConfigError("synthetic spec: signal_assignment needs one entry per class");
  double sum = 0.0;
  for (double f : class_frequency) {
    if (!(f >= 0.0)) throw ConfigError("synthetic spec: negative class frequency");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ConfigError("synthetic spec: class frequencies sum to " + std::to_string(sum));
  bool spectral = false, height = false;
  for (int k = 1; k < num_classes; ++k) {
    spectral |= signal_assignment[k] == SignalAssignment::SpectralOnly;
    height |= signal_assignment[k] == SignalAssignment::HeightOnly;
  }
  if (!spectral || !height)
    throw ConfigError(
        "synthetic spec: need at least one SPECTRAL_ONLY and one HEIGHT_ONLY non-background class");
}

std::vector<SamplePatch> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int size = spec.patch_size;
  const int64_t area = static_cast<int64_t>(size) * size;

  std::vector<int64_t> targets(spec.num_classes, 0);
  int64_t foreground = 0;
  for (int k = 1; k < spec.num_classes; ++k) {
    targets[k] = std::llround(spec.class_frequency[k] * static_cast<double>(area));
    if (spec.class_frequency[k] > 0.0 && targets[k] == 0)
      throw DataError("synthetic generator: class " + std::to_string(k) + " frequency " +
                      std::to_string(spec.class_frequency[k]) + " is below one pixel at patch size " +
                      std::to_string(size));
    foreground += targets[k];
  }
  if (foreground > area) throw DataError("synthetic generator: class frequencies overflow the patch");

  // Rarest classes first so small objects stay intact.
  std::vector<int> order(spec.num_classes - 1);
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return spec.class_frequency[a] < spec.class_frequency[b]; });

  const auto look = class_appearance(spec);
  std::vector<SamplePatch> out;
  out.reserve(spec.num_patches);
  for (int n = 0; n < spec.num_patches; ++n) {
    std::mt19937_64 rng(splitmix64(spec.seed * 0x100000001b3ULL + static_cast<uint64_t>(n)));
    std::vector<int64_t> label(static_cast<size_t>(area), 0);
    for (int k : order)
      if (targets[k] > 0) place_class(label, size, k, targets[k], rng);

    std::normal_distribution<double> spectral_noise(0.0, kSpectralNoise);
    std::normal_distribution<double> height_noise(0.0, kHeightNoise);
    std::uniform_real_distribution<double> jitter(-kPatchJitter, kPatchJitter);
    const double tint = jitter(rng);
    const double ground = kGroundLevel + jitter(rng);

    auto rgir = torch::empty({3, size, size}, torch::kFloat32);
    auto ndsm = torch::empty({1, size, size}, torch::kFloat32);
    auto rgir_a = rgir.accessor<float, 3>();
    auto ndsm_a = ndsm.accessor<float, 3>();
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const auto k = label[static_cast<size_t>(y) * size + x];
        for (int c = 0; c < 3; ++c) {
          const double v = kBaseColor[c] + tint + look[k].offset[c] + spectral_noise(rng);
          rgir_a[c][y][x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        const double h = ground + look[k].height + height_noise(rng);
        ndsm_a[0][y][x] = static_cast<float>(std::clamp(h, 0.0, 1.0));
      }

    auto label_t = torch::from_blob(label.data(), {size, size}, torch::kInt64).clone();
    out.push_back({rgir, ndsm, label_t, "synthetic_" + std::to_string(spec.seed) + "_" + std::to_string(n)});
  }
  return out;
}

std::vector<int64_t> class_pixel_counts(std::span<const SamplePatch> patches, int num_classes) {
  std::vector<int64_t> counts(num_classes, 0);
  for (const auto& p : patches) {
    auto c = torch::bincount(p.label.flatten(), {}, num_classes);
    auto acc = c.accessor<int64_t, 1>();
    if (c.size(0) > num_classes) throw DataError("patch " + p.patch_id + ": label value >= K");
    for (int k = 0; k < num_classes; ++k) counts[k] += acc[k];
  }
  return counts;
}

// ---------------------------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

int ColorMap::lookup(std::array<uint8_t, 3> rgb) const {
  for (size_t i = 0; i < colors.size(); ++i)
    if (colors[i] == rgb) return static_cast<int>(i);
  return -1;
}

std::vector<int64_t> window_origins(int64_t extent, int64_t patch_size, int64_t stride) {
  if (patch_size <= 0 || stride <= 0) throw DataError("window_origins: patch size and stride must be positive");
  if (extent < patch_size)
    throw DataError("tile extent " + std::to_string(extent) + " is smaller than patch size " +
                    std::to_string(patch_size));
  std::vector<int64_t> origins;
  for (int64_t o = 0; o + patch_size <= extent; o += stride) origins.push_back(o);
  const int64_t last = extent - patch_size;
  if (origins.back() != last) origins.push_back(last);
  return origins;
}

namespace {

std::optional<fs::path> find_stem(const fs::path& dir, const std::string& stem) {
  if (!fs::is_directory(dir)) return std::nullopt;
  std::vector<fs::path> hits;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().stem() == stem) hits.push_back(e.path());
  if (hits.empty()) return std::nullopt;
  std::sort(hits.begin(), hits.end());
  return hits.front();
}

cv::Mat read_image(const fs::path& p) {
  cv::Mat m = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot decode image " + p.string());
  return m;
}

// Converts to float CHW and min-max normalises across all channels.
torch::Tensor normalised_chw(const cv::Mat& img, int expected_channels, const std::string& what) {
  cv::Mat m = img;
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (expected_channels == 1 && m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2GRAY);
  if (m.channels() != expected_channels)
    throw DataError(what + ": expected " + std::to_string(expected_channels) + " channels, found " +
                    std::to_string(m.channels()));
  if (expected_channels == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  cv::Mat f;
  m.convertTo(f, CV_32F);
  auto hwc = torch::from_blob(f.data, {f.rows, f.cols, expected_channels}, torch::kFloat32).clone();
  auto chw = hwc.permute({2, 0, 1}).contiguous();
  const auto lo = chw.min();
  const auto range = chw.max() - lo;
  if (range.item<float>() <= 0.0f) return torch::zeros_like(chw);
  return (chw - lo) / range;
}

torch::Tensor label_indices(const cv::Mat& img, const ColorMap& colors, const std::string& tile) {
  auto out = torch::empty({img.rows, img.cols}, torch::kInt64);
  auto acc = out.accessor<int64_t, 2>();
  if (img.channels() == 1) {
    cv::Mat m;
    img.convertTo(m, CV_32S);
    for (int y = 0; y < m.rows; ++y)
      for (int x = 0; x < m.cols; ++x) {
        const int v = m.at<int>(y, x);
        if (v < 0 || v >= static_cast<int>(colors.colors.size()))
          throw DataError("tile '" + tile + "': label index " + std::to_string(v) + " out of range");
        acc[y][x] = v;
      }
    return out;
  }
  cv::Mat m = img;
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.depth() != CV_8U) throw DataError("tile '" + tile + "': colour labels must be 8-bit");
  std::map<std::array<uint8_t, 3>, int> cache;
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& bgr = m.at<cv::Vec3b>(y, x);
      const std::array<uint8_t, 3> rgb{bgr[2], bgr[1], bgr[0]};
      auto it = cache.find(rgb);
      if (it == cache.end()) it = cache.emplace(rgb, colors.lookup(rgb)).first;
      if (it->second < 0)
        throw DataError("tile '" + tile + "': label colour (" + std::to_string(rgb[0]) + "," +
                        std::to_string(rgb[1]) + "," + std::to_string(rgb[2]) + ") not in colour map");
      acc[y][x] = it->second;
    }
  return out;
}

}  // namespace

std::vector<SamplePatch> load_isprs_tiles(const fs::path& root, Split split, int patch_size, int stride,
                                          const ColorMap& colors) {
  const fs::path base = root / to_string(split);
  const fs::path rgir_dir = base / "rgir";
  if (!fs::is_directory(rgir_dir)) throw DataError("missing directory " + rgir_dir.string());

  std::vector<fs::path> tiles;
  for (const auto& e : fs::directory_iterator(rgir_dir))
    if (e.is_regular_file()) tiles.push_back(e.path());
  std::sort(tiles.begin(), tiles.end());

  std::vector<SamplePatch> out;
  for (const auto& rgir_path : tiles) {
    const std::string tile = rgir_path.stem().string();
    const auto ndsm_path = find_stem(base / "ndsm", tile);
    if (!ndsm_path) throw DataError("tile '" + tile + "': missing ndsm image");
    const auto label_path = find_stem(base / "label", tile);
    if (!label_path) throw DataError("tile '" + tile + "': missing label image");

    const cv::Mat rgir_img = read_image(rgir_path);
    const cv::Mat ndsm_img = read_image(*ndsm_path);
    const cv::Mat label_img = read_image(*label_path);
    if (rgir_img.size() != ndsm_img.size() || rgir_img.size() != label_img.size())
      throw DataError("tile '" + tile + "': modality sizes differ (rgir " + std::to_string(rgir_img.cols) +
                      "x" + std::to_string(rgir_img.rows) + ", ndsm " + std::to_string(ndsm_img.cols) +
                      "x" + std::to_string(ndsm_img.rows) + ", label " + std::to_string(label_img.cols) +
                      "x" + std::to_string(label_img.rows) + ")");

    const auto rgir = normalised_chw(rgir_img, 3, "tile '" + tile + "' rgir");
    const auto ndsm = normalised_chw(ndsm_img, 1, "tile '" + tile + "' ndsm");
    const auto label = label_indices(label_img, colors, tile);

    for (auto y : window_origins(rgir_img.rows, patch_size, stride))
      for (auto x : window_origins(rgir_img.cols, patch_size, stride)) {
        using torch::indexing::Slice;
        const auto ys = Slice(y, y + patch_size);
        const auto xs = Slice(x, x + patch_size);
        out.push_back({rgir.index({Slice(), ys, xs}).clone(), ndsm.index({Slice(), ys, xs}).clone(),
                       label.index({ys, xs}).clone(),
                       tile + "_y" + std::to_string(y) + "_x" + std::to_string(x)});
      }
  }
  return out;
}

void write_isprs_tiles(const fs::path& root, Split split, std::span<const SamplePatch> patches,
                       const ColorMap& colors) {
  const fs::path base = root / to_string(split);
  for (const char* sub : {"rgir", "ndsm", "label"}) fs::create_directories(base / sub);
  for (const auto& p : patches) {
    const int h = static_cast<int>(p.height());
    const int w = static_cast<int>(p.width());
    auto rgb = (p.rgir.permute({1, 2, 0}) * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
    cv::Mat rgir_img(h, w, CV_8UC3, rgb.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgir_img, bgr, cv::COLOR_RGB2BGR);

    auto height = (p.ndsm[0] * 65535.0).round().clamp(0, 65535).to(torch::kInt32).contiguous();
    cv::Mat ndsm_img(h, w, CV_16UC1);
    auto hacc = height.accessor<int32_t, 2>();
    auto lacc = p.label.accessor<int64_t, 2>();
    cv::Mat label_img(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        ndsm_img.at<uint16_t>(y, x) = static_cast<uint16_t>(hacc[y][x]);
        const auto k = lacc[y][x];
        if (k < 0 || k >= static_cast<int64_t>(colors.colors.size()))
          throw DataError("patch " + p.patch_id + ": no colour for class " + std::to_string(k));
        const auto& c = colors.colors[static_cast<size_t>(k)];
        label_img.at<cv::Vec3b>(y, x) = cv::Vec3b(c[2], c[1], c[0]);
      }
    const std::string name = p.patch_id + ".png";
    if (!cv::imwrite((base / "rgir" / name).string(), bgr) ||
        !cv::imwrite((base / "ndsm" / name).string(), ndsm_img) ||
        !cv::imwrite((base / "label" / name).string(), label_img))
      throw DataError("failed writing tile " + p.patch_id + " under " + base.string());
  }
}

// ---------------------------------------------------------------------------

AugmentDraw draw_augmentation(uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> quarter(0, 3);
  std::uniform_real_distribution<double> bright(-0.1, 0.1);
  std::uniform_real_distribution<double> contrast(0.9, 1.1);
  AugmentDraw d;
  d.hflip = coin(rng);
  d.vflip = coin(rng);
  d.rot90 = quarter(rng);
  if (coin(rng)) d.brightness = bright(rng);
  if (coin(rng)) d.contrast = contrast(rng);
  return d;
}

SamplePatch apply_augmentation(const SamplePatch& patch, const AugmentDraw& draw) {
  // rgir/ndsm are CHW, label is HW.
  auto geometric = [&](torch::Tensor t, int64_t hdim, int64_t wdim) {
    if (draw.hflip) t = t.flip({wdim});
    if (draw.vflip) t = t.flip({hdim});
    if (draw.rot90 % 4 != 0) t = t.rot90(draw.rot90 % 4, {hdim, wdim});
    return t.contiguous();
  };
  SamplePatch out;
  out.patch_id = patch.patch_id;
  out.rgir = geometric(patch.rgir, 1, 2);
  out.ndsm = geometric(patch.ndsm, 1, 2);
  out.label = geometric(patch.label, 0, 1);
  if (draw.brightness != 0.0 || draw.contrast != 1.0)
    out.rgir = ((out.rgir - 0.5) * draw.contrast + 0.5 + draw.brightness).clamp(0.0, 1.0);
  return out;
}

SamplePatch augment(const SamplePatch& patch, uint64_t seed) {
  return apply_augmentation(patch, draw_augmentation(seed));
}

ScenarioMask sample_training_mask(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  return coin(rng) ? ScenarioMask::missing_ndsm() : ScenarioMask::missing_rgir();
}

}  // namespace dis2
