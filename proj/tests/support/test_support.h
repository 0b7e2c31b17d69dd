#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dis2/config.h"
#include "dis2/data.h"

namespace dis2::testing {

/// Small synthetic experiment used by the fast suites.
inline ExperimentConfig tiny_config(int base_width = 4, int patch_size = 16, int num_classes = 6) {
  ExperimentConfig c;
  c.base_width = base_width;
  c.patch_size = patch_size;
  c.num_classes = num_classes;
  c.synthetic = SyntheticSpec::defaults();
  c.synthetic.patch_size = patch_size;
  c.synthetic.num_patches = 4;
  c.synthetic.num_classes = num_classes;
  c.optim.batch_size = 2;
  c.optim.steps = 10;
  c.augment = false;
  c.eval_patches = 2;
  c.seed = 3;
  return c;
}

/// Random batch with every class present.
inline Batch random_batch(int64_t batch, int64_t size, int64_t num_classes, uint64_t seed,
                          torch::ScalarType dtype = torch::kFloat32) {
  torch::manual_seed(seed);
  Batch b;
  b.rgir = torch::rand({batch, 3, size, size}).to(dtype);
  b.ndsm = torch::rand({batch, 1, size, size}).to(dtype);
  b.label = torch::arange(batch * size * size).remainder(num_classes).view({batch, size, size});
  b.label = b.label.flatten().index_select(0, torch::randperm(batch * size * size)).view({batch, size, size});
  return b;
}

/// Central difference of `f` with respect to one element of `x` (in place,
/// restored afterwards).
inline double central_difference(const std::function<double()>& f, torch::Tensor x, int64_t flat_index,
                                 double step = 1e-3) {
  torch::NoGradGuard no_grad;
  auto flat = x.view({-1});
  const double original = flat[flat_index].item<double>();
  flat[flat_index] = original + step;
  const double up = f();
  flat[flat_index] = original - step;
  const double down = f();
  flat[flat_index] = original;
  return (up - down) / (2.0 * step);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

}  // namespace dis2::testing
