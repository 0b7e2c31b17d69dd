#pragma once

#include <filesystem>

#include "dis2/config.h"
#include "dis2/model.h"

namespace dis2 {

/// Binary layout (little endian):
///   "DIS2CKPT" | u32 version | u64 architecture hash | u32 len | config json
///   | u32 tensor count | { u32 len | name | u8 dtype | u32 ndim | i64 dims[]
///   | u64 nbytes | raw bytes }* | u64 FNV-1a checksum of all preceding bytes
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(Dis2Net model, const ExperimentConfig& config, const std::filesystem::path& path);

/// Builds a model for `expected` and fills it from `path`. Refuses a file whose
/// architecture hash differs from `expected`'s. The file is fully parsed and
/// verified before any parameter is touched.
Dis2Net load_checkpoint(const std::filesystem::path& path, const ExperimentConfig& expected);

/// The experiment config embedded in a checkpoint.
ExperimentConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace dis2
