#pragma once

#include <filesystem>
#include <string>

#include "desnow/snow_synthesis.hpp"
#include "desnow/training.hpp"

namespace desnow::testing {

// Narrow networks that train in milliseconds per step on 32x32 images.
inline TrainConfig tiny_config(Variant variant, Stage stage = Stage::kCoarse) {
  TrainConfig c;
  c.variant = variant;
  c.stage = stage;
  c.batch_size = 2;
  c.crop = 16;
  c.lr_start = 1e-3;
  c.init_std = 0.05;
  c.max_steps = 5;
  c.coarse.channels = 8;
  c.coarse.growth = 4;
  c.fine.channels = 8;
  c.fine.rdbs_per_row = 2;
  c.fine.feature_rows = 2;
  c.fine.growth = 4;
  c.fine.attention_hidden = 4;
  c.fine.snowcnn_blocks = 2;
  c.fine.rrdb_depth = 1;
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "desnow_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline DatasetManifest small_dataset(const std::filesystem::path& dir, int n, int size,
                                     std::uint64_t seed,
                                     Severity severity = Severity::kMedium) {
  DatasetOptions options;
  options.height = options.width = size;
  return build_dataset(n, SnowParams::for_severity(severity), dir, seed, options);
}

}  // namespace desnow::testing
