#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "desnow/image.hpp"

namespace desnow {

enum class Severity { kSmall, kMedium, kLarge };

std::string to_string(Severity s);
Severity parse_severity(const std::string& s);

struct SnowParams {
  Severity severity = Severity::kMedium;
  double flake_density = 0.006;  // expected flakes per pixel
  double radius_min = 1.0;
  double radius_max = 3.0;
  int streak_length = 3;
  double blur_sigma = 0.7;
  std::uint64_t seed = 0;

  // Tier table: small (0.002, r 1-2, streak 0), medium (0.006, r 1-3,
  // streak 3), large (0.012, r 2-5, streak 6).
  static SnowParams for_severity(Severity severity, std::uint64_t seed = 0);
  void validate() const;
};

using Rgb = std::array<double, 3>;

struct SceneSpec {
  std::uint64_t seed = 0;
  int n_objects = 5;
  int height = 64;
  int width = 64;
  std::map<int, Rgb> class_palette;  // empty -> default_palette()

  void validate() const;
};

// Deterministic 30-entry colour table; class 0 is the background (sky).
std::map<int, Rgb> default_palette();

inline constexpr float kBackgroundDepth = 100.0f;

struct Scene {
  ImageTensor clean;
  SemanticMap semantic;
  DepthMap depth;
};

// Depth-ordered rectangles and ellipses over a class-0 background at
// kBackgroundDepth. Pure function of the spec.
Scene generate_scene(const SceneSpec& spec);

struct SnowLayer {
  SnowMask mask;
  ChromaticMap chroma;
};

SnowLayer generate_snow_mask(int height, int width, const SnowParams& params);

// O = A * M + B * (1 - M), M broadcast over channels.
ImageTensor composite(const ImageTensor& clean, const ChromaticMap& chroma,
                      const SnowMask& mask);

struct ManifestEntry {
  std::string clean_path;  // relative to the manifest directory
  std::string snowy_path;
  std::string semantic_path;
  std::string depth_path;
  Severity severity = Severity::kMedium;
  std::uint64_t seed = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::uint64_t global_seed = 0;
  int height = 64;
  int width = 64;
  std::optional<SnowParams> snow;  // absent for externally supplied clean sets
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // not serialized

  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

std::string manifest_to_json(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Validates version, non-empty entries, unique snowy paths, existing files.
DatasetManifest load_manifest(const std::filesystem::path& path);

struct DatasetOptions {
  int height = 64;
  int width = 64;
  int min_objects = 3;
  int max_objects = 8;
};

// Writes n (clean, snowy, semantic, depth) quadruples plus manifest.json under
// out_dir. Entry seeds derive from global_seed; snow.seed is ignored.
DatasetManifest build_dataset(int n, const SnowParams& snow,
                              const std::filesystem::path& out_dir,
                              std::uint64_t global_seed,
                              const DatasetOptions& options = {});

// Entry seed i of a dataset with the given global seed.
std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index);

struct Sample {
  ImageTensor clean;
  ImageTensor snowy;
  SemanticMap semantic;
  DepthMap depth;
  Severity severity = Severity::kMedium;
};

std::vector<Sample> load_samples(const DatasetManifest& manifest);

}  // namespace desnow
