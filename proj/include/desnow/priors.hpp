#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "desnow/image.hpp"

namespace desnow {

inline constexpr int kDepthBins = 8;

enum class PriorKind { kSemantic, kGeometric };

struct PriorEncoding {
  Tensor channels;  // (1, H, W, C): C = 30 (semantic) or 8 (geometric)
  PriorKind kind = PriorKind::kSemantic;
};

// One-hot over the 30 classes. Throws InvalidArgument on labels >= 30.
PriorEncoding encode_semantic(const SemanticMap& map);

// Per-image min/max normalisation, then one-hot into 8 equal-width bins.
// A constant map lands entirely in bin 0.
PriorEncoding quantize_depth(const DepthMap& map);

// Label remap applied when loading: identity on 0..29, everything else -> 0.
std::uint8_t remap_label(std::uint8_t raw);

std::pair<SemanticMap, DepthMap> load_prior_maps(const std::filesystem::path& semantic_path,
                                                 const std::filesystem::path& depth_path);

// Nearest-neighbour decimation by 2^levels (keeps the top-left sample of each
// block), preserving label discreteness.
SemanticMap downsample_labels(const SemanticMap& map, int levels);
DepthMap downsample_depth(const DepthMap& map, int levels);

// Placeholder priors for images without precomputed maps: every pixel class 0
// at constant depth.
SemanticMap uniform_semantic(int height, int width);
DepthMap uniform_depth(int height, int width);

// Batched prior tensors per scale, coarsest scale first.
struct PriorPyramid {
  std::vector<Tensor> semantic;   // (N, h_s, w_s, 30)
  std::vector<Tensor> geometric;  // (N, h_s, w_s, 8)
};

PriorPyramid build_prior_pyramid(std::span<const SemanticMap> semantic,
                                 std::span<const DepthMap> depth, int n_scales);

}  // namespace desnow
