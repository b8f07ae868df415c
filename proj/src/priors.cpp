#include "desnow/priors.hpp"

#include <algorithm>
#include <cmath>

#include "desnow/error.hpp"

namespace desnow {

PriorEncoding encode_semantic(const SemanticMap& map) {
  require(map.height > 0 && map.width > 0 &&
              map.labels.size() == static_cast<std::size_t>(map.height) * map.width,
          "semantic map has inconsistent size");
  PriorEncoding enc{Tensor({1, map.height, map.width, kSemanticClasses}),
                    PriorKind::kSemantic};
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    const int label = map.labels[i];
    require(label < kSemanticClasses,
            "semantic label " + std::to_string(label) + " outside [0, 30)");
    enc.channels[i * kSemanticClasses + label] = 1.0;
  }
  return enc;
}

PriorEncoding quantize_depth(const DepthMap& map) {
  require(map.height > 0 && map.width > 0 &&
              map.depth.size() == static_cast<std::size_t>(map.height) * map.width,
          "depth map has inconsistent size");
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < map.depth.size(); ++i) {
    const double d = map.depth[i];
    require(std::isfinite(d) && d >= 0.0, "depth values must be finite and >= 0");
    if (i == 0 || d < lo) lo = d;
    if (i == 0 || d > hi) hi = d;
  }
  PriorEncoding enc{Tensor({1, map.height, map.width, kDepthBins}), PriorKind::kGeometric};
  const double range = hi - lo;
  for (std::size_t i = 0; i < map.depth.size(); ++i) {
    int bin = 0;
    if (range > 0.0) {
      const double v = (map.depth[i] - lo) / range;
      bin = std::min(kDepthBins - 1, static_cast<int>(v * kDepthBins));
    }
    enc.channels[i * kDepthBins + bin] = 1.0;
  }
  return enc;
}

std::uint8_t remap_label(std::uint8_t raw) {
  return raw < kSemanticClasses ? raw : 0;
}

std::pair<SemanticMap, DepthMap> load_prior_maps(const std::filesystem::path& semantic_path,
                                                 const std::filesystem::path& depth_path) {
  SemanticMap sem = read_label_pgm(semantic_path);
  for (auto& l : sem.labels) l = remap_label(l);
  DepthMap depth = read_pfm(depth_path);
  if (sem.height != depth.height || sem.width != depth.width) {
    throw InvalidArgument("semantic map " + std::to_string(sem.height) + "x" +
                          std::to_string(sem.width) + " and depth map " +
                          std::to_string(depth.height) + "x" + std::to_string(depth.width) +
                          " differ in size");
  }
  for (float d : depth.depth) {
    if (!std::isfinite(d) || d < 0.0f) {
      throw InvalidArgument("depth file holds negative or non-finite values: " +
                            depth_path.string());
    }
  }
  return {std::move(sem), std::move(depth)};
}

SemanticMap downsample_labels(const SemanticMap& map, int levels) {
  const int f = 1 << levels;
  require(map.height % f == 0 && map.width % f == 0,
          "label map not divisible by 2^levels");
  SemanticMap out{map.height / f, map.width / f, {}};
  out.labels.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.labels[static_cast<std::size_t>(y) * out.width + x] = map.at(y * f, x * f);
  return out;
}

DepthMap downsample_depth(const DepthMap& map, int levels) {
  const int f = 1 << levels;
  require(map.height % f == 0 && map.width % f == 0,
          "depth map not divisible by 2^levels");
  DepthMap out{map.height / f, map.width / f, {}};
  out.depth.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.depth[static_cast<std::size_t>(y) * out.width + x] = map.at(y * f, x * f);
  return out;
}

SemanticMap uniform_semantic(int height, int width) {
  return {height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
}

DepthMap uniform_depth(int height, int width) {
  return {height, width, std::vector<float>(static_cast<std::size_t>(height) * width, 1.0f)};
}

PriorPyramid build_prior_pyramid(std::span<const SemanticMap> semantic,
                                 std::span<const DepthMap> depth, int n_scales) {
  require(semantic.size() == depth.size() && !semantic.empty(),
          "prior pyramid needs matching, non-empty semantic and depth batches");
  require(n_scales >= 1, "prior pyramid needs at least one scale");
  PriorPyramid pyr;
  for (int s = 0; s < n_scales; ++s) {
    const int levels = n_scales - 1 - s;
    std::vector<Tensor> sem, geo;
    for (std::size_t i = 0; i < semantic.size(); ++i) {
      sem.push_back(encode_semantic(downsample_labels(semantic[i], levels)).channels);
      geo.push_back(quantize_depth(downsample_depth(depth[i], levels)).channels);
    }
    pyr.semantic.push_back(stack_batch(sem));
    pyr.geometric.push_back(stack_batch(geo));
  }
  return pyr;
}

}  // namespace desnow
