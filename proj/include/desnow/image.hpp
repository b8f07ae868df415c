#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "desnow/tensor.hpp"

namespace desnow {

// H x W x 3 image with values in [0, 1].
struct ImageTensor {
  Tensor pixels;  // (1, H, W, 3)

  ImageTensor() = default;
  ImageTensor(int height, int width, double fill = 0.0)
      : pixels({1, height, width, 3}, fill) {}
  explicit ImageTensor(Tensor t);

  int height() const { return pixels.h(); }
  int width() const { return pixels.w(); }
  double& at(int y, int x, int c) { return pixels.at(0, y, x, c); }
  double at(int y, int x, int c) const { return pixels.at(0, y, x, c); }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
    return a.pixels == b.pixels;
  }
};

// H x W x 1 snow coverage fraction.
struct SnowMask {
  Tensor coverage;  // (1, H, W, 1)
};

// H x W x 3 colour of the snow layer.
struct ChromaticMap {
  Tensor intensity;  // (1, H, W, 3)
};

inline constexpr int kSemanticClasses = 30;

struct SemanticMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;  // row-major class ids in [0, 30)

  std::uint8_t at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  friend bool operator==(const SemanticMap&, const SemanticMap&) = default;
};

struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> depth;  // row-major, finite and >= 0

  float at(int y, int x) const {
    return depth[static_cast<std::size_t>(y) * width + x];
  }
  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

// Throws InvalidArgument unless H, W >= 16, both divisible by `multiple`, and
// every value lies in [0, 1].
void validate_image(const ImageTensor& image, int multiple = 4);

// Rounds to the nearest representable 8-bit level, as written to disk.
ImageTensor quantize_8bit(const ImageTensor& image);
ImageTensor clamp01(const ImageTensor& image);

// Area (2x2 mean) downscaling by 2^levels.
ImageTensor downscale(const ImageTensor& image, int levels);

// Binary netpbm rasters (P6 colour, P5 grey) and little-endian PFM depth.
void write_ppm(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_ppm(const std::filesystem::path& path);
void write_label_pgm(const std::filesystem::path& path, const SemanticMap& map);
// Raw 8-bit labels, no remapping.
SemanticMap read_label_pgm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const DepthMap& map);
DepthMap read_pfm(const std::filesystem::path& path);

}  // namespace desnow
