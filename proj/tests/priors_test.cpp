#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "desnow/error.hpp"
#include "desnow/priors.hpp"
#include "desnow/snow_synthesis.hpp"

namespace desnow {
namespace {

namespace fs = std::filesystem;

int argmax_channel(const Tensor& t, int y, int x) {
  int best = 0;
  for (int c = 1; c < t.c(); ++c)
    if (t.at(0, y, x, c) > t.at(0, y, x, best)) best = c;
  return best;
}

void expect_one_hot(const Tensor& t) {
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x) {
      double sum = 0;
      int ones = 0;
      for (int c = 0; c < t.c(); ++c) {
        const double v = t.at(0, y, x, c);
        EXPECT_TRUE(v == 0.0 || v == 1.0);
        ones += v == 1.0;
        sum += v;
      }
      EXPECT_EQ(sum, 1.0);
      EXPECT_EQ(ones, 1);
    }
}

DepthMap ramp(int h, int w, double scale, double offset) {
  DepthMap d{h, w, std::vector<float>(static_cast<std::size_t>(h) * w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      d.depth[static_cast<std::size_t>(y) * w + x] = static_cast<float>(offset + scale * x);
  return d;
}

TEST(EncodeSemantic, AllZeroLabels) {
  const PriorEncoding e = encode_semantic(uniform_semantic(16, 20));
  EXPECT_EQ(e.kind, PriorKind::kSemantic);
  EXPECT_EQ(e.channels.shape(), (Shape{1, 16, 20, 30}));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 20; ++x) {
      EXPECT_EQ(e.channels.at(0, y, x, 0), 1.0);
      for (int c = 1; c < 30; ++c) EXPECT_EQ(e.channels.at(0, y, x, c), 0.0);
    }
}

TEST(EncodeSemantic, OneHotAndArgmaxRoundTrip) {
  SceneSpec spec;
  spec.seed = 21;
  spec.n_objects = 8;
  const SemanticMap m = generate_scene(spec).semantic;
  const PriorEncoding e = encode_semantic(m);
  expect_one_hot(e.channels);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) EXPECT_EQ(argmax_channel(e.channels, y, x), m.at(y, x));
}

TEST(EncodeSemantic, OutOfRangeLabel) {
  SemanticMap m = uniform_semantic(16, 16);
  m.labels[5] = 30;
  EXPECT_THROW(encode_semantic(m), InvalidArgument);
}

TEST(QuantizeDepth, ConstantDepthIsBinZero) {
  const PriorEncoding e = quantize_depth(uniform_depth(16, 16));
  EXPECT_EQ(e.kind, PriorKind::kGeometric);
  EXPECT_EQ(e.channels.c(), kDepthBins);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) EXPECT_EQ(argmax_channel(e.channels, y, x), 0);
  expect_one_hot(e.channels);
}

TEST(QuantizeDepth, RampFillsBinsEvenly) {
  const PriorEncoding e = quantize_depth(ramp(4, 64, 1.0, 0.0));
  expect_one_hot(e.channels);
  std::vector<int> columns(kDepthBins, 0);
  for (int x = 0; x < 64; ++x) ++columns[argmax_channel(e.channels, 0, x)];
  for (int b = 0; b < kDepthBins; ++b) EXPECT_NEAR(columns[b], 8, 1) << "bin " << b;
  // Monotone: bins never decrease along the ramp.
  for (int x = 1; x < 64; ++x)
    EXPECT_GE(argmax_channel(e.channels, 0, x), argmax_channel(e.channels, 0, x - 1));
}

TEST(QuantizeDepth, InvariantToAffineRescale) {
  SceneSpec spec;
  spec.seed = 4;
  const DepthMap d = generate_scene(spec).depth;
  DepthMap scaled = d;
  for (float& v : scaled.depth) v *= 0.5f;
  EXPECT_EQ(quantize_depth(d).channels, quantize_depth(scaled).channels);
  // Scale and offset together, on values where float arithmetic is exact.
  EXPECT_EQ(quantize_depth(ramp(2, 64, 1.0, 0.0)).channels, quantize_depth(ramp(2, 64, 4.0, 8.0)).channels);
}

TEST(QuantizeDepth, RejectsBadValues) {
  DepthMap d = uniform_depth(16, 16);
  d.depth[3] = -1.0f;
  EXPECT_THROW(quantize_depth(d), InvalidArgument);
  d.depth[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(quantize_depth(d), InvalidArgument);
}

TEST(LoadPriors, RoundTripAndRemap) {
  const fs::path dir = fs::temp_directory_path() / "desnow_priors_test";
  fs::remove_all(dir);
  const DatasetManifest m = build_dataset(1, SnowParams::for_severity(Severity::kSmall), dir, 8);
  const auto [sem, depth] =
      load_prior_maps(m.resolve(m.entries[0].semantic_path), m.resolve(m.entries[0].depth_path));
  EXPECT_EQ(sem, read_label_pgm(m.resolve(m.entries[0].semantic_path)));
  EXPECT_EQ(depth, read_pfm(m.resolve(m.entries[0].depth_path)));

  SemanticMap raw = uniform_semantic(16, 16);
  raw.labels[0] = 255;
  raw.labels[1] = 29;
  raw.labels[2] = 30;
  write_label_pgm(dir / "raw.pgm", raw);
  write_pfm(dir / "flat.pfm", uniform_depth(16, 16));
  const auto [remapped, flat] = load_prior_maps(dir / "raw.pgm", dir / "flat.pfm");
  EXPECT_EQ(remapped.labels[0], 0);
  EXPECT_EQ(remapped.labels[1], 29);
  EXPECT_EQ(remapped.labels[2], 0);
  EXPECT_EQ(remap_label(255), 0);
  EXPECT_EQ(remap_label(7), 7);

  write_pfm(dir / "wide.pfm", uniform_depth(16, 20));
  EXPECT_THROW(load_prior_maps(dir / "raw.pgm", dir / "wide.pfm"), InvalidArgument);
  EXPECT_THROW(load_prior_maps(dir / "missing.pgm", dir / "flat.pfm"), IoError);
}

TEST(PriorPyramid, ShapesPerScale) {
  SceneSpec spec;
  spec.seed = 2;
  const Scene s = generate_scene(spec);
  const std::vector<SemanticMap> sem{s.semantic, s.semantic};
  const std::vector<DepthMap> depth{s.depth, s.depth};
  const PriorPyramid p = build_prior_pyramid(sem, depth, 3);
  ASSERT_EQ(p.semantic.size(), 3u);
  EXPECT_EQ(p.semantic[0].shape(), (Shape{2, 16, 16, 30}));
  EXPECT_EQ(p.geometric[2].shape(), (Shape{2, 64, 64, 8}));
  const SemanticMap half = downsample_labels(s.semantic, 1);
  EXPECT_EQ(half.height, 32);
  EXPECT_EQ(half.at(3, 5), s.semantic.at(6, 10));
}

}  // namespace
}  // namespace desnow
