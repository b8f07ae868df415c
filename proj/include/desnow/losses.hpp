#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "desnow/image.hpp"
#include "desnow/net_blocks.hpp"

namespace desnow {

enum class L1Normalization {
  kPerElement,  // divide by N * H * W * 3 (default)
  kBatch,       // divide by N only
};

struct LossConfig {
  double beta = 0.05;
  int scales = 3;
  std::string perceptual_layer = "relu2";
  L1Normalization l1_normalization = L1Normalization::kPerElement;

  void validate() const;
};

// 0.5 e^2 for |e| < 1, |e| - 0.5 otherwise.
double huber(double e);

Var smooth_l1(const Var& pred, const Var& target,
              L1Normalization norm = L1Normalization::kPerElement);
double smooth_l1(const Tensor& pred, const Tensor& target,
                 L1Normalization norm = L1Normalization::kPerElement);

// Fixed convolutional feature extractor for the perceptual loss:
//   relu1: 3x3 conv 3->16, relu2: 16->16, relu3: 16->32 stride 2, relu4: 32->32.
// Weights are He-initialised from a seed and never trained. A store holding
// the same names (e.g. converted pretrained filters) can be loaded instead.
class PerceptualExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x9e1f5eedULL;

  explicit PerceptualExtractor(const std::string& tap = "relu2",
                               std::uint64_t seed = kDefaultSeed);
  PerceptualExtractor(ParamStore weights, const std::string& tap);

  Var features(ag::Graph& graph, const Var& x) const;
  Tensor features(const Tensor& x) const;

  int tap_depth() const { return tap_depth_; }
  const ParamStore& weights() const { return weights_; }
  static ParamLayout layout();

 private:
  ParamStore weights_;
  int tap_depth_ = 2;
};

// Mean squared feature difference, normalised by C * H * W of the tapped map
// (and averaged over the batch).
Var perceptual(const Var& pred, const Var& target, const PerceptualExtractor& extractor);
double perceptual(const Tensor& pred, const Tensor& target,
                  const PerceptualExtractor& extractor);

// Averages of the per-scale smooth L1 and perceptual losses. Lists are
// coarsest first and must have equal length.
std::pair<Var, Var> multiscale_losses(std::span<const Var> preds, std::span<const Var> targets,
                                      const PerceptualExtractor& extractor,
                                      L1Normalization norm = L1Normalization::kPerElement);
std::pair<double, double> multiscale_losses(std::span<const Tensor> preds,
                                            std::span<const Tensor> targets,
                                            const PerceptualExtractor& extractor,
                                            L1Normalization norm = L1Normalization::kPerElement);

double total_loss(double l1, double lp, const LossConfig& cfg);
Var total_loss(const Var& l1, const Var& lp, const LossConfig& cfg);

// Peak signal-to-noise ratio in dB for [0, 1] images. Identical inputs give
// +infinity.
double psnr(const Tensor& a, const Tensor& b);
double psnr(const ImageTensor& a, const ImageTensor& b);
// "inf" for the identical-image sentinel, fixed two decimals otherwise.
std::string format_psnr(double db);

// Gaussian-window SSIM (11x11, sigma 1.5, valid positions only), averaged
// over channels and positions. Throws if either side is smaller than 11.
double ssim(const ImageTensor& a, const ImageTensor& b);

}  // namespace desnow
