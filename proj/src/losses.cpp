#include "desnow/losses.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "desnow/error.hpp"

namespace desnow {
namespace {

struct ExtractorLayer {
  const char* name;
  int in, out, stride;
};

constexpr ExtractorLayer kExtractorLayers[] = {
    {"vgg.conv1", 3, 16, 1},
    {"vgg.conv2", 16, 16, 1},
    {"vgg.conv3", 16, 32, 2},
    {"vgg.conv4", 32, 32, 1},
};

int parse_tap(const std::string& tap) {
  for (int i = 1; i <= 4; ++i) {
    if (tap == "relu" + std::to_string(i)) return i;
  }
  throw InvalidArgument("unknown perceptual tap '" + tap + "' (expected relu1..relu4)");
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                          " vs " + shape_string(b.shape()));
  }
}

double l1_divisor(const Tensor& t, L1Normalization norm) {
  if (norm == L1Normalization::kBatch) return t.rank() == 4 ? t.n() : 1.0;
  return static_cast<double>(t.size());
}

}  // namespace

void LossConfig::validate() const {
  require(beta > 0.0 && std::isfinite(beta), "loss beta must be > 0");
  require(scales >= 1, "loss scales must be >= 1");
  parse_tap(perceptual_layer);
}

double huber(double e) {
  const double a = std::abs(e);
  return a < 1.0 ? 0.5 * e * e : a - 0.5;
}

Var smooth_l1(const Var& pred, const Var& target, L1Normalization norm) {
  check_same(pred.value(), target.value(), "smooth_l1");
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  const double div = l1_divisor(p, norm);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += huber(p[i] - t[i]);
  auto pn = pred.node();
  auto tn = target.node();
  return pred.graph()->make(Tensor({1}, acc / div), {&pred, &target},
                            [pn, tn, div](ag::Node& self) {
    const double g = self.grad[0] / div;
    for (std::size_t i = 0; i < pn->value.size(); ++i) {
      const double e = pn->value[i] - tn->value[i];
      const double d = std::abs(e) < 1.0 ? e : (e > 0 ? 1.0 : -1.0);
      if (pn->requires_grad) pn->grad_buffer()[i] += g * d;
      if (tn->requires_grad) tn->grad_buffer()[i] -= g * d;
    }
  });
}

double smooth_l1(const Tensor& pred, const Tensor& target, L1Normalization norm) {
  check_same(pred, target, "smooth_l1");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += huber(pred[i] - target[i]);
  return acc / l1_divisor(pred, norm);
}

// ------------------------------------------------------------ perceptual

ParamLayout PerceptualExtractor::layout() {
  ParamLayout layout;
  for (const auto& l : kExtractorLayers) {
    layout.add(std::string(l.name) + ".w", {3, 3, l.in, l.out}, ParamInit::kGaussian);
    layout.add(std::string(l.name) + ".b", {l.out}, ParamInit::kZero);
  }
  return layout;
}

PerceptualExtractor::PerceptualExtractor(const std::string& tap, std::uint64_t seed)
    : tap_depth_(parse_tap(tap)) {
  std::mt19937_64 rng(seed);
  const ParamLayout specs = layout();
  for (const auto& spec : specs.specs()) {
    Tensor t(spec.shape);
    if (spec.init == ParamInit::kGaussian) {
      const double fan_in = 9.0 * spec.shape[2];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : t.values()) v = dist(rng);
    }
    weights_.set(spec.name, std::move(t));
  }
  weights_.rng_seed = seed;
}

PerceptualExtractor::PerceptualExtractor(ParamStore weights, const std::string& tap)
    : weights_(std::move(weights)), tap_depth_(parse_tap(tap)) {
  const ParamLayout specs = layout();
  for (const auto& spec : specs.specs()) {
    if (!weights_.contains(spec.name)) {
      throw InvalidArgument("perceptual weights lack '" + spec.name + "'");
    }
    if (weights_.get(spec.name).shape() != spec.shape) {
      throw InvalidArgument("perceptual weight '" + spec.name + "' has shape " +
                            shape_string(weights_.get(spec.name).shape()) + ", expected " +
                            shape_string(spec.shape));
    }
  }
}

Var PerceptualExtractor::features(ag::Graph& graph, const Var& x) const {
  Var h = x;
  for (int i = 0; i < tap_depth_; ++i) {
    const auto& l = kExtractorLayers[i];
    const std::string name = l.name;
    h = ag::relu(ag::conv2d(h, graph.constant(weights_.get(name + ".w")),
                            graph.constant(weights_.get(name + ".b")), l.stride));
  }
  return h;
}

Tensor PerceptualExtractor::features(const Tensor& x) const {
  ag::Graph graph(false);
  return features(graph, graph.constant(x)).value();
}

Var perceptual(const Var& pred, const Var& target, const PerceptualExtractor& extractor) {
  check_same(pred.value(), target.value(), "perceptual");
  ag::Graph& graph = *pred.graph();
  return ag::mean_squared_error(extractor.features(graph, pred),
                                extractor.features(graph, target));
}

double perceptual(const Tensor& pred, const Tensor& target,
                  const PerceptualExtractor& extractor) {
  check_same(pred, target, "perceptual");
  const Tensor fp = extractor.features(pred);
  const Tensor ft = extractor.features(target);
  double acc = 0.0;
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const double d = fp[i] - ft[i];
    acc += d * d;
  }
  return acc / static_cast<double>(fp.size());
}

std::pair<Var, Var> multiscale_losses(std::span<const Var> preds, std::span<const Var> targets,
                                      const PerceptualExtractor& extractor,
                                      L1Normalization norm) {
  require(!preds.empty() && preds.size() == targets.size(),
          "multiscale_losses: " + std::to_string(preds.size()) + " predictions vs " +
              std::to_string(targets.size()) + " targets");
  Var l1, lp;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    Var a = smooth_l1(preds[s], targets[s], norm);
    Var b = perceptual(preds[s], targets[s], extractor);
    l1 = s == 0 ? a : ag::add(l1, a);
    lp = s == 0 ? b : ag::add(lp, b);
  }
  const double inv = 1.0 / static_cast<double>(preds.size());
  return {ag::scale(l1, inv), ag::scale(lp, inv)};
}

std::pair<double, double> multiscale_losses(std::span<const Tensor> preds,
                                            std::span<const Tensor> targets,
                                            const PerceptualExtractor& extractor,
                                            L1Normalization norm) {
  require(!preds.empty() && preds.size() == targets.size(),
          "multiscale_losses: " + std::to_string(preds.size()) + " predictions vs " +
              std::to_string(targets.size()) + " targets");
  double l1 = 0.0, lp = 0.0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    l1 += smooth_l1(preds[s], targets[s], norm);
    lp += perceptual(preds[s], targets[s], extractor);
  }
  const double m = static_cast<double>(preds.size());
  return {l1 / m, lp / m};
}

double total_loss(double l1, double lp, const LossConfig& cfg) { return l1 + cfg.beta * lp; }

Var total_loss(const Var& l1, const Var& lp, const LossConfig& cfg) {
  return ag::add(l1, ag::scale(lp, cfg.beta));
}

// --------------------------------------------------------------- metrics

double psnr(const Tensor& a, const Tensor& b) {
  check_same(a, b, "psnr");
  require(a.size() > 0, "psnr: empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const ImageTensor& a, const ImageTensor& b) { return psnr(a.pixels, b.pixels); }

std::string format_psnr(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", db);
  return buf;
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  check_same(a.pixels, b.pixels, "ssim");
  const int h = a.height(), w = a.width();
  if (h < kWindow || w < kWindow) {
    throw InvalidArgument("ssim: images must be at least " + std::to_string(kWindow) +
                          "x" + std::to_string(kWindow) + ", got " + std::to_string(h) +
                          "x" + std::to_string(w));
  }
  double g[kWindow];
  double norm = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    norm += g[i];
  }
  for (double& v : g) v /= norm;

  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < kWindow; ++dy) {
          for (int dx = 0; dx < kWindow; ++dx) {
            const double wt = g[dy] * g[dx];
            const double va = a.at(y + dy, x + dx, c);
            const double vb = b.at(y + dy, x + dx, c);
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * (va * vb);
          }
        }
        const double var_a = saa - ma * ma;
        const double var_b = sbb - mb * mb;
        const double cov = sab - ma * mb;
        total += ((2 * (ma * mb) + kC1) * (2 * cov + kC2)) /
                 ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
      }
    }
  }
  return total / (3.0 * oh * ow);
}

}  // namespace desnow
