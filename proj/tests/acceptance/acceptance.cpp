// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if a gated
// criterion fails. Criteria 5, 6 and 8 train real models and take a while on
// one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "desnow/attention.hpp"
#include "desnow/cli.hpp"
#include "desnow/ddms_net.hpp"
#include "desnow/losses.hpp"
#include "desnow/pipeline.hpp"
#include "desnow/priors.hpp"
#include "desnow/snow_synthesis.hpp"
#include "desnow/training.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace desnow;
using testing::check_gradients;
using testing::random_params;
using testing::random_tensor;
using testing::weighted_sum;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects named sub-checks; the first failures are reported in the detail.
struct Checks {
  int total = 0;
  std::vector<std::string> failed;

  void expect(bool ok, const std::string& what) {
    ++total;
    if (!ok) failed.push_back(what);
  }
  bool ok() const { return failed.empty(); }
  std::string summary() const {
    std::ostringstream os;
    os << (total - static_cast<int>(failed.size())) << "/" << total << " checks";
    for (std::size_t i = 0; i < failed.size() && i < 5; ++i) os << (i ? ", " : "; failed: ") << failed[i];
    return os.str();
  }
};

int gated_failures = 0;

void report(int id, const std::string& status, const std::string& title, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", status.c_str(), id, title.c_str(), detail.c_str());
  std::fflush(stdout);
}

void gate(int id, bool ok, const std::string& title, const std::string& detail) {
  if (!ok) ++gated_failures;
  report(id, ok ? "PASS" : "FAIL", title, detail);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class Block>
ParamLayout layout_of(const Block& b) {
  ParamLayout layout;
  b.declare(layout);
  return layout;
}

ImageTensor random_image(int h, int w, std::uint64_t seed) {
  return ImageTensor(random_tensor({1, h, w, 3}, seed, 0.0, 1.0));
}

// ------------------------------------------------------------- criterion 2

void closed_form_suite() {
  const auto t0 = Clock::now();
  Checks c;

  c.expect(huber(0.0) == 0.0, "huber(0)");
  c.expect(huber(0.5) == 0.125, "huber(0.5)");
  c.expect(huber(2.0) == 1.5 && huber(-2.0) == 1.5, "huber(+-2)");

  const Tensor x = random_tensor({2, 6, 6, 3}, 1, 0, 1);
  const Tensor y = random_tensor({2, 6, 6, 3}, 2, 0, 1);
  c.expect(smooth_l1(x, x) == 0.0, "smooth_l1(x,x)");
  c.expect(std::abs(smooth_l1(Tensor({1, 2, 2, 3}, 0.5), Tensor({1, 2, 2, 3}, 0.0)) - 0.125) < 1e-15,
           "smooth_l1 constant 0.5");
  double direct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = std::abs(x[i] - y[i]);
    direct += e < 1 ? 0.5 * e * e : e - 0.5;
  }
  c.expect(std::abs(smooth_l1(x, y) - direct / x.size()) < 1e-12, "smooth_l1 direct loop");

  const PerceptualExtractor extractor;
  c.expect(perceptual(x, x, extractor) == 0.0, "perceptual(x,x)");
  bool nonneg = true;
  for (std::uint64_t s = 0; s < 5; ++s)
    nonneg = nonneg && perceptual(random_tensor({1, 8, 8, 3}, 10 + s, 0, 1),
                                  random_tensor({1, 8, 8, 3}, 20 + s, 0, 1), extractor) >= 0;
  c.expect(nonneg, "perceptual nonnegative");
  {
    const Tensor fx = extractor.features(x), fy = extractor.features(y);
    double sq = 0;
    for (std::size_t i = 0; i < fx.size(); ++i) sq += (fx[i] - fy[i]) * (fx[i] - fy[i]);
    c.expect(std::abs(perceptual(x, y, extractor) - sq / fx.size()) < 1e-12, "perceptual brute force");
  }

  {
    std::vector<Tensor> preds, targets;
    for (int s = 0; s < 3; ++s) {
      const int side = 4 << s;
      preds.push_back(random_tensor({1, side, side, 3}, 30 + s, 0, 1));
      targets.push_back(random_tensor({1, side, side, 3}, 40 + s, 0, 1));
    }
    const auto zero = multiscale_losses(preds, preds, extractor);
    c.expect(zero.first == 0.0 && zero.second == 0.0, "multiscale zero");
    double l1 = 0, lp = 0;
    for (int s = 0; s < 3; ++s) {
      l1 += smooth_l1(preds[s], targets[s]);
      lp += perceptual(preds[s], targets[s], extractor);
    }
    const auto both = multiscale_losses(preds, targets, extractor);
    c.expect(std::abs(both.first - l1 / 3) < 1e-12 && std::abs(both.second - lp / 3) < 1e-12,
             "multiscale average");
    const auto one = multiscale_losses(std::span(preds).first(1), std::span(targets).first(1), extractor);
    c.expect(one.first == smooth_l1(preds[0], targets[0]) &&
                 one.second == perceptual(preds[0], targets[0], extractor),
             "multiscale M=1");
  }

  const LossConfig loss;
  c.expect(total_loss(0, 0, loss) == 0.0, "total_loss(0,0)");
  c.expect(std::abs(total_loss(1.0, 2.0, loss) - 1.1) < 1e-15, "total_loss(1,2)");
  c.expect(total_loss(1.0, 2.5, loss) > total_loss(1.0, 2.0, loss) &&
               total_loss(1.5, 2.0, loss) > total_loss(1.0, 2.0, loss),
           "total_loss monotone");

  {
    ag::Graph g;
    const Tensor logits = random_tensor({1, 4, 4, 6}, 50, -3, 3);
    const Tensor w = group_softmax(g.constant(logits)).value();
    Tensor shifted = logits;
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 4; ++xx)
        for (int k = 0; k < 6; ++k) shifted.at(0, yy, xx, k) += 3.0 * yy - xx;
    const Tensor ws = group_softmax(g.constant(shifted)).value();
    bool sums = true, positive = true, shift = true;
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 4; ++xx) {
        double s = 0;
        for (int k = 0; k < 6; ++k) {
          s += w.at(0, yy, xx, k);
          positive = positive && w.at(0, yy, xx, k) > 0;
          shift = shift && std::abs(w.at(0, yy, xx, k) - ws.at(0, yy, xx, k)) < 1e-12;
        }
        sums = sums && std::abs(s - 1) < 1e-6;
      }
    c.expect(sums && positive, "group_softmax rows");
    c.expect(shift, "group_softmax shift");
  }

  const ImageTensor a = random_image(32, 32, 60), b = random_image(32, 32, 61);
  c.expect(std::isinf(psnr(a, a)) && psnr(a, a) > 0, "psnr inf");
  c.expect(std::abs(psnr(ImageTensor(16, 16, 0.3), ImageTensor(16, 16, 0.4)) - 20.0) < 1e-9,
           "psnr 20 dB");
  {
    double mse = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
      mse += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    mse /= a.pixels.size();
    c.expect(std::abs(psnr(a, b) - 10 * std::log10(1 / mse)) < 1e-9, "psnr formula");
  }
  c.expect(std::abs(ssim(a, a) - 1.0) < 1e-9, "ssim(x,x)");
  {
    ImageTensor half(32, 32, 0.0);
    for (int yy = 0; yy < 32; ++yy)
      for (int xx = 16; xx < 32; ++xx)
        for (int ch = 0; ch < 3; ++ch) half.at(yy, xx, ch) = 1.0;
    ImageTensor inv = half;
    for (double& v : inv.pixels.values()) v = 1 - v;
    c.expect(ssim(half, inv) < 0.1, "ssim inverted");
  }
  c.expect(ssim(a, b) == ssim(b, a), "ssim symmetric");

  {
    const ImageTensor clean = random_image(16, 16, 70);
    const ChromaticMap chroma{random_tensor({1, 16, 16, 3}, 71, 0, 1)};
    c.expect(composite(clean, chroma, SnowMask{Tensor({1, 16, 16, 1}, 0.0)}) == clean, "composite M=0");
    const ImageTensor ones = composite(clean, ChromaticMap{Tensor({1, 16, 16, 3}, 1.0)},
                                       SnowMask{Tensor({1, 16, 16, 1}, 1.0)});
    c.expect(ones == ImageTensor(16, 16, 1.0), "composite M=1,A=1");
    const ImageTensor px = composite(ImageTensor(16, 16, 0.2), ChromaticMap{Tensor({1, 16, 16, 3}, 1.0)},
                                     SnowMask{Tensor({1, 16, 16, 1}, 0.5)});
    c.expect(std::abs(px.at(3, 5, 1) - 0.6) < 1e-15, "composite 0.6");
  }

  const double secs = seconds_since(t0);
  gate(2, c.ok() && secs < 60, "closed-form loss and metric examples", c.summary() + ", " + fmt("%.1fs", secs));
}

// ------------------------------------------------------------- criterion 3

void gradient_suite() {
  const auto t0 = Clock::now();
  constexpr double kTol = 1e-4;
  double worst = 0;
  std::string worst_name;
  Checks c;
  auto run = [&](const std::string& name, std::uint64_t seed, const testing::ScalarFn& f,
                 const ParamStore& store, std::vector<Tensor> inputs) {
    const auto r = check_gradients(f, store, std::move(inputs), seed);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = name + "/" + r.worst;
    }
    c.expect(r.max_rel_error <= kTol && r.checked > 0, name + " seed " + std::to_string(seed));
  };

  const PerceptualExtractor extractor;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const DenseBlock dense("dense", 4, 3, 3);
    run("dense_block", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return weighted_sum(dense(p, in[0]), seed);
    }, random_params(layout_of(dense), seed, 0.3), {random_tensor({1, 6, 6, 4}, seed + 1)});

    const Rdb rdb("rdb", 4, 3, 3);
    run("rdb", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return weighted_sum(rdb(p, in[0]), seed);
    }, random_params(layout_of(rdb), seed, 0.3), {random_tensor({1, 6, 6, 4}, seed + 2)});

    const Downsample down("down", 3, 4);
    run("downsample", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return weighted_sum(down(p, in[0]), seed);
    }, random_params(layout_of(down), seed, 0.3), {random_tensor({1, 8, 8, 3}, seed + 3)});

    const Upsample up("up", 4, 3);
    run("upsample", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return weighted_sum(up(p, in[0]), seed);
    }, random_params(layout_of(up), seed, 0.3), {random_tensor({1, 4, 4, 4}, seed + 4)});

    const FuseGate fuse("fuse", 4, 4);
    run("fuse", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return weighted_sum(fuse(p, in[0], in[1]), seed);
    }, random_params(layout_of(fuse), seed, 0.5),
        {random_tensor({2, 4, 4, 4}, seed + 5), random_tensor({2, 4, 4, 4}, seed + 6)});

    const AttentionLogits logits("logits", 4, 5, 6, 5);
    Tensor prior({1, 6, 6, 5}, 0.0);
    for (int i = 0; i < 36; ++i) prior[static_cast<std::size_t>(i) * 5 + (i * seed) % 5] = 1.0;
    run("attention_logits", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return weighted_sum(logits(p, in[0], p.graph().constant(prior)), seed);
    }, random_params(layout_of(logits), seed, 0.3), {random_tensor({1, 6, 6, 4}, seed + 7)});

    const GroupedAttention grouped("grouped", 4, 2, 3);
    run("grouped_attention", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return weighted_sum(grouped(p, in[0], in[1]), seed);
    }, random_params(layout_of(grouped), seed, 0.4),
        {random_tensor({1, 6, 6, 8}, seed + 8), random_tensor({1, 6, 6, 4}, seed + 9, 0, 1)});

    const Tensor target = random_tensor({1, 8, 8, 3}, seed + 10, 0, 1);
    run("smooth_l1", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return smooth_l1(in[0], p.graph().constant(target));
    }, ParamStore{}, {random_tensor({1, 8, 8, 3}, seed + 11, -1, 2)});
    run("perceptual", seed, [&](ParamBinding& p, const std::vector<Var>& in) {
      return perceptual(in[0], p.graph().constant(target), extractor);
    }, ParamStore{}, {random_tensor({1, 8, 8, 3}, seed + 12, 0, 1)});
  }

  const double secs = seconds_since(t0);
  gate(3, c.ok() && secs < 300, "gradient oracle suite",
       c.summary() + ", worst " + fmt("%.2e", worst) + " at " + worst_name + ", " +
           fmt("%.1fs", secs));
}

// ------------------------------------------------------------- criterion 4

void identity_suite() {
  Checks c;
  const TrainConfig cfg = TrainConfig::desk();
  const Pipeline pipe = cfg.pipeline();
  {
    ParamStore store = random_params(pipe.coarse_layout(), 3, 0.1);
    zero_params(store, pipe.coarse().head_prefix());
    ag::Graph g;
    ParamBinding p(g, store);
    const Tensor x = random_tensor({2, 32, 32, 3}, 4, 0, 1);
    c.expect(pipe.coarse().forward(p, g.constant(x)).value() == x, "coarse identity");
  }
  for (Variant v : {Variant::kSnowCnn, Variant::kMsNet, Variant::kDdmsSG}) {
    DdmsConfig fc = cfg.fine;
    fc.variant = v;
    const FineNetwork net(fc);
    ParamStore store = random_params(layout_of(net), 5, 0.1);
    for (const auto& head : net.head_prefixes()) zero_params(store, head);
    const Scene scene = generate_scene(SceneSpec{.seed = 6, .height = 32, .width = 32});
    const PriorPyramid priors =
        build_prior_pyramid(std::span(&scene.semantic, 1), std::span(&scene.depth, 1), fc.n_scales);
    ag::Graph g;
    ParamBinding p(g, store);
    const Tensor x = random_tensor({1, 32, 32, 3}, 7, 0, 1);
    const auto outs = net.forward(p, g.constant(x), &priors);
    c.expect(outs.back().value() == x, "fine identity " + to_string(v));
  }
  {
    const ImageTensor clean = random_image(16, 16, 8);
    const ChromaticMap chroma{random_tensor({1, 16, 16, 3}, 9, 0, 1)};
    c.expect(composite(clean, chroma, SnowMask{Tensor({1, 16, 16, 1}, 0.0)}) == clean, "composite M=0");
    c.expect(composite(clean, ChromaticMap{Tensor({1, 16, 16, 3}, 1.0)},
                       SnowMask{Tensor({1, 16, 16, 1}, 1.0)}) == ImageTensor(16, 16, 1.0),
             "composite M=1");
  }
  {
    const Scene scene = generate_scene(SceneSpec{.seed = 10, .height = 32, .width = 48});
    for (const PriorEncoding& e : {encode_semantic(scene.semantic), quantize_depth(scene.depth)}) {
      const Tensor& t = e.channels;
      bool exact = true;
      for (int yy = 0; yy < t.h(); ++yy)
        for (int xx = 0; xx < t.w(); ++xx) {
          double s = 0;
          for (int k = 0; k < t.c(); ++k) s += t.at(0, yy, xx, k);
          exact = exact && s == 1.0;
        }
      c.expect(exact, e.kind == PriorKind::kSemantic ? "semantic one-hot" : "depth one-hot");
    }
  }
  gate(4, c.ok(), "identity invariants", c.summary());
}

// ------------------------------------------------------- criteria 5 and 8

constexpr int kOverfitCoarseSteps = 500;
constexpr int kOverfitFineSteps = 2000;

TrainConfig overfit_config(Stage stage) {
  TrainConfig cfg = TrainConfig::desk();
  cfg.variant = Variant::kDdmsSG;
  cfg.seed = 1;
  cfg.deterministic = true;
  cfg.stage = stage;
  cfg.max_steps = stage == Stage::kCoarse ? kOverfitCoarseSteps : kOverfitFineSteps;
  return cfg;
}

ParamStore overfit_run(const DatasetManifest& data) {
  const TrainResult coarse = train_stage(data, overfit_config(Stage::kCoarse));
  return train_stage(data, overfit_config(Stage::kFine), &coarse.store).store;
}

// ----------------------------------------------------------------- main

int run_all(const fs::path& root) {
  std::printf("[NOTE] criterion 1: published benchmark numbers need the real datasets, pretrained "
              "prior networks and long training; criteria 2-8 are the desk-scale substitute\n");

  closed_form_suite();
  gradient_suite();
  identity_suite();

  // Criterion 5.
  const DatasetManifest overfit = testing::small_dataset(root / "overfit", 8, 64, 7);
  auto t0 = Clock::now();
  const ParamStore model = overfit_run(overfit);
  const double overfit_secs = seconds_since(t0);
  const EvalReport fit = evaluate(model, overfit);
  const EvalRow& all = fit.rows.back();
  gate(5, all.psnr >= 30.0 && all.psnr >= all.psnr_input + 5.0 && overfit_secs <= 1800,
       "overfit ddms_sg on 8 medium 64x64 pairs",
       "input " + format_psnr(all.psnr_input) + " dB -> output " + format_psnr(all.psnr) +
           " dB, " + std::to_string(kOverfitCoarseSteps) + "+" + std::to_string(kOverfitFineSteps) +
           " steps, " + fmt("%.0fs", overfit_secs));

  // Near-identity on snow-free input through the command-line inference path.
  {
    const fs::path ckpt = root / "overfit_model.ckpt";
    save_checkpoint(model, ckpt);
    const Scene scene = generate_scene(SceneSpec{.seed = 4242, .height = 64, .width = 64});
    const ImageTensor clean = quantize_8bit(scene.clean);
    write_ppm(root / "clean.ppm", clean);
    write_label_pgm(root / "clean.pgm", scene.semantic);
    write_pfm(root / "clean.pfm", scene.depth);
    std::ostringstream warn;
    const ImageTensor out = cli::infer(ckpt, root / "clean.ppm", root / "clean.pgm",
                                       root / "clean.pfm", root / "clean_out.ppm", warn);
    const double p = psnr(out, clean);
    // Not one of the numbered criteria: reported, not gated.
    std::printf("[%s] infer on a snow-free image: PSNR(output, input) %s dB (target >= 40, "
                "training-set fit %s dB)\n",
                p >= 40.0 ? "PASS" : "FAIL", format_psnr(p).c_str(), format_psnr(all.psnr).c_str());
  }

  // Criterion 8: the same run again, compared byte for byte.
  t0 = Clock::now();
  const ParamStore again = overfit_run(overfit);
  const bool same = serialize_checkpoint(model) == serialize_checkpoint(again);
  gate(8, same, "deterministic reruns give byte-equal checkpoints",
       std::string(same ? "identical" : "different") + ", " +
           std::to_string(serialize_checkpoint(model).size()) + " bytes, " +
           fmt("%.0fs", seconds_since(t0)));

  // Criterion 6.
  const DatasetManifest train = testing::small_dataset(root / "train64", 64, 64, 101);
  const DatasetManifest test = testing::small_dataset(root / "test32", 32, 64, 202);
  t0 = Clock::now();
  TrainConfig cfg = TrainConfig::desk();
  cfg.variant = Variant::kDdmsSG;
  cfg.seed = 3;
  cfg.stage = Stage::kCoarse;
  cfg.max_steps = 500;
  const TrainResult coarse = train_stage(train, cfg);
  cfg.stage = Stage::kFine;
  cfg.max_steps = 1000;
  const TrainResult fine = train_stage(train, cfg, &coarse.store);
  const EvalRow held = evaluate(fine.store, test).rows.back();
  const double gen_secs = seconds_since(t0);
  gate(6, held.psnr - held.psnr_input >= 3.0 && gen_secs <= 3600,
       "held-out improvement, 64 train / 32 test pairs",
       "input " + format_psnr(held.psnr_input) + " dB -> " + format_psnr(held.psnr) + " dB (" +
           fmt("%+.2f", held.psnr - held.psnr_input) + " dB), " + fmt("%.0fs", gen_secs));

  // Criterion 7, soft.
  AblationOptions ab;
  ab.base = TrainConfig::desk();
  ab.coarse_steps = 200;
  ab.fine_steps = 400;
  const AblationReport abl = run_ablation(
      train, test, {Variant::kSnowCnn, Variant::kDdmsPlus, Variant::kDdmsSG}, {1, 2, 3}, ab);
  std::printf("%s", abl.table().c_str());
  const double sg = abl.find(Variant::kDdmsSG)->mean_psnr;
  const double plus = abl.find(Variant::kDdmsPlus)->mean_psnr;
  const double cnn = abl.find(Variant::kSnowCnn)->mean_psnr;
  const bool ordered = sg >= plus && plus >= cnn;
  report(7, ordered ? "PASS" : "WARN", "toy ablation ordering ddms_sg >= ddms_plus >= snowcnn",
         "means " + format_psnr(sg) + " / " + format_psnr(plus) + " / " + format_psnr(cnn) +
             (ordered ? "" : "; ordering violated, reported only"));

  std::printf("%s\n", gated_failures == 0 ? "acceptance: all gated criteria passed"
                                          : "acceptance: gated criteria failed");
  return gated_failures == 0 ? 0 : 1;
}

}  // namespace

int main() {
  try {
    return run_all(testing::scratch_dir("acceptance"));
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
}
