#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "desnow/losses.hpp"
#include "desnow/pipeline.hpp"
#include "desnow/snow_synthesis.hpp"

namespace desnow {

enum class Stage { kCoarse, kFine };

std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct TrainConfig {
  int batch_size = 8;
  int crop = 224;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  double init_std = 0.01;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  Stage stage = Stage::kCoarse;

  // Learning-rate drop: compare the mean loss of the last `lr_window` steps
  // with the window before; below `lr_tolerance` relative improvement the
  // rate falls to lr_end for good.
  int lr_window = 200;
  double lr_tolerance = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool deterministic = true;
  bool joint = false;  // fine stage also updates the coarse network

  Variant variant = Variant::kDdmsSG;
  CoarseNetConfig coarse;
  DdmsConfig fine;
  LossConfig loss;

  // Reduced widths, 32x32 crops and a higher starting rate for single-core
  // runs on 64x64 synthetic scenes.
  static TrainConfig desk();

  void validate() const;
  Pipeline pipeline() const;
};

// Human-readable key = value text holding every field; '#' starts a comment.
std::string format_train_config(const TrainConfig& cfg);
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path);

// Weights N(0, std^2) in declaration order from one seeded generator; zero
// biases and residual heads; 0.5 for fusion base weights.
ParamStore init_params(const ParamLayout& layout, double std, std::uint64_t seed);

struct AugmentDraw {
  int y = 0;
  int x = 0;
  bool flip = false;
};

AugmentDraw draw_augment(int height, int width, int crop, std::mt19937_64& rng);
// One crop window and one horizontal-flip decision shared by the images and
// both prior maps.
Sample apply_augment(const Sample& sample, int crop, const AugmentDraw& draw);
Sample augment(const Sample& sample, int crop, std::uint64_t seed);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update of every named gradient's parameter in `store`.
  void step(ParamStore& store, const std::vector<std::pair<std::string, Tensor>>& grads,
            double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

class LrSchedule {
 public:
  LrSchedule(double start, double end, int window, double tolerance);

  double lr() const { return dropped_ ? end_ : start_; }
  bool dropped() const { return dropped_; }
  int dropped_at() const { return dropped_at_; }
  void observe(double loss);

 private:
  double start_, end_;
  int window_;
  double tolerance_;
  std::vector<double> history_;
  bool dropped_ = false;
  int dropped_at_ = -1;
};

struct LogRow {
  int step = 0;
  Stage stage = Stage::kCoarse;
  double l1 = 0, lp = 0, total = 0, lr = 0;
};

std::string format_log_header();
std::string format_log_row(const LogRow& row);

struct TrainOutputs {
  std::filesystem::path log_path;        // empty: no log file
  std::filesystem::path checkpoint_dir;  // empty: no periodic checkpoints
};

struct TrainResult {
  ParamStore store;
  std::vector<LogRow> log;
};

// One training stage. The coarse stage trains coarse.* alone (single-scale
// loss). The fine stage needs `previous` to hold the trained coarse network
// whenever the variant has a coarse stage; its parameters are copied into the
// result unchanged unless cfg.joint is set.
TrainResult train_stage(const DatasetManifest& manifest, const TrainConfig& cfg,
                        const ParamStore* previous = nullptr, const TrainOutputs& outputs = {});

// The images and augmentation draws a given step trains on. A pure function
// of (seed, stage, step): samples are visited in per-epoch shuffled order.
struct BatchPlan {
  std::vector<int> indices;
  std::vector<AugmentDraw> draws;
};

BatchPlan plan_batch(const TrainConfig& cfg, int n_samples, int height, int width, int step);

// (l1, lp, total) of one planned batch under `store`, computed exactly as the
// training step does before its update.
std::array<double, 3> batch_loss(const TrainConfig& cfg, const ParamStore& store,
                                 const std::vector<Sample>& samples, const BatchPlan& plan);

struct EvalRow {
  std::string label;  // severity name or "all"
  int count = 0;
  double psnr_input = 0, ssim_input = 0;
  double psnr = 0, ssim = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // one per severity present, then "all"
  std::vector<double> per_image_psnr;
  std::string table() const;
};

// Restores every manifest entry and scores 8-bit-quantised outputs against
// the clean images. When `save_dir` is given the outputs are written there
// as PPM under the entry's snowy file name.
EvalReport evaluate(const ParamStore& store, const DatasetManifest& manifest,
                    const std::filesystem::path& save_dir = {});

struct AblationOptions {
  TrainConfig base;
  int coarse_steps = 500;
  int fine_steps = 500;
  std::filesystem::path out_dir;  // empty: nothing saved
  std::function<void(const std::string&)> progress;
};

struct AblationRow {
  Variant variant = Variant::kDdmsSG;
  std::vector<double> psnr;  // per seed
  std::vector<double> ssim;
  double mean_psnr = 0, mean_ssim = 0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  double input_psnr = 0, input_ssim = 0;
  std::vector<AblationRow> rows;
  std::string table() const;
  const AblationRow* find(Variant v) const;
};

// Trains every variant under every seed with the same fine-stage budget.
// Variants with a coarse stage share one coarse network per seed.
AblationReport run_ablation(const DatasetManifest& train, const DatasetManifest& test,
                            const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const AblationOptions& options);

}  // namespace desnow
