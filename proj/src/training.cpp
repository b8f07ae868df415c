#include "desnow/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "desnow/error.hpp"

namespace desnow {
namespace {

constexpr std::uint64_t kCoarseInitTag = 0xC0A75E;
constexpr std::uint64_t kFineInitTag = 0xF17E;
constexpr std::uint64_t kOrderTag = 0x0DE5;
constexpr std::uint64_t kAugmentTag = 0xA06;

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t stage_tag(Stage s) { return s == Stage::kCoarse ? 1 : 2; }

// Everything one stage needs to build a batch loss.
struct StageContext {
  const TrainConfig& cfg;
  Pipeline pipe;
  const std::vector<Sample>& samples;
  // Fine stage without joint training: samples whose `snowy` holds the frozen
  // coarse result.
  std::vector<Sample> fine_inputs;
  PerceptualExtractor extractor;

  StageContext(const TrainConfig& c, const std::vector<Sample>& s)
      : cfg(c), pipe(c.pipeline()), samples(s), extractor(c.loss.perceptual_layer) {}

  bool frozen_coarse_inputs() const {
    return cfg.stage == Stage::kFine && pipe.has_coarse() && !cfg.joint;
  }

  void prepare(const ParamStore& store) {
    if (!frozen_coarse_inputs()) return;
    fine_inputs = samples;
    for (auto& s : fine_inputs) s.snowy = pipe.coarse_result(store, s.snowy);
  }
};

struct BatchVars {
  Var l1, lp, total;
};

BatchVars forward_batch(StageContext& ctx, ParamBinding& p, const BatchPlan& plan) {
  const TrainConfig& cfg = ctx.cfg;
  const auto& source = ctx.frozen_coarse_inputs() ? ctx.fine_inputs : ctx.samples;
  std::vector<Tensor> snowy, clean;
  std::vector<SemanticMap> sem;
  std::vector<DepthMap> depth;
  for (std::size_t i = 0; i < plan.indices.size(); ++i) {
    Sample s = apply_augment(source[plan.indices[i]], cfg.crop, plan.draws[i]);
    snowy.push_back(std::move(s.snowy.pixels));
    clean.push_back(std::move(s.clean.pixels));
    sem.push_back(std::move(s.semantic));
    depth.push_back(std::move(s.depth));
  }
  ag::Graph& g = p.graph();
  Var x = g.constant(stack_batch(snowy));
  Var target = g.constant(stack_batch(clean));
  const L1Normalization norm = cfg.loss.l1_normalization;

  BatchVars out;
  if (cfg.stage == Stage::kCoarse) {
    Var y = ctx.pipe.coarse().forward(p, x);
    out.l1 = smooth_l1(y, target, norm);
    out.lp = perceptual(y, target, ctx.extractor);
  } else {
    Var input = x;
    if (ctx.pipe.has_coarse() && cfg.joint) input = ctx.pipe.coarse().forward(p, x);
    const FineNetwork& fine = ctx.pipe.fine();
    PriorPyramid priors;
    const bool needs_priors =
        uses_semantic_prior(cfg.variant) || uses_geometric_prior(cfg.variant);
    if (needs_priors) priors = build_prior_pyramid(sem, depth, fine.config().n_scales);
    std::vector<Var> preds = fine.forward(p, input, needs_priors ? &priors : nullptr);
    std::vector<Var> targets(preds.size());
    targets.back() = target;
    for (int s = static_cast<int>(preds.size()) - 2; s >= 0; --s) {
      targets[s] = ag::avg_pool2x(targets[s + 1]);
    }
    auto [l1, lp] = multiscale_losses(preds, targets, ctx.extractor, norm);
    out.l1 = l1;
    out.lp = lp;
  }
  out.total = total_loss(out.l1, out.lp, cfg.loss);
  return out;
}

ParamBinding::Predicate trainable_for(const TrainConfig& cfg) {
  if (cfg.stage == Stage::kCoarse) {
    return [](const std::string& n) { return starts_with(n, "coarse."); };
  }
  if (cfg.joint) return nullptr;
  return [](const std::string& n) { return starts_with(n, "fine."); };
}

void check_crop(const TrainConfig& cfg, const std::vector<Sample>& samples, int multiple) {
  for (const auto& s : samples) {
    if (s.snowy.height() < cfg.crop || s.snowy.width() < cfg.crop) {
      throw InvalidArgument("training images (" + std::to_string(s.snowy.height()) + "x" +
                            std::to_string(s.snowy.width()) + ") are smaller than crop " +
                            std::to_string(cfg.crop));
    }
  }
  if (cfg.crop % multiple != 0) {
    throw InvalidArgument("crop " + std::to_string(cfg.crop) + " must be a multiple of " +
                          std::to_string(multiple) + " for this network");
  }
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(Stage s) { return s == Stage::kCoarse ? "coarse" : "fine"; }

Stage parse_stage(const std::string& s) {
  if (s == "coarse") return Stage::kCoarse;
  if (s == "fine") return Stage::kFine;
  throw InvalidArgument("unknown stage '" + s + "' (expected coarse|fine)");
}

// ------------------------------------------------------------- config

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.batch_size = 4;
  c.crop = 32;
  c.lr_start = 1e-3;
  c.init_std = 0.05;
  c.lr_end = 1e-6;
  c.max_steps = 1000;
  c.coarse.channels = 16;
  c.coarse.growth = 8;
  c.fine.channels = 16;
  c.fine.rdbs_per_row = 2;
  c.fine.growth = 8;
  c.fine.attention_hidden = 16;
  c.fine.snowcnn_blocks = 3;
  c.fine.rrdb_depth = 2;
  return c;
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(crop >= 16 && crop % 4 == 0, "crop must be >= 16 and divisible by 4");
  require(lr_start > 0 && lr_end > 0 && lr_end <= lr_start,
          "learning rates must satisfy 0 < lr_end <= lr_start");
  require(init_std > 0, "init_std must be > 0");
  require(max_steps >= 0, "max_steps must be >= 0");
  require(lr_window >= 1 && lr_tolerance >= 0, "invalid learning-rate schedule window");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 &&
              adam_eps > 0,
          "invalid Adam constants");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  coarse.validate();
  DdmsConfig f = fine;
  f.variant = variant;
  f.validate();
  loss.validate();
  require(loss.scales == fine.n_scales, "loss.scales must equal fine.n_scales");
}

Pipeline TrainConfig::pipeline() const { return Pipeline(variant, coarse, fine); }

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "batch_size = " << c.batch_size << "\n"
     << "crop = " << c.crop << "\n"
     << "lr_start = " << format_double(c.lr_start) << "\n"
     << "lr_end = " << format_double(c.lr_end) << "\n"
     << "init_std = " << format_double(c.init_std) << "\n"
     << "max_steps = " << c.max_steps << "\n"
     << "seed = " << c.seed << "\n"
     << "stage = " << to_string(c.stage) << "\n"
     << "lr_window = " << c.lr_window << "\n"
     << "lr_tolerance = " << format_double(c.lr_tolerance) << "\n"
     << "optimizer = adam\n"
     << "adam_beta1 = " << format_double(c.adam_beta1) << "\n"
     << "adam_beta2 = " << format_double(c.adam_beta2) << "\n"
     << "adam_eps = " << format_double(c.adam_eps) << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n"
     << "deterministic = " << (c.deterministic ? "true" : "false") << "\n"
     << "joint = " << (c.joint ? "true" : "false") << "\n"
     << "variant = " << to_string(c.variant) << "\n"
     << "coarse.channels = " << c.coarse.channels << "\n"
     << "coarse.n_core_blocks = " << c.coarse.n_core_blocks << "\n"
     << "coarse.n_rows = " << c.coarse.n_rows << "\n"
     << "coarse.growth = " << c.coarse.growth << "\n"
     << "fine.n_scales = " << c.fine.n_scales << "\n"
     << "fine.channels = " << c.fine.channels << "\n"
     << "fine.rdbs_per_row = " << c.fine.rdbs_per_row << "\n"
     << "fine.feature_rows = " << c.fine.feature_rows << "\n"
     << "fine.growth = " << c.fine.growth << "\n"
     << "fine.semantic_group_width = " << c.fine.semantic_group_width << "\n"
     << "fine.geometric_group_width = " << c.fine.geometric_group_width << "\n"
     << "fine.attention_hidden = " << c.fine.attention_hidden << "\n"
     << "fine.snowcnn_blocks = " << c.fine.snowcnn_blocks << "\n"
     << "fine.rrdb_depth = " << c.fine.rrdb_depth << "\n"
     << "loss.beta = " << format_double(c.loss.beta) << "\n"
     << "loss.scales = " << c.loss.scales << "\n"
     << "loss.perceptual_layer = " << c.loss.perceptual_layer << "\n"
     << "loss.l1_normalization = "
     << (c.loss.l1_normalization == L1Normalization::kBatch ? "batch" : "per_element") << "\n";
  return os.str();
}

TrainConfig parse_train_config(const std::string& text, TrainConfig c) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto bad = [&](const std::string& why) {
      return InvalidArgument("config line " + std::to_string(line_no) + " (" + key + "): " + why);
    };
    auto as_int = [&] {
      std::size_t pos = 0;
      int v = 0;
      try {
        v = std::stoi(value, &pos);
      } catch (const std::exception&) {
        throw bad("not an integer: '" + value + "'");
      }
      if (pos != value.size()) throw bad("not an integer: '" + value + "'");
      return v;
    };
    auto as_double = [&] {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(value, &pos);
      } catch (const std::exception&) {
        throw bad("not a number: '" + value + "'");
      }
      if (pos != value.size()) throw bad("not a number: '" + value + "'");
      return v;
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw bad("not a boolean: '" + value + "'");
    };

    if (key == "batch_size") c.batch_size = as_int();
    else if (key == "crop") c.crop = as_int();
    else if (key == "lr_start") c.lr_start = as_double();
    else if (key == "lr_end") c.lr_end = as_double();
    else if (key == "init_std") c.init_std = as_double();
    else if (key == "max_steps") c.max_steps = as_int();
    else if (key == "seed") {
      try {
        std::size_t pos = 0;
        c.seed = std::stoull(value, &pos, 0);
        if (pos != value.size()) throw bad("not a seed: '" + value + "'");
      } catch (const std::logic_error&) {
        throw bad("not a seed: '" + value + "'");
      }
    }
    else if (key == "stage") c.stage = parse_stage(value);
    else if (key == "lr_window") c.lr_window = as_int();
    else if (key == "lr_tolerance") c.lr_tolerance = as_double();
    else if (key == "optimizer") {
      if (value != "adam") throw bad("only 'adam' is available");
    }
    else if (key == "adam_beta1") c.adam_beta1 = as_double();
    else if (key == "adam_beta2") c.adam_beta2 = as_double();
    else if (key == "adam_eps") c.adam_eps = as_double();
    else if (key == "checkpoint_every") c.checkpoint_every = as_int();
    else if (key == "deterministic") c.deterministic = as_bool();
    else if (key == "joint") c.joint = as_bool();
    else if (key == "variant") c.variant = parse_variant(value);
    else if (key == "coarse.channels") c.coarse.channels = as_int();
    else if (key == "coarse.n_core_blocks") c.coarse.n_core_blocks = as_int();
    else if (key == "coarse.n_rows") c.coarse.n_rows = as_int();
    else if (key == "coarse.growth") c.coarse.growth = as_int();
    else if (key == "fine.n_scales") c.fine.n_scales = as_int();
    else if (key == "fine.channels") c.fine.channels = as_int();
    else if (key == "fine.rdbs_per_row") c.fine.rdbs_per_row = as_int();
    else if (key == "fine.feature_rows") c.fine.feature_rows = as_int();
    else if (key == "fine.growth") c.fine.growth = as_int();
    else if (key == "fine.semantic_group_width") c.fine.semantic_group_width = as_int();
    else if (key == "fine.geometric_group_width") c.fine.geometric_group_width = as_int();
    else if (key == "fine.attention_hidden") c.fine.attention_hidden = as_int();
    else if (key == "fine.snowcnn_blocks") c.fine.snowcnn_blocks = as_int();
    else if (key == "fine.rrdb_depth") c.fine.rrdb_depth = as_int();
    else if (key == "loss.beta") c.loss.beta = as_double();
    else if (key == "loss.scales") c.loss.scales = as_int();
    else if (key == "loss.perceptual_layer") c.loss.perceptual_layer = value;
    else if (key == "loss.l1_normalization") {
      if (value == "per_element") c.loss.l1_normalization = L1Normalization::kPerElement;
      else if (value == "batch") c.loss.l1_normalization = L1Normalization::kBatch;
      else throw bad("expected per_element|batch");
    }
    else throw bad("unknown key");
  }
  c.fine.variant = c.variant;
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << format_train_config(cfg);
  if (!out) throw IoError("failed writing config " + path.string());
}

// -------------------------------------------------------------- init

ParamStore init_params(const ParamLayout& layout, double std, std::uint64_t seed) {
  require(std > 0 && std::isfinite(std), "init_params: std must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std);
  ParamStore store;
  for (const auto& spec : layout.specs()) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case ParamInit::kGaussian:
        for (double& v : t.values()) v = dist(rng);
        break;
      case ParamInit::kZero:
        break;
      case ParamInit::kHalf:
        t.fill(0.5);
        break;
    }
    store.set(spec.name, std::move(t));
  }
  store.rng_seed = seed;
  return store;
}

// ----------------------------------------------------------- augment

AugmentDraw draw_augment(int height, int width, int crop, std::mt19937_64& rng) {
  if (height < crop || width < crop) {
    throw InvalidArgument("image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is smaller than crop " + std::to_string(crop));
  }
  AugmentDraw d;
  d.y = std::uniform_int_distribution<int>(0, height - crop)(rng);
  d.x = std::uniform_int_distribution<int>(0, width - crop)(rng);
  d.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  return d;
}

Sample apply_augment(const Sample& s, int crop, const AugmentDraw& d) {
  const int h = s.snowy.height(), w = s.snowy.width();
  if (h < crop || w < crop) {
    throw InvalidArgument("image " + std::to_string(h) + "x" + std::to_string(w) +
                          " is smaller than crop " + std::to_string(crop));
  }
  require(s.clean.height() == h && s.clean.width() == w && s.semantic.height == h &&
              s.semantic.width == w && s.depth.height == h && s.depth.width == w,
          "augment: sample components differ in size");
  require(d.y >= 0 && d.x >= 0 && d.y + crop <= h && d.x + crop <= w,
          "augment: crop window outside the image");
  Sample out;
  out.severity = s.severity;
  out.snowy = ImageTensor(crop, crop);
  out.clean = ImageTensor(crop, crop);
  out.semantic = {crop, crop, std::vector<std::uint8_t>(std::size_t(crop) * crop)};
  out.depth = {crop, crop, std::vector<float>(std::size_t(crop) * crop)};
  for (int y = 0; y < crop; ++y) {
    for (int x = 0; x < crop; ++x) {
      const int sy = d.y + y;
      const int sx = d.x + (d.flip ? crop - 1 - x : x);
      for (int c = 0; c < 3; ++c) {
        out.snowy.at(y, x, c) = s.snowy.at(sy, sx, c);
        out.clean.at(y, x, c) = s.clean.at(sy, sx, c);
      }
      out.semantic.labels[std::size_t(y) * crop + x] = s.semantic.at(sy, sx);
      out.depth.depth[std::size_t(y) * crop + x] = s.depth.at(sy, sx);
    }
  }
  return out;
}

Sample augment(const Sample& sample, int crop, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return apply_augment(sample, crop,
                       draw_augment(sample.snowy.height(), sample.snowy.width(), crop, rng));
}

// ---------------------------------------------------------- optimiser

void Adam::step(ParamStore& store, const std::vector<std::pair<std::string, Tensor>>& grads,
                double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Tensor& p = store.get_mut(name);
    require(g.same_shape(p), "adam: gradient shape mismatch for " + name);
    auto [it, fresh] = moments_.try_emplace(name);
    if (fresh) it->second = {Tensor(p.shape()), Tensor(p.shape())};
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

LrSchedule::LrSchedule(double start, double end, int window, double tolerance)
    : start_(start), end_(end), window_(window), tolerance_(tolerance) {
  require(start > 0 && end > 0 && end <= start, "lr schedule: need 0 < end <= start");
  require(window >= 1, "lr schedule: window must be >= 1");
}

void LrSchedule::observe(double loss) {
  history_.push_back(loss);
  const int n = static_cast<int>(history_.size());
  if (dropped_ || n < 2 * window_ || n % window_ != 0) return;
  const auto end = history_.end();
  const double recent = std::accumulate(end - window_, end, 0.0) / window_;
  const double before = std::accumulate(end - 2 * window_, end - window_, 0.0) / window_;
  if (before <= 0.0 || (before - recent) / before < tolerance_) {
    dropped_ = true;
    dropped_at_ = n;
  }
}

std::string format_log_header() { return "step,stage,l1,lp,total,lr"; }

std::string format_log_row(const LogRow& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%d,%s,%.10g,%.10g,%.10g,%.6g", r.step,
                to_string(r.stage).c_str(), r.l1, r.lp, r.total, r.lr);
  return buf;
}

// ------------------------------------------------------------ training

BatchPlan plan_batch(const TrainConfig& cfg, int n_samples, int height, int width, int step) {
  require(n_samples >= 1, "plan_batch: no samples");
  const std::uint64_t base = derive_seed(cfg.seed, stage_tag(cfg.stage));
  const std::uint64_t order_seed = derive_seed(base, kOrderTag);
  const std::uint64_t augment_seed = derive_seed(base, kAugmentTag);
  BatchPlan plan;
  std::vector<int> perm;
  long cached_epoch = -1;
  for (int j = 0; j < cfg.batch_size; ++j) {
    const long pos = static_cast<long>(step) * cfg.batch_size + j;
    const long epoch = pos / n_samples;
    if (epoch != cached_epoch) {
      perm.resize(n_samples);
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(derive_seed(order_seed, static_cast<std::uint64_t>(epoch)));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    plan.indices.push_back(perm[pos % n_samples]);
    std::mt19937_64 rng(derive_seed(augment_seed, static_cast<std::uint64_t>(pos)));
    plan.draws.push_back(draw_augment(height, width, cfg.crop, rng));
  }
  return plan;
}

std::array<double, 3> batch_loss(const TrainConfig& cfg, const ParamStore& store,
                                 const std::vector<Sample>& samples, const BatchPlan& plan) {
  StageContext ctx(cfg, samples);
  ctx.prepare(store);
  ag::Graph graph(false);
  ParamBinding p(graph, store);
  BatchVars v = forward_batch(ctx, p, plan);
  return {v.l1.value()[0], v.lp.value()[0], v.total.value()[0]};
}

TrainResult train_stage(const DatasetManifest& manifest, const TrainConfig& cfg,
                        const ParamStore* previous, const TrainOutputs& outputs) {
  cfg.validate();
  const std::vector<Sample> samples = load_samples(manifest);
  StageContext ctx(cfg, samples);
  const Pipeline& pipe = ctx.pipe;

  TrainResult result;
  ParamStore& store = result.store;
  if (cfg.stage == Stage::kCoarse) {
    check_crop(cfg, samples, pipe.coarse().size_multiple());
    ParamLayout layout;
    pipe.coarse().declare(layout);
    store = init_params(layout, cfg.init_std, derive_seed(cfg.seed, kCoarseInitTag));
  } else {
    check_crop(cfg, samples, pipe.size_multiple());
    if (pipe.has_coarse()) {
      const ParamLayout coarse = pipe.coarse_layout();
      if (previous == nullptr) {
        throw InvalidState("fine stage of " + to_string(cfg.variant) +
                           " needs a trained coarse checkpoint");
      }
      for (const auto& spec : coarse.specs()) {
        if (!previous->contains(spec.name) ||
            previous->get(spec.name).shape() != spec.shape) {
          throw InvalidState("coarse checkpoint lacks a matching '" + spec.name + "'");
        }
        store.set(spec.name, previous->get(spec.name));
      }
    }
    store.merge_from(
        init_params(pipe.fine_layout(), cfg.init_std, derive_seed(cfg.seed, kFineInitTag)));
  }
  store.rng_seed = cfg.seed;
  pipe.describe(store);
  store.attributes["stage"] = to_string(cfg.stage);
  ctx.prepare(store);

  std::ofstream log;
  if (!outputs.log_path.empty()) {
    log.open(outputs.log_path);
    if (!log) throw IoError("cannot write log " + outputs.log_path.string());
    log << format_log_header() << "\n";
  }
  if (!outputs.checkpoint_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(outputs.checkpoint_dir, ec);
    if (ec) throw IoError("cannot create " + outputs.checkpoint_dir.string());
  }
  auto save_periodic = [&](int step) {
    if (outputs.checkpoint_dir.empty()) return;
    char name[64];
    std::snprintf(name, sizeof name, "%s_step%06d.ckpt", to_string(cfg.stage).c_str(), step);
    save_checkpoint(store, outputs.checkpoint_dir / name);
  };

  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  LrSchedule schedule(cfg.lr_start, cfg.lr_end, cfg.lr_window, cfg.lr_tolerance);
  const auto predicate = trainable_for(cfg);
  const int h = samples.front().snowy.height(), w = samples.front().snowy.width();
  if (cfg.checkpoint_every > 0) save_periodic(0);

  for (int step = 0; step < cfg.max_steps; ++step) {
    const BatchPlan plan = plan_batch(cfg, static_cast<int>(samples.size()), h, w, step);
    LogRow row;
    row.step = step;
    row.stage = cfg.stage;
    row.lr = schedule.lr();
    std::vector<std::pair<std::string, Tensor>> grads;
    {
      ag::Graph graph(true);
      ParamBinding p(graph, store, predicate);
      BatchVars v = forward_batch(ctx, p, plan);
      row.l1 = v.l1.value()[0];
      row.lp = v.lp.value()[0];
      row.total = v.total.value()[0];
      if (!std::isfinite(row.total)) {
        throw InvalidState("training diverged at step " + std::to_string(step));
      }
      graph.backward(v.total);
      for (const auto& [name, var] : p.trainable()) {
        grads.emplace_back(name, var.grad().empty() ? Tensor(var.shape()) : var.grad());
      }
    }
    adam.step(store, grads, row.lr);
    schedule.observe(row.total);
    result.log.push_back(row);
    if (log.is_open()) log << format_log_row(row) << "\n" << std::flush;
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      save_periodic(step + 1);
    }
  }
  return result;
}

// ---------------------------------------------------------- evaluation

std::string EvalReport::table() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %5s %10s %9s %10s %9s\n", "severity", "n", "PSNR(in)",
                "SSIM(in)", "PSNR(out)", "SSIM(out)");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %5d %10s %9.4f %10s %9.4f\n", r.label.c_str(), r.count,
                  format_psnr(r.psnr_input).c_str(), r.ssim_input, format_psnr(r.psnr).c_str(),
                  r.ssim);
    os << buf;
  }
  return os.str();
}

EvalReport evaluate(const ParamStore& store, const DatasetManifest& manifest,
                    const std::filesystem::path& save_dir) {
  const Pipeline pipe = Pipeline::from_store(store);
  if (!save_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(save_dir, ec);
    if (ec) throw IoError("cannot create " + save_dir.string());
  }
  const std::vector<Sample> samples = load_samples(manifest);
  struct Acc {
    std::vector<double> pin, sin, pout, sout;
  };
  std::map<Severity, Acc> by_severity;
  Acc all;
  EvalReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const ImageTensor out =
        quantize_8bit(pipe.infer(store, s.snowy, &s.semantic, &s.depth));
    if (!save_dir.empty()) {
      const auto name = std::filesystem::path(manifest.entries[i].snowy_path).filename();
      write_ppm(save_dir / name, out);
    }
    const double pin = psnr(s.snowy, s.clean), sin = ssim(s.snowy, s.clean);
    const double pout = psnr(out, s.clean), sout = ssim(out, s.clean);
    report.per_image_psnr.push_back(pout);
    for (Acc* a : {&by_severity[s.severity], &all}) {
      a->pin.push_back(pin);
      a->sin.push_back(sin);
      a->pout.push_back(pout);
      a->sout.push_back(sout);
    }
  }
  auto row = [](const std::string& label, const Acc& a) {
    return EvalRow{label, static_cast<int>(a.pout.size()), mean(a.pin), mean(a.sin),
                   mean(a.pout), mean(a.sout)};
  };
  for (const auto& [sev, acc] : by_severity) report.rows.push_back(row(to_string(sev), acc));
  report.rows.push_back(row("all", all));
  return report;
}

// ------------------------------------------------------------ ablation

const AblationRow* AblationReport::find(Variant v) const {
  for (const auto& r : rows)
    if (r.variant == v) return &r;
  return nullptr;
}

std::string AblationReport::table() const {
  std::ostringstream os;
  char buf[64];
  os << "variant     ";
  for (auto s : seeds) {
    std::snprintf(buf, sizeof buf, " %10s", ("seed" + std::to_string(s)).c_str());
    os << buf;
  }
  os << "  mean PSNR  mean SSIM\n";
  std::snprintf(buf, sizeof buf, "%-12s", "input");
  os << buf;
  for (std::size_t i = 0; i < seeds.size(); ++i) os << "           ";
  std::snprintf(buf, sizeof buf, " %10s %10.4f\n", format_psnr(input_psnr).c_str(), input_ssim);
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s", to_string(r.variant).c_str());
    os << buf;
    for (double p : r.psnr) {
      std::snprintf(buf, sizeof buf, " %10s", format_psnr(p).c_str());
      os << buf;
    }
    std::snprintf(buf, sizeof buf, " %10s %10.4f\n", format_psnr(r.mean_psnr).c_str(),
                  r.mean_ssim);
    os << buf;
  }
  return os.str();
}

AblationReport run_ablation(const DatasetManifest& train, const DatasetManifest& test,
                            const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const AblationOptions& options) {
  require(!variants.empty(), "ablation needs at least one variant");
  require(!seeds.empty(), "ablation needs at least one seed");
  AblationReport report;
  report.seeds = seeds;
  for (Variant v : variants) report.rows.push_back(AblationRow{v, {}, {}, 0, 0});
  auto note = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  for (std::uint64_t seed : seeds) {
    std::optional<ParamStore> coarse;
    for (auto& row : report.rows) {
      TrainConfig cfg = options.base;
      cfg.variant = row.variant;
      cfg.fine.variant = row.variant;
      cfg.seed = seed;
      const std::filesystem::path dir =
          options.out_dir.empty()
              ? std::filesystem::path()
              : options.out_dir / to_string(row.variant) / ("seed" + std::to_string(seed));
      if (uses_coarse_stage(row.variant) && !coarse) {
        TrainConfig cc = cfg;
        cc.stage = Stage::kCoarse;
        cc.max_steps = options.coarse_steps;
        note("seed " + std::to_string(seed) + ": coarse stage");
        coarse = train_stage(train, cc, nullptr).store;
      }
      cfg.stage = Stage::kFine;
      cfg.max_steps = options.fine_steps;
      note("seed " + std::to_string(seed) + ": " + to_string(row.variant));
      TrainOutputs outs;
      if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        outs.log_path = dir / "train_log.csv";
      }
      TrainResult r = train_stage(train, cfg, coarse ? &*coarse : nullptr, outs);
      if (!dir.empty()) save_checkpoint(r.store, dir / "model.ckpt");
      const EvalReport ev = evaluate(r.store, test, dir.empty() ? dir : dir / "outputs");
      row.psnr.push_back(ev.rows.back().psnr);
      row.ssim.push_back(ev.rows.back().ssim);
      report.input_psnr = ev.rows.back().psnr_input;
      report.input_ssim = ev.rows.back().ssim_input;
    }
  }
  for (auto& row : report.rows) {
    row.mean_psnr = mean(row.psnr);
    row.mean_ssim = mean(row.ssim);
  }
  return report;
}

}  // namespace desnow
