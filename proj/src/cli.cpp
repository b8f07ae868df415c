#include "desnow/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "desnow/error.hpp"
#include "json.hpp"

namespace desnow::cli {
namespace {

using nlohmann::ordered_json;

constexpr const char* kPriorFallbackNote =
    "Without --semantic/--depth the fine network sees uniform priors (every pixel class 0, "
    "constant depth). Real photographs have no precomputed maps, so supply maps from an "
    "external segmentation and depth estimator for prior-guided restoration.";

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_snapshot(const fs::path& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::string str(const fs::path& p) { return p.empty() ? "" : p.string(); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetManifest scene_gen(int n, const fs::path& out_dir, std::uint64_t seed,
                          Severity severity, int size) {
  require(size >= 16 && size % 4 == 0, "--size must be >= 16 and divisible by 4");
  DatasetOptions opts;
  opts.height = opts.width = size;
  DatasetManifest m = build_dataset(n, SnowParams::for_severity(severity), out_dir, seed, opts);
  write_snapshot(out_dir / "run_config.json",
                 ordered_json{{"command", "scene-gen"},
                              {"n", n},
                              {"out", out_dir.string()},
                              {"seed", seed},
                              {"severity", to_string(severity)},
                              {"size", size}});
  return m;
}

DatasetManifest snowify(const fs::path& clean_dir, Severity severity, const fs::path& out_dir,
                        std::uint64_t seed, const fs::path& semantic_dir,
                        const fs::path& depth_dir) {
  if (semantic_dir.empty() || depth_dir.empty()) {
    throw InvalidArgument("snowify needs --semantic-dir and --depth-dir with prior maps");
  }
  if (!fs::is_directory(clean_dir)) throw IoError("not a directory: " + clean_dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(clean_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw IoError("no .ppm images in " + clean_dir.string());
  for (const char* sub : {"clean", "snowy", "semantic", "depth"}) ensure_dir(out_dir / sub);

  const SnowParams base = SnowParams::for_severity(severity);
  DatasetManifest m;
  m.global_seed = seed;
  m.snow = base;
  m.base_dir = out_dir;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string stem = images[i].stem().string();
    const ImageTensor clean = quantize_8bit(read_ppm(images[i]));
    validate_image(clean, 1);
    auto [sem, depth] =
        load_prior_maps(semantic_dir / (stem + ".pgm"), depth_dir / (stem + ".pfm"));
    if (sem.height != clean.height() || sem.width != clean.width()) {
      throw InvalidArgument("prior maps for " + stem + " do not match the image size");
    }
    if (i == 0) {
      m.height = clean.height();
      m.width = clean.width();
    }
    SnowParams params = base;
    params.seed = derive_seed(seed, i);
    const SnowLayer layer = generate_snow_mask(clean.height(), clean.width(), params);
    const ImageTensor snowy = quantize_8bit(composite(clean, layer.chroma, layer.mask));

    ManifestEntry e;
    e.clean_path = "clean/" + stem + ".ppm";
    e.snowy_path = "snowy/" + stem + ".ppm";
    e.semantic_path = "semantic/" + stem + ".pgm";
    e.depth_path = "depth/" + stem + ".pfm";
    e.severity = severity;
    e.seed = params.seed;
    write_ppm(m.resolve(e.clean_path), clean);
    write_ppm(m.resolve(e.snowy_path), snowy);
    write_label_pgm(m.resolve(e.semantic_path), sem);
    write_pfm(m.resolve(e.depth_path), depth);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.json");
  write_snapshot(out_dir / "run_config.json",
                 ordered_json{{"command", "snowify"},
                              {"clean_dir", clean_dir.string()},
                              {"severity", to_string(severity)},
                              {"out", out_dir.string()},
                              {"seed", seed},
                              {"semantic_dir", semantic_dir.string()},
                              {"depth_dir", depth_dir.string()}});
  return m;
}

ParamStore train(const TrainConfig& cfg, const fs::path& manifest_path, const fs::path& out_dir,
                 const fs::path& coarse_checkpoint) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::optional<ParamStore> previous;
  if (!coarse_checkpoint.empty()) previous = load_checkpoint(coarse_checkpoint);
  ensure_dir(out_dir);
  save_train_config(cfg, out_dir / "resolved_config.txt");
  write_snapshot(out_dir / "run_config.json",
                 ordered_json{{"command", "train"},
                              {"stage", to_string(cfg.stage)},
                              {"manifest", manifest_path.string()},
                              {"coarse", str(coarse_checkpoint)},
                              {"out", out_dir.string()},
                              {"config", "resolved_config.txt"}});
  TrainOutputs outs;
  outs.log_path = out_dir / "train_log.csv";
  if (cfg.checkpoint_every > 0) outs.checkpoint_dir = out_dir / "checkpoints";
  TrainResult r = train_stage(manifest, cfg, previous ? &*previous : nullptr, outs);
  save_checkpoint(r.store, out_dir / "model.ckpt");
  return std::move(r.store);
}

ImageTensor infer(const fs::path& checkpoint, const fs::path& image_path,
                  const fs::path& semantic, const fs::path& depth, const fs::path& out,
                  std::ostream& warn) {
  const ParamStore store = load_checkpoint(checkpoint);
  const Pipeline pipe = Pipeline::from_store(store);
  const ImageTensor image = read_ppm(image_path);
  if (semantic.empty() != depth.empty()) {
    throw InvalidArgument("--semantic and --depth must be given together");
  }
  ImageTensor result;
  if (semantic.empty()) {
    warn << "warning: no prior maps given; using uniform priors. " << kPriorFallbackNote
         << "\n";
    result = pipe.infer(store, image);
  } else {
    auto [sem, dep] = load_prior_maps(semantic, depth);
    result = pipe.infer(store, image, &sem, &dep);
  }
  result = quantize_8bit(result);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_ppm(out, result);
  write_snapshot(fs::path(out.string() + ".run.json"),
                 ordered_json{{"command", "infer"},
                              {"checkpoint", checkpoint.string()},
                              {"image", image_path.string()},
                              {"semantic", str(semantic)},
                              {"depth", str(depth)},
                              {"out", out.string()},
                              {"variant", to_string(pipe.variant())}});
  return result;
}

EvalReport eval(const fs::path& checkpoint, const fs::path& manifest_path,
                const fs::path& out_dir) {
  const ParamStore store = load_checkpoint(checkpoint);
  const DatasetManifest manifest = load_manifest(manifest_path);
  EvalReport report = evaluate(store, manifest, out_dir.empty() ? out_dir : out_dir / "outputs");
  if (!out_dir.empty()) {
    write_text(out_dir / "metrics.txt", report.table());
    write_snapshot(out_dir / "run_config.json",
                   ordered_json{{"command", "eval"},
                                {"checkpoint", checkpoint.string()},
                                {"manifest", manifest_path.string()},
                                {"out", out_dir.string()}});
  }
  return report;
}

ParamStore init_model(const TrainConfig& cfg, const fs::path& out) {
  cfg.validate();
  const Pipeline pipe = cfg.pipeline();
  ParamStore store = init_params(pipe.coarse_layout(), cfg.init_std, derive_seed(cfg.seed, 1));
  store.merge_from(init_params(pipe.fine_layout(), cfg.init_std, derive_seed(cfg.seed, 2)));
  store.rng_seed = cfg.seed;
  pipe.describe(store);
  store.attributes["stage"] = "init";
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  save_checkpoint(store, out);
  write_text(fs::path(out.string() + ".config.txt"), format_train_config(cfg));
  return store;
}

// ---------------------------------------------------------------- argv

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Snow removal: synthesis, training, inference and evaluation"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string severity = "medium";
  std::string config_path, variant_name, preset = "desk";
  bool deterministic = false;

  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value training config file");
    cmd->add_option("--variant", variant_name,
                    "snowcnn|msnet|ddms|ddms_plus|ddms_s|ddms_g|ddms_sg");
    cmd->add_option("--preset", preset, "base settings before --config: desk|full")
        ->check(CLI::IsMember({"desk", "full"}));
    cmd->add_flag("--deterministic", deterministic,
                  "single-threaded, fixed data order (the default behaviour)");
  };

  int n = 8, size = 64;
  std::string out_path;
  auto* gen = app.add_subcommand("scene-gen", "procedural scenes with snow, priors and manifest");
  gen->add_option("--n", n, "number of pairs")->check(CLI::PositiveNumber);
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("--severity", severity, "small|medium|large");
  gen->add_option("--size", size, "image height and width");

  std::string clean_dir, semantic_dir, depth_dir;
  auto* snow = app.add_subcommand("snowify", "composite snow onto external clean images");
  snow->add_option("--clean-dir", clean_dir, "directory of clean .ppm images")->required();
  snow->add_option("--semantic-dir", semantic_dir, "<stem>.pgm label maps")->required();
  snow->add_option("--depth-dir", depth_dir, "<stem>.pfm depth maps")->required();
  snow->add_option("--out", out_path, "output directory")->required();
  snow->add_option("--seed", seed, "snow seed");
  snow->add_option("--severity", severity, "small|medium|large");

  std::string stage = "coarse", manifest_path, coarse_path;
  int steps = -1;
  bool seed_given = false;
  auto* tr = app.add_subcommand("train", "train the coarse or the fine stage");
  tr->add_option("--stage", stage, "coarse|fine");
  tr->add_option("--manifest", manifest_path, "training manifest")->required();
  tr->add_option("--out", out_path, "output directory")->required();
  tr->add_option("--coarse", coarse_path, "coarse checkpoint (fine stage)");
  tr->add_option("--steps", steps, "override max_steps");
  auto* seed_opt = tr->add_option("--seed", seed, "training seed");
  add_train_flags(tr);

  std::string checkpoint, image, sem_path, depth_path;
  auto* inf = app.add_subcommand("infer", std::string("desnow one .ppm image. ") +
                                              kPriorFallbackNote);
  inf->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  inf->add_option("--image", image, "snowy .ppm")->required();
  inf->add_option("--semantic", sem_path, "label map .pgm");
  inf->add_option("--depth", depth_path, "depth map .pfm");
  inf->add_option("--out", out_path, "output .ppm")->required();

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM per severity over a manifest");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--manifest", manifest_path, "test manifest")->required();
  ev->add_option("--out", out_path, "directory for outputs and metrics");

  std::string train_manifest, test_manifest, variants = "snowcnn,ddms_plus,ddms_sg",
                                             seeds = "0,1,2";
  int coarse_steps = 300, fine_steps = 600;
  auto* ab = app.add_subcommand("ablate", "train and score several variants over seeds");
  ab->add_option("--train", train_manifest, "training manifest")->required();
  ab->add_option("--test", test_manifest, "test manifest")->required();
  ab->add_option("--variants", variants, "comma-separated variant names");
  ab->add_option("--seeds", seeds, "comma-separated seeds");
  ab->add_option("--coarse-steps", coarse_steps, "coarse-stage steps per seed");
  ab->add_option("--fine-steps", fine_steps, "fine-stage steps per variant");
  ab->add_option("--out", out_path, "output directory")->required();
  add_train_flags(ab);

  auto* in = app.add_subcommand("init", "write a freshly initialised (identity) checkpoint");
  in->add_option("--out", out_path, "checkpoint path")->required();
  in->add_option("--seed", seed, "initialisation seed");
  add_train_flags(in);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidArgument;
  }
  seed_given = seed_opt->count() > 0;

  auto resolve_config = [&]() {
    TrainConfig cfg = preset == "full" ? TrainConfig{} : TrainConfig::desk();
    if (!config_path.empty()) cfg = load_train_config(config_path, cfg);
    if (!variant_name.empty()) cfg.variant = parse_variant(variant_name);
    cfg.fine.variant = cfg.variant;
    cfg.deterministic = cfg.deterministic || deterministic;
    return cfg;
  };

  try {
    if (gen->parsed()) {
      const auto m = scene_gen(n, out_path, seed, parse_severity(severity), size);
      out << "wrote " << m.entries.size() << " pairs to " << out_path << "/manifest.json\n";
    } else if (snow->parsed()) {
      const auto m = snowify(clean_dir, parse_severity(severity), out_path, seed, semantic_dir,
                             depth_dir);
      out << "wrote " << m.entries.size() << " pairs to " << out_path << "/manifest.json\n";
    } else if (tr->parsed()) {
      TrainConfig cfg = resolve_config();
      cfg.stage = parse_stage(stage);
      if (steps >= 0) cfg.max_steps = steps;
      if (seed_given) cfg.seed = seed;
      train(cfg, manifest_path, out_path, coarse_path);
      out << "wrote " << out_path << "/model.ckpt\n";
    } else if (inf->parsed()) {
      infer(checkpoint, image, sem_path, depth_path, out_path, err);
      out << "wrote " << out_path << "\n";
    } else if (ev->parsed()) {
      out << eval(checkpoint, manifest_path, out_path).table();
    } else if (ab->parsed()) {
      TrainConfig cfg = resolve_config();
      std::vector<Variant> vs;
      for (const auto& v : split_list(variants)) vs.push_back(parse_variant(v));
      std::vector<std::uint64_t> ss;
      for (const auto& s : split_list(seeds)) {
        try {
          ss.push_back(std::stoull(s));
        } catch (const std::exception&) {
          throw InvalidArgument("bad seed '" + s + "'");
        }
      }
      AblationOptions opts;
      opts.base = cfg;
      opts.coarse_steps = coarse_steps;
      opts.fine_steps = fine_steps;
      opts.out_dir = out_path;
      opts.progress = [&](const std::string& msg) { err << msg << "\n"; };
      ensure_dir(out_path);
      save_train_config(cfg, fs::path(out_path) / "resolved_config.txt");
      write_snapshot(fs::path(out_path) / "run_config.json",
                     ordered_json{{"command", "ablate"},
                                  {"train", train_manifest},
                                  {"test", test_manifest},
                                  {"variants", variants},
                                  {"seeds", seeds},
                                  {"coarse_steps", coarse_steps},
                                  {"fine_steps", fine_steps},
                                  {"config", "resolved_config.txt"}});
      const AblationReport report = run_ablation(load_manifest(train_manifest),
                                                 load_manifest(test_manifest), vs, ss, opts);
      write_text(fs::path(out_path) / "ablation.txt", report.table());
      out << report.table();
    } else if (in->parsed()) {
      TrainConfig cfg = resolve_config();
      cfg.seed = seed;
      init_model(cfg, out_path);
      out << "wrote " << out_path << "\n";
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidArgument;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const InvalidState& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidState;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
  return kOk;
}

}  // namespace desnow::cli
