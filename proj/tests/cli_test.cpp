#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "desnow/cli.hpp"
#include "desnow/losses.hpp"
#include "desnow/priors.hpp"
#include "support/fixtures.hpp"

namespace desnow {
namespace {

namespace fs = std::filesystem;
using testing::scratch_dir;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "desnow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Table line for a label, e.g. "all".
std::string table_row(const std::string& table, const std::string& label) {
  std::istringstream in(table);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(label + " ", 0) == 0) return line;
  return {};
}

fs::path tiny_config_file(const fs::path& dir, Variant v) {
  const fs::path p = dir / "tiny.cfg";
  save_train_config(testing::tiny_config(v), p);
  return p;
}

TEST(Cli, HelpMentionsUniformPriorFallback) {
  const Result r = run({"infer", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("uniform"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("cli_codes");
  EXPECT_EQ(run({"scene-gen", "--out", (dir / "x").string(), "--severity", "blizzard"}).code, 2);
  EXPECT_EQ(run({"scene-gen", "--bogus"}).code, 2);
  EXPECT_EQ(run({"eval", "--checkpoint", (dir / "none.ckpt").string(), "--manifest",
                 (dir / "none.json").string()})
                .code,
            3);
  ASSERT_EQ(run({"scene-gen", "--n", "2", "--size", "32", "--out", (dir / "data").string()}).code, 0);
  const Result fine = run({"train", "--stage", "fine", "--manifest", (dir / "data" / "manifest.json").string(),
                           "--out", (dir / "run").string(), "--config",
                           tiny_config_file(dir, Variant::kDdmsSG).string()});
  EXPECT_EQ(fine.code, 4);
  EXPECT_NE(fine.err.find("error:"), std::string::npos);
  EXPECT_EQ(std::count(fine.err.begin(), fine.err.end(), '\n'), 1);
}

TEST(Cli, IdentityModelScoresEqualInputPsnr) {
  const fs::path dir = scratch_dir("cli_identity");
  ASSERT_EQ(run({"scene-gen", "--n", "3", "--size", "32", "--seed", "4", "--out", (dir / "data").string()}).code, 0);
  ASSERT_EQ(run({"init", "--out", (dir / "id.ckpt").string(), "--config",
                 tiny_config_file(dir, Variant::kDdmsSG).string()})
                .code,
            0);
  const Result ev = run({"eval", "--checkpoint", (dir / "id.ckpt").string(), "--manifest",
                         (dir / "data" / "manifest.json").string(), "--out", (dir / "eval").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const DatasetManifest m = load_manifest(dir / "data" / "manifest.json");
  double total = 0;
  for (const Sample& s : load_samples(m)) total += psnr(s.snowy, s.clean);
  const std::string expect = format_psnr(total / 3);
  const std::string row = table_row(ev.out, "all");
  ASSERT_FALSE(row.empty()) << ev.out;
  std::istringstream fields(row);
  std::string label, count, psnr_in, ssim_in, psnr_out;
  fields >> label >> count >> psnr_in >> ssim_in >> psnr_out;
  EXPECT_EQ(psnr_in, expect);
  EXPECT_EQ(psnr_out, expect);
  EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.txt"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "run_config.json"));
}

TEST(Cli, SnowFreeManifestReportsInf) {
  const fs::path dir = scratch_dir("cli_inf");
  ASSERT_EQ(run({"scene-gen", "--n", "1", "--size", "32", "--out", (dir / "data").string()}).code, 0);
  DatasetManifest m = load_manifest(dir / "data" / "manifest.json");
  m.entries[0].snowy_path = m.entries[0].clean_path;
  save_manifest(m, dir / "data" / "clean_manifest.json");
  ASSERT_EQ(run({"init", "--out", (dir / "id.ckpt").string(), "--config",
                 tiny_config_file(dir, Variant::kDdmsSG).string()})
                .code,
            0);
  const Result ev = run({"eval", "--checkpoint", (dir / "id.ckpt").string(), "--manifest",
                         (dir / "data" / "clean_manifest.json").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(table_row(ev.out, "all").find("inf"), std::string::npos) << ev.out;
}

TEST(Cli, TrainIsReproducibleFromItsSnapshot) {
  const fs::path dir = scratch_dir("cli_train");
  ASSERT_EQ(run({"scene-gen", "--n", "2", "--size", "32", "--out", (dir / "data").string()}).code, 0);
  const std::string manifest = (dir / "data" / "manifest.json").string();
  const Result a = run({"train", "--stage", "coarse", "--manifest", manifest, "--out", (dir / "a").string(),
                        "--config", tiny_config_file(dir, Variant::kDdmsSG).string(), "--steps", "3",
                        "--seed", "9", "--deterministic"});
  ASSERT_EQ(a.code, 0) << a.err;
  for (const char* f : {"model.ckpt", "train_log.csv", "resolved_config.txt", "run_config.json"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  const Result b = run({"train", "--stage", "coarse", "--manifest", manifest, "--out", (dir / "b").string(),
                        "--config", (dir / "a" / "resolved_config.txt").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  EXPECT_EQ(slurp(dir / "a" / "train_log.csv"), slurp(dir / "b" / "train_log.csv"));

  const Result fine = run({"train", "--stage", "fine", "--manifest", manifest, "--out", (dir / "f").string(),
                           "--config", tiny_config_file(dir, Variant::kDdmsSG).string(), "--steps", "2",
                           "--coarse", (dir / "a" / "model.ckpt").string()});
  ASSERT_EQ(fine.code, 0) << fine.err;
  EXPECT_TRUE(fs::exists(dir / "f" / "model.ckpt"));
}

TEST(Cli, InferKeepsShapeAndWarnsWithoutPriors) {
  const fs::path dir = scratch_dir("cli_infer");
  ASSERT_EQ(run({"init", "--out", (dir / "id.ckpt").string(), "--config",
                 tiny_config_file(dir, Variant::kDdmsSG).string()})
                .code,
            0);
  ImageTensor odd(20, 28, 0.25);
  for (int y = 0; y < 20; ++y) odd.at(y, y, 1) = 1.0;
  write_ppm(dir / "odd.ppm", odd);
  const Result r = run({"infer", "--checkpoint", (dir / "id.ckpt").string(), "--image",
                        (dir / "odd.ppm").string(), "--out", (dir / "out" / "odd.ppm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("uniform"), std::string::npos);
  const ImageTensor back = read_ppm(dir / "out" / "odd.ppm");
  EXPECT_EQ(back.height(), 20);
  EXPECT_EQ(back.width(), 28);
  EXPECT_EQ(back, read_ppm(dir / "odd.ppm"));  // identity model
  EXPECT_TRUE(fs::exists(dir / "out" / "odd.ppm.run.json"));

  write_label_pgm(dir / "odd.pgm", uniform_semantic(20, 28));
  const Result half = run({"infer", "--checkpoint", (dir / "id.ckpt").string(), "--image",
                           (dir / "odd.ppm").string(), "--semantic", (dir / "odd.pgm").string(), "--out",
                           (dir / "o2.ppm").string()});
  EXPECT_EQ(half.code, 2);
}

TEST(Cli, SnowifyExternalImages) {
  const fs::path dir = scratch_dir("cli_snowify");
  for (const char* d : {"clean", "sem", "depth"}) fs::create_directories(dir / d);
  for (int i = 0; i < 2; ++i) {
    SceneSpec spec;
    spec.seed = 50 + i;
    spec.height = 32;
    spec.width = 48;
    const Scene s = generate_scene(spec);
    const std::string stem = "img" + std::to_string(i);
    write_ppm(dir / "clean" / (stem + ".ppm"), quantize_8bit(s.clean));
    write_label_pgm(dir / "sem" / (stem + ".pgm"), s.semantic);
    write_pfm(dir / "depth" / (stem + ".pfm"), s.depth);
  }
  const Result r = run({"snowify", "--clean-dir", (dir / "clean").string(), "--semantic-dir",
                        (dir / "sem").string(), "--depth-dir", (dir / "depth").string(), "--out",
                        (dir / "out").string(), "--severity", "large", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const DatasetManifest m = load_manifest(dir / "out" / "manifest.json");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].severity, Severity::kLarge);
  const auto samples = load_samples(m);
  EXPECT_LT(psnr(samples[0].snowy, samples[0].clean), 40.0);

  fs::remove(dir / "depth" / "img1.pfm");
  EXPECT_EQ(run({"snowify", "--clean-dir", (dir / "clean").string(), "--semantic-dir",
                 (dir / "sem").string(), "--depth-dir", (dir / "depth").string(), "--out",
                 (dir / "out2").string()})
                .code,
            3);
}

}  // namespace
}  // namespace desnow
