#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "desnow/training.hpp"

namespace desnow::cli {

enum ExitCode {
  kOk = 0,
  kInvalidArgument = 2,
  kIoError = 3,
  kInvalidState = 4,
};

// Parses argv (argv[0] is the program name), runs one command and maps
// library errors onto exit codes with a one-line diagnostic on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

namespace fs = std::filesystem;

DatasetManifest scene_gen(int n, const fs::path& out_dir, std::uint64_t seed,
                          Severity severity, int size);

// Composites snow onto every *.ppm under clean_dir. Matching <stem>.pgm and
// <stem>.pfm prior maps must exist in semantic_dir and depth_dir.
DatasetManifest snowify(const fs::path& clean_dir, Severity severity, const fs::path& out_dir,
                        std::uint64_t seed, const fs::path& semantic_dir,
                        const fs::path& depth_dir);

// Trains one stage and writes model.ckpt, train_log.csv and the resolved
// config under out_dir.
ParamStore train(const TrainConfig& cfg, const fs::path& manifest, const fs::path& out_dir,
                 const fs::path& coarse_checkpoint = {});

// Restores one image. Missing prior paths fall back to uniform priors and a
// warning on `warn`.
ImageTensor infer(const fs::path& checkpoint, const fs::path& image, const fs::path& semantic,
                  const fs::path& depth, const fs::path& out, std::ostream& warn);

EvalReport eval(const fs::path& checkpoint, const fs::path& manifest,
                const fs::path& out_dir = {});

// Freshly initialised checkpoint (zero residual heads: an identity model).
ParamStore init_model(const TrainConfig& cfg, const fs::path& out);

// Writes `text` to path, creating parent directories.
void write_text(const fs::path& path, const std::string& text);

}  // namespace desnow::cli
