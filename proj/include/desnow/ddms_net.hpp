#pragma once

#include <string>
#include <utility>
#include <vector>

#include "desnow/attention.hpp"
#include "desnow/net_blocks.hpp"
#include "desnow/priors.hpp"

namespace desnow {

// Ablation ladder, weakest to strongest.
enum class Variant { kSnowCnn, kMsNet, kDdms, kDdmsPlus, kDdmsS, kDdmsG, kDdmsSG };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
const std::vector<Variant>& all_variants();

bool uses_coarse_stage(Variant v);
bool uses_semantic_prior(Variant v);
bool uses_geometric_prior(Variant v);

struct DdmsConfig {
  int n_scales = 3;
  int channels = 32;
  int rdbs_per_row = 5;
  int feature_rows = 3;
  int growth = 16;
  int semantic_group_width = 1;
  int geometric_group_width = 4;
  int attention_hidden = 32;
  int snowcnn_blocks = 7;  // RRDBs in the SnowCNN / MSNet body
  int rrdb_depth = 3;      // RDBs per RRDB
  Variant variant = Variant::kDdmsSG;

  void validate() const;
  // Input H and W must be multiples of this.
  int size_multiple() const;
};

// Channel-attention fusion of a row feature F_r and a column feature F_c:
// per-channel gates from the pooled concat(F_r, F_c) (two 1x1 layers, sigmoid)
// scale learnable base weights alpha_r, beta_c (initialised to 0.5).
class FuseGate {
 public:
  FuseGate() = default;
  FuseGate(const std::string& name, int channels, int hidden);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& row, const Var& col) const;
  // Effective per-channel weights (a, b), each (N, 1, 1, C).
  std::pair<Var, Var> weights(ParamBinding& p, const Var& row, const Var& col) const;

 private:
  std::string name_;
  int channels_ = 0;
  Conv fc1_, fc2_;
};

// a * row + b * col with channel-wise a, b.
Var fuse_with_weights(const Var& row, const Var& col, const Var& a, const Var& b);

// Grid of RDBs: `rows` feature scales by `cols` columns. The first
// ceil(cols / 2) columns pass features down through Downsample modules, the
// rest pass them back up through Upsample modules; wherever a node receives
// both a row and a column input they are combined by a FuseGate.
class TransferModule {
 public:
  TransferModule() = default;
  TransferModule(const std::string& name, int channels, int rows, int cols, int growth);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& x) const;

 private:
  struct Cell {
    Rdb rdb;
    Downsample down;
    Upsample up;
    FuseGate fuse;
    bool has_down = false, has_up = false, has_fuse = false;
  };
  int rows_ = 0, cols_ = 0, down_cols_ = 0;
  std::vector<Cell> cells_;  // row-major rows x cols
  const Cell& cell(int r, int c) const { return cells_[r * cols_ + c]; }
};

// x + 0.2 * (RDB o ... o RDB)(x)
class Rrdb {
 public:
  Rrdb() = default;
  Rrdb(const std::string& name, int channels, int growth, int depth);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& x) const;

 private:
  std::vector<Rdb> blocks_;
};

// The fine network for one variant. Outputs are ordered coarsest scale first;
// single-scale variants return one output.
class FineNetwork {
 public:
  explicit FineNetwork(DdmsConfig config, std::string prefix = "fine");

  void declare(ParamLayout& layout) const;
  // `image` is the coarse result (or the snowy image for variants without a
  // coarse stage), (N, H, W, 3). `priors` is required by prior-guided variants.
  std::vector<Var> forward(ParamBinding& p, const Var& image,
                           const PriorPyramid* priors) const;

  const DdmsConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }
  int n_outputs() const;
  // Residual heads; zeroing them turns every output into its resized input.
  std::vector<std::string> head_prefixes() const;
  // Parameter names read by the sub-network at scale s.
  std::vector<std::string> scale_parameter_names(int scale) const;

 private:
  struct Body {  // SnowCNN body: conv, RRDBs, zero-init 3-channel head
    Conv in;
    std::vector<Rrdb> blocks;
    Conv head;
    void declare(ParamLayout& layout) const;
    Var operator()(ParamBinding& p, const Var& x) const;
  };
  struct Subnet {
    std::string prefix;
    Conv entry;
    Rdb entry_rdb;
    bool semantic = false, geometric = false;
    PriorAttention semantic_attention;
    Conv dense_merge;  // only for scales > 0
    bool has_dense_merge = false;
    TransferModule transfer;
    PriorAttention geometric_attention;
    Conv pre;
    std::vector<Rdb> rdbs;
    Conv post;
    Conv head;
    void declare(ParamLayout& layout) const;
  };

  std::vector<Var> forward_ddms(ParamBinding& p, const Var& image,
                                const PriorPyramid* priors) const;

  DdmsConfig config_;
  std::string prefix_;
  Body body_;                    // snowcnn, msnet (shared across scales)
  std::vector<Subnet> subnets_;  // ddms family, coarsest first
};

FineNetwork build_variant(Variant variant, DdmsConfig config = {});

}  // namespace desnow
