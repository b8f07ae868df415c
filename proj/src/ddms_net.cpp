#include "desnow/ddms_net.hpp"

#include <algorithm>

#include "desnow/error.hpp"

namespace desnow {
namespace {

Var upsample_times(Var x, int times) {
  for (int i = 0; i < times; ++i) x = ag::upsample_nearest2x(x);
  return x;
}

Var downscale_times(Var x, int times) {
  for (int i = 0; i < times; ++i) x = ag::avg_pool2x(x);
  return x;
}

struct VariantName {
  Variant variant;
  const char* name;
};

constexpr VariantName kVariantNames[] = {
    {Variant::kSnowCnn, "snowcnn"}, {Variant::kMsNet, "msnet"},
    {Variant::kDdms, "ddms"},       {Variant::kDdmsPlus, "ddms_plus"},
    {Variant::kDdmsS, "ddms_s"},    {Variant::kDdmsG, "ddms_g"},
    {Variant::kDdmsSG, "ddms_sg"},
};

}  // namespace

std::string to_string(Variant v) {
  for (const auto& vn : kVariantNames)
    if (vn.variant == v) return vn.name;
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (const auto& vn : kVariantNames)
    if (name == vn.name) return vn.variant;
  throw InvalidArgument("unknown variant '" + name +
                        "' (expected snowcnn|msnet|ddms|ddms_plus|ddms_s|ddms_g|ddms_sg)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::kSnowCnn, Variant::kMsNet, Variant::kDdms,
                                         Variant::kDdmsPlus, Variant::kDdmsS, Variant::kDdmsG,
                                         Variant::kDdmsSG};
  return v;
}

bool uses_coarse_stage(Variant v) {
  return v == Variant::kDdmsPlus || v == Variant::kDdmsS || v == Variant::kDdmsG ||
         v == Variant::kDdmsSG;
}
bool uses_semantic_prior(Variant v) { return v == Variant::kDdmsS || v == Variant::kDdmsSG; }
bool uses_geometric_prior(Variant v) { return v == Variant::kDdmsG || v == Variant::kDdmsSG; }

void DdmsConfig::validate() const {
  require(n_scales >= 1, "n_scales must be >= 1");
  require(channels >= 4, "fine network needs at least 4 channels");
  require(feature_rows >= 1, "feature_rows must be >= 1");
  require(rdbs_per_row >= 2, "rdbs_per_row must be >= 2 (down and up columns)");
  require(growth >= 1, "growth must be >= 1");
  require(semantic_group_width >= 1 && geometric_group_width >= 1,
          "group widths must be >= 1");
  require(attention_hidden >= 1, "attention_hidden must be >= 1");
  require(snowcnn_blocks >= 1 && rrdb_depth >= 1, "SnowCNN body sizes must be >= 1");
}

int DdmsConfig::size_multiple() const {
  switch (variant) {
    case Variant::kSnowCnn: return 1;
    case Variant::kMsNet: return 1 << (n_scales - 1);
    default: return 1 << (n_scales - 1 + feature_rows - 1);
  }
}

// ---------------------------------------------------------------- FuseGate

FuseGate::FuseGate(const std::string& name, int channels, int hidden)
    : name_(name),
      channels_(channels),
      fc1_(name + ".fc1", 2 * channels, hidden, 1),
      fc2_(name + ".fc2", hidden, 2 * channels, 1) {}

void FuseGate::declare(ParamLayout& layout) const {
  layout.add(name_ + ".alpha", {1, 1, 1, channels_}, ParamInit::kHalf);
  layout.add(name_ + ".beta", {1, 1, 1, channels_}, ParamInit::kHalf);
  fc1_.declare(layout);
  fc2_.declare(layout);
}

std::pair<Var, Var> FuseGate::weights(ParamBinding& p, const Var& row, const Var& col) const {
  if (row.shape() != col.shape()) {
    throw InvalidArgument("fuse: row " + shape_string(row.shape()) + " and column " +
                          shape_string(col.shape()) + " features differ in shape");
  }
  Var pooled = ag::global_avg_pool(ag::concat_channels({row, col}));
  Var gates = ag::sigmoid(fc2_(p, ag::relu(fc1_(p, pooled))));
  Var a = ag::mul(ag::slice_channels(gates, 0, channels_), p(name_ + ".alpha"));
  Var b = ag::mul(ag::slice_channels(gates, channels_, channels_), p(name_ + ".beta"));
  return {a, b};
}

Var FuseGate::operator()(ParamBinding& p, const Var& row, const Var& col) const {
  auto [a, b] = weights(p, row, col);
  return fuse_with_weights(row, col, a, b);
}

Var fuse_with_weights(const Var& row, const Var& col, const Var& a, const Var& b) {
  if (row.shape() != col.shape()) {
    throw InvalidArgument("fuse: row " + shape_string(row.shape()) + " and column " +
                          shape_string(col.shape()) + " features differ in shape");
  }
  return ag::add(ag::mul(row, a), ag::mul(col, b));
}

// ---------------------------------------------------------- TransferModule

TransferModule::TransferModule(const std::string& name, int channels, int rows, int cols,
                               int growth)
    : rows_(rows), cols_(cols), down_cols_((cols + 1) / 2) {
  require(rows >= 1 && cols >= 2, "transfer module needs >= 1 row and >= 2 columns");
  const int hidden = std::max(4, channels / 4);
  cells_.resize(static_cast<std::size_t>(rows) * cols);
  for (int c = 0; c < cols; ++c) {
    const bool down_col = c < down_cols_;
    for (int r = 0; r < rows; ++r) {
      Cell& cell = cells_[r * cols + c];
      const std::string at = "_r" + std::to_string(r) + "_c" + std::to_string(c);
      cell.rdb = Rdb(name + ".rdb" + at, channels, growth);
      const bool has_row = c > 0;
      bool has_col = false;
      if (down_col && r > 0) {
        cell.down = Downsample(name + ".down" + at, channels, channels);
        cell.has_down = has_col = true;
      }
      if (!down_col && r < rows - 1) {
        cell.up = Upsample(name + ".up" + at, channels, channels);
        cell.has_up = has_col = true;
      }
      if (has_row && has_col) {
        cell.fuse = FuseGate(name + ".fuse" + at, channels, hidden);
        cell.has_fuse = true;
      }
    }
  }
}

void TransferModule::declare(ParamLayout& layout) const {
  for (int c = 0; c < cols_; ++c) {
    for (int r = 0; r < rows_; ++r) {
      const Cell& cl = cell(r, c);
      if (cl.has_down) cl.down.declare(layout);
      if (cl.has_up) cl.up.declare(layout);
      if (cl.has_fuse) cl.fuse.declare(layout);
      cl.rdb.declare(layout);
    }
  }
}

Var TransferModule::operator()(ParamBinding& p, const Var& x) const {
  std::vector<Var> grid(cells_.size());
  auto at = [&](int r, int c) -> Var& { return grid[r * cols_ + c]; };
  auto node = [&](int r, int c, const Var& col_in) {
    const Cell& cl = cell(r, c);
    Var in;
    if (c == 0 && r == 0) {
      in = x;
    } else if (c == 0) {
      in = col_in;
    } else if (!col_in) {
      in = at(r, c - 1);
    } else {
      in = cl.fuse(p, at(r, c - 1), col_in);
    }
    at(r, c) = cl.rdb(p, in);
  };
  for (int c = 0; c < cols_; ++c) {
    if (c < down_cols_) {
      for (int r = 0; r < rows_; ++r) {
        node(r, c, r > 0 ? cell(r, c).down(p, at(r - 1, c)) : Var());
      }
    } else {
      for (int r = rows_ - 1; r >= 0; --r) {
        node(r, c, r < rows_ - 1 ? cell(r, c).up(p, at(r + 1, c)) : Var());
      }
    }
  }
  return at(0, cols_ - 1);
}

// -------------------------------------------------------------------- Rrdb

Rrdb::Rrdb(const std::string& name, int channels, int growth, int depth) {
  for (int i = 0; i < depth; ++i) {
    blocks_.emplace_back(name + ".rdb" + std::to_string(i), channels, growth);
  }
}

void Rrdb::declare(ParamLayout& layout) const {
  for (const auto& b : blocks_) b.declare(layout);
}

Var Rrdb::operator()(ParamBinding& p, const Var& x) const {
  Var h = x;
  for (const auto& b : blocks_) h = b(p, h);
  return ag::add(x, ag::scale(h, Rdb::kResidualScale));
}

// ------------------------------------------------------------- FineNetwork

void FineNetwork::Body::declare(ParamLayout& layout) const {
  in.declare(layout);
  for (const auto& b : blocks) b.declare(layout);
  head.declare(layout);
}

Var FineNetwork::Body::operator()(ParamBinding& p, const Var& x) const {
  Var f = in(p, x);
  for (const auto& b : blocks) f = b(p, f);
  return head(p, f);
}

void FineNetwork::Subnet::declare(ParamLayout& layout) const {
  entry.declare(layout);
  entry_rdb.declare(layout);
  if (semantic) semantic_attention.declare(layout);
  if (has_dense_merge) dense_merge.declare(layout);
  transfer.declare(layout);
  if (geometric) geometric_attention.declare(layout);
  pre.declare(layout);
  for (const auto& r : rdbs) r.declare(layout);
  post.declare(layout);
  head.declare(layout);
}

FineNetwork::FineNetwork(DdmsConfig config, std::string prefix)
    : config_(config), prefix_(std::move(prefix)) {
  config_.validate();
  const int ch = config_.channels, g = config_.growth;
  const Variant v = config_.variant;
  if (v == Variant::kSnowCnn || v == Variant::kMsNet) {
    const std::string bp = prefix_ + ".body";
    body_.in = Conv(bp + ".in", v == Variant::kMsNet ? 6 : 3, ch);
    for (int i = 0; i < config_.snowcnn_blocks; ++i) {
      body_.blocks.emplace_back(bp + ".rrdb" + std::to_string(i), ch, g, config_.rrdb_depth);
    }
    body_.head = Conv(bp + ".head", ch, 3, 3, 1, ParamInit::kZero);
    return;
  }
  for (int s = 0; s < config_.n_scales; ++s) {
    Subnet sn;
    sn.prefix = prefix_ + ".s" + std::to_string(s);
    sn.entry = Conv(sn.prefix + ".entry", 3 * (s + 1), ch);
    sn.entry_rdb = Rdb(sn.prefix + ".entry_rdb", ch, g);
    sn.semantic = uses_semantic_prior(v);
    sn.geometric = uses_geometric_prior(v);
    if (sn.semantic) {
      sn.semantic_attention =
          PriorAttention(sn.prefix + ".sem", ch, kSemanticClasses, kSemanticClasses,
                         config_.semantic_group_width, config_.attention_hidden);
    }
    if (s > 0) {
      sn.dense_merge = Conv(sn.prefix + ".dense_merge", ch * (s + 1), ch, 1);
      sn.has_dense_merge = true;
    }
    sn.transfer = TransferModule(sn.prefix + ".transfer", ch, config_.feature_rows,
                                 config_.rdbs_per_row, g);
    if (sn.geometric) {
      sn.geometric_attention =
          PriorAttention(sn.prefix + ".geo", ch, kDepthBins, kDepthBins,
                         config_.geometric_group_width, config_.attention_hidden);
    }
    sn.pre = Conv(sn.prefix + ".pre", ch, ch);
    for (int i = 0; i < 3; ++i) {
      sn.rdbs.emplace_back(sn.prefix + ".rdb" + std::to_string(i), ch, g);
    }
    sn.post = Conv(sn.prefix + ".post", ch, ch);
    sn.head = Conv(sn.prefix + ".head", ch, 3, 3, 1, ParamInit::kZero);
    subnets_.push_back(std::move(sn));
  }
}

void FineNetwork::declare(ParamLayout& layout) const {
  if (subnets_.empty()) {
    body_.declare(layout);
    return;
  }
  for (const auto& sn : subnets_) sn.declare(layout);
}

int FineNetwork::n_outputs() const {
  return config_.variant == Variant::kSnowCnn ? 1 : config_.n_scales;
}

std::vector<std::string> FineNetwork::head_prefixes() const {
  if (subnets_.empty()) return {body_.head.name};
  std::vector<std::string> out;
  for (const auto& sn : subnets_) out.push_back(sn.head.name);
  return out;
}

std::vector<std::string> FineNetwork::scale_parameter_names(int scale) const {
  require(scale >= 0 && scale < n_outputs(), "scale index out of range");
  ParamLayout layout;
  if (subnets_.empty()) {
    body_.declare(layout);
  } else {
    subnets_[scale].declare(layout);
  }
  std::vector<std::string> names;
  for (const auto& s : layout.specs()) names.push_back(s.name);
  return names;
}

std::vector<Var> FineNetwork::forward(ParamBinding& p, const Var& image,
                                      const PriorPyramid* priors) const {
  const Tensor& v = image.value();
  require(v.rank() == 4 && v.c() == 3, "fine network expects (N, H, W, 3) input");
  const int m = config_.size_multiple();
  if (v.h() % m != 0 || v.w() % m != 0) {
    throw InvalidArgument("fine network (" + to_string(config_.variant) + ") input " +
                          std::to_string(v.h()) + "x" + std::to_string(v.w()) +
                          " must be divisible by " + std::to_string(m));
  }
  switch (config_.variant) {
    case Variant::kSnowCnn:
      return {ag::add(image, body_(p, image))};
    case Variant::kMsNet: {
      std::vector<Var> outputs;
      for (int s = 0; s < config_.n_scales; ++s) {
        Var y = downscale_times(image, config_.n_scales - 1 - s);
        Var guide = s == 0 ? y : ag::upsample_nearest2x(outputs.back());
        outputs.push_back(ag::add(y, body_(p, ag::concat_channels({y, guide}))));
      }
      return outputs;
    }
    default:
      return forward_ddms(p, image, priors);
  }
}

std::vector<Var> FineNetwork::forward_ddms(ParamBinding& p, const Var& image,
                                           const PriorPyramid* priors) const {
  const int scales = config_.n_scales;
  const bool needs_priors =
      uses_semantic_prior(config_.variant) || uses_geometric_prior(config_.variant);
  if (needs_priors) {
    require(priors != nullptr, "variant " + to_string(config_.variant) + " needs priors");
    require(static_cast<int>(priors->semantic.size()) == scales &&
                static_cast<int>(priors->geometric.size()) == scales,
            "prior pyramid has the wrong number of scales");
  }
  ag::Graph& graph = p.graph();
  std::vector<Var> outputs, features;
  for (int s = 0; s < scales; ++s) {
    const Subnet& sn = subnets_[s];
    Var y = downscale_times(image, scales - 1 - s);

    std::vector<Var> pixel_in{y};
    for (int j = 0; j < s; ++j) pixel_in.push_back(upsample_times(outputs[j], s - j));
    Var f = ag::relu(sn.entry(p, pixel_in.size() == 1 ? y : ag::concat_channels(pixel_in)));
    f = sn.entry_rdb(p, f);
    if (sn.semantic) f = sn.semantic_attention(p, f, graph.constant(priors->semantic[s]));

    if (sn.has_dense_merge) {
      std::vector<Var> feat_in{f};
      for (int j = 0; j < s; ++j) feat_in.push_back(upsample_times(features[j], s - j));
      f = sn.dense_merge(p, ag::concat_channels(feat_in));
    }
    f = sn.transfer(p, f);
    if (sn.geometric) f = sn.geometric_attention(p, f, graph.constant(priors->geometric[s]));

    f = ag::relu(sn.pre(p, f));
    for (const auto& r : sn.rdbs) f = r(p, f);
    f = ag::relu(sn.post(p, f));
    features.push_back(f);
    outputs.push_back(ag::add(y, sn.head(p, f)));
  }
  return outputs;
}

FineNetwork build_variant(Variant variant, DdmsConfig config) {
  config.variant = variant;
  return FineNetwork(config);
}

}  // namespace desnow
