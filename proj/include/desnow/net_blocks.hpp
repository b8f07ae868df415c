#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "desnow/autograd.hpp"
#include "desnow/ops.hpp"
#include "desnow/param_store.hpp"

namespace desnow {

using ag::Var;

// Resolves parameter names to graph leaves for one forward pass. Each name is
// bound once per graph so gradients from repeated uses accumulate. Names
// rejected by `trainable` enter the graph as constants (frozen).
class ParamBinding {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  ParamBinding(ag::Graph& graph, const ParamStore& store,
               Predicate trainable = nullptr);

  Var operator()(const std::string& name);
  ag::Graph& graph() { return graph_; }
  const ParamStore& store() const { return store_; }

  // Every trainable parameter bound so far, in first-use order.
  const std::vector<std::pair<std::string, Var>>& trainable() const {
    return trainable_;
  }

 private:
  ag::Graph& graph_;
  const ParamStore& store_;
  Predicate predicate_;
  std::unordered_map<std::string, Var> bound_;
  std::vector<std::pair<std::string, Var>> trainable_;
};

enum class BlockKind { kConv, kDenseBlock, kRdb, kDownsample, kUpsample };

struct BlockSpec {
  BlockKind kind;
  int in_channels;
  int out_channels;
  int n_layers;
};

struct Conv {
  Conv() = default;
  Conv(std::string name, int in, int out, int kernel = 3, int stride = 1,
       ParamInit weight_init = ParamInit::kGaussian);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& x) const;
  BlockSpec spec() const { return {BlockKind::kConv, in, out, 1}; }

  std::string name;
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  ParamInit weight_init = ParamInit::kGaussian;
};

// n_layers 3x3 conv + ReLU layers, each fed the concatenation of the block
// input and all earlier layer outputs, then a 1x1 projection back to
// `channels`.
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(const std::string& name, int channels, int growth, int n_layers = 4);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& x) const;
  int channels() const { return channels_; }
  BlockSpec spec() const {
    return {BlockKind::kDenseBlock, channels_, channels_,
            static_cast<int>(layers_.size())};
  }

 private:
  int channels_ = 0;
  std::vector<Conv> layers_;
  Conv projection_;
};

// x + kResidualScale * dense(x)
class Rdb {
 public:
  static constexpr double kResidualScale = 0.2;

  Rdb() = default;
  Rdb(const std::string& name, int channels, int growth, int n_layers = 4)
      : dense_(name, channels, growth, n_layers) {}

  void declare(ParamLayout& layout) const { dense_.declare(layout); }
  Var operator()(ParamBinding& p, const Var& x) const;
  BlockSpec spec() const {
    auto s = dense_.spec();
    s.kind = BlockKind::kRdb;
    return s;
  }

 private:
  DenseBlock dense_;
};

// Stride-2 conv + ReLU, then a 3x3 conv. Halves H and W.
class Downsample {
 public:
  Downsample() = default;
  Downsample(const std::string& name, int in, int out);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& x) const;
  BlockSpec spec() const { return {BlockKind::kDownsample, first_.in, second_.out, 2}; }

 private:
  Conv first_, second_;
};

// Nearest-neighbour 2x resize, then conv + ReLU and a 3x3 conv.
class Upsample {
 public:
  Upsample() = default;
  Upsample(const std::string& name, int in, int out);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& x) const;
  BlockSpec spec() const { return {BlockKind::kUpsample, first_.in, second_.out, 2}; }

 private:
  Conv first_, second_;
};

// Sets every parameter whose name starts with `prefix` to zero.
void zero_params(ParamStore& store, const std::string& prefix);

}  // namespace desnow
