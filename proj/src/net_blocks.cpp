#include "desnow/net_blocks.hpp"

#include "desnow/error.hpp"

namespace desnow {

ParamBinding::ParamBinding(ag::Graph& graph, const ParamStore& store,
                           Predicate trainable)
    : graph_(graph), store_(store), predicate_(std::move(trainable)) {}

Var ParamBinding::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  const Tensor& value = store_.get(name);
  const bool train = !predicate_ || predicate_(name);
  Var v = train ? graph_.variable(value) : graph_.constant(value);
  bound_.emplace(name, v);
  if (train && v.requires_grad()) trainable_.emplace_back(name, v);
  return v;
}

Conv::Conv(std::string name_, int in_, int out_, int kernel_, int stride_,
           ParamInit weight_init_)
    : name(std::move(name_)),
      in(in_),
      out(out_),
      kernel(kernel_),
      stride(stride_),
      weight_init(weight_init_) {
  require(in >= 1 && out >= 1, "conv '" + name + "': channels must be >= 1");
}

void Conv::declare(ParamLayout& layout) const {
  layout.add(name + ".w", {kernel, kernel, in, out}, weight_init);
  layout.add(name + ".b", {out}, ParamInit::kZero);
}

Var Conv::operator()(ParamBinding& p, const Var& x) const {
  if (x.value().c() != in) {
    throw InvalidArgument("conv '" + name + "' expects " + std::to_string(in) +
                          " channels, got " + std::to_string(x.value().c()));
  }
  return ag::conv2d(x, p(name + ".w"), p(name + ".b"), stride);
}

DenseBlock::DenseBlock(const std::string& name, int channels, int growth,
                       int n_layers)
    : channels_(channels) {
  require(channels >= 1 && growth >= 1 && n_layers >= 1,
          "dense block '" + name + "': invalid sizes");
  for (int i = 0; i < n_layers; ++i) {
    layers_.emplace_back(name + ".l" + std::to_string(i), channels + i * growth,
                         growth, 3);
  }
  projection_ = Conv(name + ".proj", channels + n_layers * growth, channels, 1);
}

void DenseBlock::declare(ParamLayout& layout) const {
  for (const auto& l : layers_) l.declare(layout);
  projection_.declare(layout);
}

Var DenseBlock::operator()(ParamBinding& p, const Var& x) const {
  if (x.value().c() != channels_) {
    throw InvalidArgument("dense block expects " + std::to_string(channels_) +
                          " channels, got " + std::to_string(x.value().c()));
  }
  std::vector<Var> features{x};
  for (const auto& layer : layers_) {
    Var in = features.size() == 1 ? x : ag::concat_channels(features);
    features.push_back(ag::relu(layer(p, in)));
  }
  return projection_(p, ag::concat_channels(features));
}

Var Rdb::operator()(ParamBinding& p, const Var& x) const {
  return ag::add(x, ag::scale(dense_(p, x), kResidualScale));
}

Downsample::Downsample(const std::string& name, int in, int out)
    : first_(name + ".c0", in, out, 3, 2), second_(name + ".c1", out, out, 3) {}

void Downsample::declare(ParamLayout& layout) const {
  first_.declare(layout);
  second_.declare(layout);
}

Var Downsample::operator()(ParamBinding& p, const Var& x) const {
  const Tensor& v = x.value();
  if (v.h() % 2 != 0 || v.w() % 2 != 0) {
    throw InvalidArgument("downsample needs even spatial dims, got " +
                          std::to_string(v.h()) + "x" + std::to_string(v.w()));
  }
  return second_(p, ag::relu(first_(p, x)));
}

Upsample::Upsample(const std::string& name, int in, int out)
    : first_(name + ".c0", in, out, 3), second_(name + ".c1", out, out, 3) {}

void Upsample::declare(ParamLayout& layout) const {
  first_.declare(layout);
  second_.declare(layout);
}

Var Upsample::operator()(ParamBinding& p, const Var& x) const {
  return second_(p, ag::relu(first_(p, ag::upsample_nearest2x(x))));
}

void zero_params(ParamStore& store, const std::string& prefix) {
  for (auto& [name, t] : store.entries_mut()) {
    if (name.rfind(prefix, 0) == 0) t.fill(0.0);
  }
}

}  // namespace desnow
