#include "desnow/attention.hpp"

#include <cmath>

#include "desnow/error.hpp"

namespace desnow {

AttentionLogits::AttentionLogits(const std::string& name, int feature_channels,
                                 int prior_channels, int hidden, int n_groups)
    : prior_channels_(prior_channels),
      c0_(name + ".c0", feature_channels + prior_channels, hidden, 3),
      c1_(name + ".c1", hidden, hidden, 3),
      out_(name + ".out", hidden, n_groups, 1) {}

void AttentionLogits::declare(ParamLayout& layout) const {
  c0_.declare(layout);
  c1_.declare(layout);
  out_.declare(layout);
}

Var AttentionLogits::operator()(ParamBinding& p, const Var& features,
                                const Var& prior) const {
  const Tensor& f = features.value();
  const Tensor& q = prior.value();
  if (f.rank() != 4 || q.rank() != 4 || f.n() != q.n() || f.h() != q.h() || f.w() != q.w()) {
    throw InvalidArgument("attention logits: features " + shape_string(f.shape()) +
                          " and prior " + shape_string(q.shape()) +
                          " differ spatially");
  }
  if (q.c() != prior_channels_) {
    throw InvalidArgument("attention logits: prior has " + std::to_string(q.c()) +
                          " channels, expected " + std::to_string(prior_channels_));
  }
  Var h = ag::relu(c0_(p, ag::concat_channels({features, prior})));
  h = ag::relu(c1_(p, h));
  return out_(p, h);
}

Var group_softmax(const Var& logits) {
  for (double v : logits.value().values()) {
    if (std::isnan(v)) throw InvalidArgument("group_softmax: NaN logit");
  }
  return ag::softmax_channels(logits);
}

GroupedAttention::GroupedAttention(const std::string& name, int groups, int group_width,
                                   int out_channels)
    : name_(name),
      groups_(groups),
      width_(group_width),
      merge_(name + ".merge", groups * group_width, out_channels, 1) {
  require(groups >= 1 && group_width >= 1, "grouped attention: invalid group sizes");
}

void GroupedAttention::declare(ParamLayout& layout) const {
  layout.add(name_ + ".gconv.w", {groups_, 3, 3, width_, width_}, ParamInit::kGaussian);
  layout.add(name_ + ".gconv.b", {groups_ * width_}, ParamInit::kZero);
  merge_.declare(layout);
}

Var GroupedAttention::operator()(ParamBinding& p, const Var& features,
                                 const Var& weights) const {
  const int c = features.value().c();
  if (c % groups_ != 0) {
    throw InvalidArgument("grouped attention: " + std::to_string(c) +
                          " feature channels not divisible by " + std::to_string(groups_) +
                          " groups");
  }
  if (c != groups_ * width_) {
    throw InvalidArgument("grouped attention: expected " + std::to_string(groups_ * width_) +
                          " feature channels, got " + std::to_string(c));
  }
  if (weights.value().c() != groups_) {
    throw InvalidArgument("grouped attention: weights carry " +
                          std::to_string(weights.value().c()) + " groups, expected " +
                          std::to_string(groups_));
  }
  Var modulated = ag::group_modulate(features, weights);
  Var grouped = ag::grouped_conv2d(modulated, p(name_ + ".gconv.w"), p(name_ + ".gconv.b"));
  return merge_(p, grouped);
}

PriorAttention::PriorAttention(const std::string& name, int channels, int prior_channels,
                               int groups, int group_width, int hidden)
    : project_(name + ".proj", channels, groups * group_width, 3),
      logits_(name + ".logits", groups * group_width, prior_channels, hidden, groups),
      grouped_(name + ".grouped", groups, group_width, channels) {}

void PriorAttention::declare(ParamLayout& layout) const {
  project_.declare(layout);
  logits_.declare(layout);
  grouped_.declare(layout);
}

Var PriorAttention::operator()(ParamBinding& p, const Var& x, const Var& prior) const {
  Var f = ag::relu(project_(p, x));
  Var w = group_softmax(logits_(p, f, prior));
  return ag::add(x, grouped_(p, f, w));
}

}  // namespace desnow
