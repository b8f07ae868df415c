#pragma once

#include <string>

#include "desnow/net_blocks.hpp"

namespace desnow {

// Logit network: concat(features, prior) -> 3x3 conv + ReLU -> 3x3 conv +
// ReLU -> 1x1 conv to n_groups channels.
class AttentionLogits {
 public:
  AttentionLogits() = default;
  AttentionLogits(const std::string& name, int feature_channels, int prior_channels,
                  int hidden, int n_groups);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& features, const Var& prior) const;

 private:
  int prior_channels_ = 0;
  Conv c0_, c1_, out_;
};

// Per-pixel softmax over the group axis. Throws InvalidArgument on NaN.
Var group_softmax(const Var& logits);

// Scales each group's k channels by its attention weight, runs a separate
// 3x3 conv per group, and merges the concatenated groups with a 1x1 conv.
class GroupedAttention {
 public:
  GroupedAttention() = default;
  GroupedAttention(const std::string& name, int groups, int group_width, int out_channels);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& features, const Var& weights) const;

  int groups() const { return groups_; }
  int group_width() const { return width_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  int groups_ = 0;
  int width_ = 0;
  Conv merge_;
};

// Map-guided attention block: projects features to groups * width channels,
// derives group weights from the projection and an encoded prior, applies
// grouped attention and adds the merged result back onto the input.
class PriorAttention {
 public:
  PriorAttention() = default;
  PriorAttention(const std::string& name, int channels, int prior_channels, int groups,
                 int group_width, int hidden);

  void declare(ParamLayout& layout) const;
  Var operator()(ParamBinding& p, const Var& x, const Var& prior) const;

 private:
  Conv project_;
  AttentionLogits logits_;
  GroupedAttention grouped_;
};

}  // namespace desnow
