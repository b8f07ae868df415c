#pragma once

#include <string>
#include <vector>

#include "desnow/image.hpp"
#include "desnow/net_blocks.hpp"

namespace desnow {

struct CoarseNetConfig {
  int channels = 16;
  int n_core_blocks = 5;
  int n_rows = 3;
  int growth = 16;

  void validate() const;
};

// Coarse snow-removal network. Pre-processing (conv + RDB), a core of dense
// blocks laid out over n_rows scale rows (down the left side of a U, back up
// the right with upsample-and-add merges), and post-processing (dense block,
// conv + ReLU, zero-initialised 3-channel head) whose output is added to the
// input image.
class CoarseNet {
 public:
  explicit CoarseNet(CoarseNetConfig config = {}, std::string prefix = "coarse");

  void declare(ParamLayout& layout) const;
  // Unclamped residual output, (N, H, W, 3).
  Var forward(ParamBinding& p, const Var& snowy) const;
  // Clamped to [0, 1].
  ImageTensor infer(const ParamStore& store, const ImageTensor& snowy) const;

  const CoarseNetConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  std::string head_prefix() const { return prefix_ + ".head"; }
  // H and W must be multiples of this.
  int size_multiple() const { return 1 << (config_.n_rows - 1); }

 private:
  CoarseNetConfig config_;
  std::string prefix_;
  Conv pre_conv_;
  Rdb pre_rdb_;
  std::vector<DenseBlock> down_blocks_;  // one per row, top to bottom
  std::vector<Downsample> downs_;        // between row r-1 and r
  std::vector<Upsample> ups_;            // from row r+1 to r
  std::vector<DenseBlock> up_blocks_;    // rows n_rows-2 .. 0
  DenseBlock post_block_;
  Conv post_conv_;
  Conv head_;
};

}  // namespace desnow
