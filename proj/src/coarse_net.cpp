#include "desnow/coarse_net.hpp"

#include "desnow/error.hpp"

namespace desnow {

void CoarseNetConfig::validate() const {
  require(channels >= 8, "coarse net needs at least 8 channels");
  require(n_rows >= 1, "coarse net needs at least one row");
  require(n_core_blocks == 2 * n_rows - 1,
          "coarse core wiring needs n_core_blocks == 2 * n_rows - 1");
  require(growth >= 1, "coarse growth must be >= 1");
}

CoarseNet::CoarseNet(CoarseNetConfig config, std::string prefix)
    : config_(config), prefix_(std::move(prefix)) {
  config_.validate();
  const int c = config_.channels, g = config_.growth;
  const std::string& p = prefix_;
  pre_conv_ = Conv(p + ".pre.conv", 3, c);
  pre_rdb_ = Rdb(p + ".pre.rdb", c, g);
  for (int r = 0; r < config_.n_rows; ++r) {
    if (r > 0) downs_.emplace_back(p + ".core.down" + std::to_string(r), c, c);
    down_blocks_.emplace_back(p + ".core.db" + std::to_string(r), c, g);
  }
  for (int r = config_.n_rows - 2; r >= 0; --r) {
    ups_.emplace_back(p + ".core.up" + std::to_string(r), c, c);
    up_blocks_.emplace_back(p + ".core.ub" + std::to_string(r), c, g);
  }
  post_block_ = DenseBlock(p + ".post.db", c, g);
  post_conv_ = Conv(p + ".post.conv", c, c);
  head_ = Conv(head_prefix(), c, 3, 3, 1, ParamInit::kZero);
}

void CoarseNet::declare(ParamLayout& layout) const {
  pre_conv_.declare(layout);
  pre_rdb_.declare(layout);
  for (std::size_t r = 0; r < down_blocks_.size(); ++r) {
    if (r > 0) downs_[r - 1].declare(layout);
    down_blocks_[r].declare(layout);
  }
  for (std::size_t i = 0; i < ups_.size(); ++i) {
    ups_[i].declare(layout);
    up_blocks_[i].declare(layout);
  }
  post_block_.declare(layout);
  post_conv_.declare(layout);
  head_.declare(layout);
}

Var CoarseNet::forward(ParamBinding& p, const Var& snowy) const {
  const Tensor& v = snowy.value();
  require(v.rank() == 4 && v.c() == 3, "coarse net expects (N, H, W, 3) input");
  const int m = size_multiple();
  if (v.h() % m != 0 || v.w() % m != 0) {
    throw InvalidArgument("coarse net input " + std::to_string(v.h()) + "x" +
                          std::to_string(v.w()) + " must be divisible by " +
                          std::to_string(m));
  }
  Var x = pre_rdb_(p, ag::relu(pre_conv_(p, snowy)));
  std::vector<Var> rows;
  for (std::size_t r = 0; r < down_blocks_.size(); ++r) {
    Var in = r == 0 ? x : downs_[r - 1](p, rows.back());
    rows.push_back(down_blocks_[r](p, in));
  }
  Var cur = rows.back();
  for (std::size_t i = 0; i < ups_.size(); ++i) {
    const std::size_t r = rows.size() - 2 - i;
    cur = up_blocks_[i](p, ag::add(rows[r], ups_[i](p, cur)));
  }
  Var f = ag::relu(post_block_(p, cur));
  f = ag::relu(post_conv_(p, f));
  return ag::add(snowy, head_(p, f));
}

ImageTensor CoarseNet::infer(const ParamStore& store, const ImageTensor& snowy) const {
  ag::Graph graph(false);
  ParamBinding p(graph, store);
  Var out = forward(p, graph.constant(snowy.pixels));
  return clamp01(ImageTensor(out.value()));
}

}  // namespace desnow
