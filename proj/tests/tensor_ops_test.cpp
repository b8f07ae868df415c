#include <gtest/gtest.h>

#include <cmath>

#include "desnow/error.hpp"
#include "desnow/ops.hpp"
#include "support/gradcheck.hpp"

namespace desnow {
namespace {

using testing::check_gradients;
using testing::random_tensor;
using testing::weighted_sum;

constexpr double kTol = 1e-4;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

// Direct loop convolution used as the reference for the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  const int k = w.dim(0), cin = w.dim(2), cout = w.dim(3), pad = k / 2;
  const int ho = (x.h() + 2 * pad - k) / stride + 1, wo = (x.w() + 2 * pad - k) / stride + 1;
  Tensor out({x.n(), ho, wo, cout});
  for (int n = 0; n < x.n(); ++n)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int o = 0; o < cout; ++o) {
          double acc = b.empty() ? 0.0 : b[o];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
              for (int i = 0; i < cin; ++i)
                acc += x.at(n, iy, ix, i) * w[((ky * k + kx) * cin + i) * cout + o];
            }
          out.at(n, oy, ox, o) = acc;
        }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Gradient check of a parameter-free op over its input leaves.
double op_error(const std::function<Var(const std::vector<Var>&)>& op,
                std::vector<Tensor> inputs, std::uint64_t seed) {
  auto f = [&](ParamBinding&, const std::vector<Var>& in) { return weighted_sum(op(in), seed); };
  return check_gradients(f, ParamStore{}, std::move(inputs), seed).max_rel_error;
}

TEST(Tensor, ShapeAndIndexing) {
  Tensor t = Tensor::nhwc(2, 3, 4, 5);
  EXPECT_EQ(t.size(), 120u);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[119], 7.0);
  EXPECT_THROW(Tensor({2, -1}), InvalidArgument);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), InvalidArgument);
}

TEST(Tensor, StackAndSliceBatch) {
  Tensor a = random_tensor({1, 4, 4, 3}, 1), b = random_tensor({1, 4, 4, 3}, 2);
  std::vector<Tensor> items{a, b};
  Tensor batch = stack_batch(items);
  EXPECT_EQ(batch.shape(), (Shape{2, 4, 4, 3}));
  EXPECT_EQ(batch_item(batch, 1), b);
}

TEST(Autograd, BackwardNeedsScalarAndRecording) {
  ag::Graph g(true);
  Var x = g.variable(random_tensor({1, 2, 2, 1}, 3));
  EXPECT_THROW(g.backward(x), InvalidArgument);
  ag::Graph frozen(false);
  Var y = ag::sum_all(frozen.variable(random_tensor({1, 2, 2, 1}, 3)));
  EXPECT_THROW(frozen.backward(y), InvalidState);
}

TEST(Autograd, RepeatedUseAccumulates) {
  ag::Graph g(true);
  Var x = g.variable(Tensor({1, 1, 1, 1}, 3.0));
  Var y = ag::sum_all(ag::mul(x, x));  // x^2
  g.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

class ConvOracle : public ::testing::TestWithParam<std::tuple<int, int>> {};

TEST_P(ConvOracle, MatchesDirectLoops) {
  const auto [k, stride] = GetParam();
  ag::Graph g(false);
  Tensor x = random_tensor({2, 8, 6, 5}, 11);
  Tensor w = random_tensor({k, k, 5, 7}, 12);
  Tensor b = random_tensor({7}, 13);
  Var y = ag::conv2d(g.constant(x), g.constant(w), g.constant(b), stride);
  EXPECT_LT(max_abs_diff(y.value(), naive_conv(x, w, b, stride)), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(KernelsAndStrides, ConvOracle,
                         ::testing::Values(std::make_tuple(3, 1), std::make_tuple(3, 2),
                                           std::make_tuple(1, 1), std::make_tuple(5, 1)));

TEST(Conv, LargeInputUsesSeveralTiles) {
  ag::Graph g(false);
  Tensor x = random_tensor({1, 40, 40, 24}, 5);
  Tensor w = random_tensor({3, 3, 24, 4}, 6);
  Var y = ag::conv2d(g.constant(x), g.constant(w), Var(), 1);
  EXPECT_LT(max_abs_diff(y.value(), naive_conv(x, w, Tensor(), 1)), 1e-11);
}

TEST(Conv, RejectsChannelMismatch) {
  ag::Graph g(false);
  EXPECT_THROW(ag::conv2d(g.constant(Tensor({1, 4, 4, 3})), g.constant(Tensor({3, 3, 4, 2})),
                          Var(), 1),
               InvalidArgument);
}

TEST(OpGradients, Conv) {
  for (auto seed : kSeeds) {
    for (int stride : {1, 2}) {
      EXPECT_LT(op_error([&](const auto& in) { return ag::conv2d(in[0], in[1], in[2], stride); },
                         {random_tensor({2, 6, 6, 3}, seed), random_tensor({3, 3, 3, 4}, seed + 10),
                          random_tensor({4}, seed + 20)},
                         seed),
                kTol);
    }
    EXPECT_LT(op_error([](const auto& in) { return ag::conv2d(in[0], in[1], in[2], 1); },
                       {random_tensor({1, 5, 5, 6}, seed), random_tensor({1, 1, 6, 2}, seed + 1),
                        random_tensor({2}, seed + 2)},
                       seed),
              kTol);
  }
}

TEST(OpGradients, GroupedConv) {
  for (auto seed : kSeeds) {
    EXPECT_LT(op_error([](const auto& in) { return ag::grouped_conv2d(in[0], in[1], in[2]); },
                       {random_tensor({1, 5, 5, 6}, seed), random_tensor({3, 3, 3, 2, 2}, seed + 1),
                        random_tensor({6}, seed + 2)},
                       seed),
              kTol);
  }
}

TEST(OpGradients, Elementwise) {
  for (auto seed : kSeeds) {
    const Tensor a = random_tensor({2, 3, 3, 4}, seed), b = random_tensor({2, 3, 3, 4}, seed + 5);
    EXPECT_LT(op_error([](const auto& in) { return ag::relu(in[0]); }, {a}, seed), kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::sigmoid(in[0]); }, {a}, seed), kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::sub(in[0], in[1]); }, {a, b}, seed), kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::mul(in[0], in[1]); }, {a, b}, seed), kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::mul(in[0], in[1]); },
                       {a, random_tensor({2, 1, 1, 4}, seed + 7)}, seed),
              kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::scale(in[0], -2.5); }, {a}, seed), kTol);
  }
}

TEST(OpGradients, ShapeOps) {
  for (auto seed : kSeeds) {
    const Tensor a = random_tensor({1, 4, 4, 3}, seed), b = random_tensor({1, 4, 4, 2}, seed + 1);
    EXPECT_LT(op_error([](const auto& in) { return ag::concat_channels({in[0], in[1], in[0]}); },
                       {a, b}, seed),
              kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::slice_channels(in[0], 1, 2); }, {a}, seed),
              kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::upsample_nearest2x(in[0]); }, {a}, seed),
              kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::avg_pool2x(in[0]); }, {a}, seed), kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::global_avg_pool(in[0]); }, {a}, seed),
              kTol);
  }
}

TEST(OpGradients, SoftmaxAndModulation) {
  for (auto seed : kSeeds) {
    EXPECT_LT(op_error([](const auto& in) { return ag::softmax_channels(in[0]); },
                       {random_tensor({1, 3, 3, 5}, seed, -3, 3)}, seed),
              kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::group_modulate(in[0], in[1]); },
                       {random_tensor({1, 3, 3, 6}, seed), random_tensor({1, 3, 3, 3}, seed + 1)},
                       seed),
              kTol);
    EXPECT_LT(op_error([](const auto& in) { return ag::mean_squared_error(in[0], in[1]); },
                       {random_tensor({1, 3, 3, 2}, seed), random_tensor({1, 3, 3, 2}, seed + 1)},
                       seed),
              kTol);
  }
}

TEST(Ops, ResamplingShapes) {
  ag::Graph g(false);
  Var x = g.constant(random_tensor({1, 8, 6, 2}, 1));
  EXPECT_EQ(ag::avg_pool2x(x).shape(), (Shape{1, 4, 3, 2}));
  EXPECT_EQ(ag::upsample_nearest2x(x).shape(), (Shape{1, 16, 12, 2}));
  EXPECT_THROW(ag::avg_pool2x(g.constant(Tensor({1, 5, 4, 1}))), InvalidArgument);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  ag::Graph g(false);
  Var s = ag::softmax_channels(g.constant(random_tensor({2, 4, 4, 7}, 9, -50, 50)));
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double sum = 0;
        for (int c = 0; c < 7; ++c) sum += s.value().at(n, y, x, c);
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
}

}  // namespace
}  // namespace desnow
