#pragma once

#include <vector>

#include "desnow/autograd.hpp"

// Differentiable tensor operations on NHWC feature maps.
namespace desnow::ag {

// Convolution with "same" padding (k / 2). Weight shape (k, k, Cin, Cout),
// bias shape (Cout) or an empty Var for no bias. Stride 2 halves even dims.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride = 1);

// Group convolution, stride 1, same padding. Input channels are G * cin,
// weight shape (G, k, k, cin, cout), bias shape (G * cout) or empty.
Var grouped_conv2d(const Var& x, const Var& weight, const Var& bias);

Var relu(const Var& x);
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// Elementwise product of rank-4 `a` with `b`, where every dim of b is either
// 1 or equal to the matching dim of a.
Var mul(const Var& a, const Var& b);

Var reshape(const Var& x, Shape shape);
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int begin, int count);

Var upsample_nearest2x(const Var& x);
Var avg_pool2x(const Var& x);
Var global_avg_pool(const Var& x);  // (N, H, W, C) -> (N, 1, 1, C)

// Per-pixel softmax over the channel axis.
Var softmax_channels(const Var& x);

// features (N, H, W, G * k) scaled group-wise by weights (N, H, W, G).
Var group_modulate(const Var& features, const Var& weights);

Var sum_all(const Var& x);
Var mean_squared_error(const Var& a, const Var& b);

}  // namespace desnow::ag
