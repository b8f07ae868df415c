#include "desnow/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "desnow/error.hpp"

namespace desnow::ag {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank4(const Var& v, const char* op) {
  require(v && v.value().rank() == 4,
          std::string(op) + ": expected an NHWC tensor, got " +
              (v ? shape_string(v.shape()) : std::string("null")));
}

struct ConvGeometry {
  int h, w, cin, k, stride, pad, ho, wo, cout;
  int patch() const { return k * k * cin; }
  int out_pixels() const { return ho * wo; }
};

// Writes the patches of output pixels [first, first + count) as rows of `col`.
void im2col(const double* x, const ConvGeometry& g, int first, int count, double* col) {
  const int kkc = g.patch();
  const std::size_t run = static_cast<std::size_t>(g.cin) * sizeof(double);
  for (int r = 0; r < count; ++r) {
    const int oy = (first + r) / g.wo, ox = (first + r) % g.wo;
    double* row = col + static_cast<std::size_t>(r) * kkc;
    for (int ky = 0; ky < g.k; ++ky) {
      const int iy = oy * g.stride + ky - g.pad;
      for (int kx = 0; kx < g.k; ++kx) {
        const int ix = ox * g.stride + kx - g.pad;
        double* dst = row + (ky * g.k + kx) * g.cin;
        if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
          std::memset(dst, 0, run);
        } else {
          std::memcpy(dst, x + static_cast<std::size_t>(iy * g.w + ix) * g.cin, run);
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, int first, int count, double* dx) {
  const int kkc = g.patch();
  for (int r = 0; r < count; ++r) {
    const int oy = (first + r) / g.wo, ox = (first + r) % g.wo;
    const double* row = col + static_cast<std::size_t>(r) * kkc;
    for (int ky = 0; ky < g.k; ++ky) {
      const int iy = oy * g.stride + ky - g.pad;
      if (iy < 0 || iy >= g.h) continue;
      for (int kx = 0; kx < g.k; ++kx) {
        const int ix = ox * g.stride + kx - g.pad;
        if (ix < 0 || ix >= g.w) continue;
        const double* src = row + (ky * g.k + kx) * g.cin;
        double* dst = dx + static_cast<std::size_t>(iy * g.w + ix) * g.cin;
        for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
      }
    }
  }
}

// Output pixels per im2col tile; keeps the patch buffer around 256 KiB.
int tile_rows(const ConvGeometry& g) {
  return std::clamp(32768 / g.patch(), 16, g.out_pixels());
}

Buffer& scratch(int slot, std::size_t size) {
  thread_local Buffer buffers[2];
  auto& b = buffers[slot];
  if (b.size() < size) b.resize(size);
  return b;
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride) {
  require_rank4(x, "conv2d");
  const Tensor& wt = weight.value();
  require(wt.rank() == 4 && wt.dim(0) == wt.dim(1) && wt.dim(0) % 2 == 1,
          "conv2d: weight must be (k, k, Cin, Cout) with odd k, got " +
              shape_string(wt.shape()));
  require(wt.dim(2) == x.value().c(),
          "conv2d: weight expects " + std::to_string(wt.dim(2)) +
              " input channels, input has " + std::to_string(x.value().c()));
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  const Tensor& xv = x.value();
  ConvGeometry g{};
  g.h = xv.h();
  g.w = xv.w();
  g.cin = xv.c();
  g.k = wt.dim(0);
  g.stride = stride;
  g.pad = g.k / 2;
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
  g.cout = wt.dim(3);
  if (bias) {
    require(bias.value().size() == static_cast<std::size_t>(g.cout),
            "conv2d: bias length must equal Cout");
  }
  const int n = xv.n();
  const bool pointwise = g.k == 1 && stride == 1;
  const std::size_t in_stride = static_cast<std::size_t>(g.h) * g.w * g.cin;
  const std::size_t out_stride =
      static_cast<std::size_t>(g.out_pixels()) * g.cout;

  Tensor out({n, g.ho, g.wo, g.cout});
  ConstMapMat wmat(wt.data(), g.patch(), g.cout);
  for (int i = 0; i < n; ++i) {
    const double* xi = xv.data() + in_stride * i;
    MapMat y(out.data() + out_stride * i, g.out_pixels(), g.cout);
    if (pointwise) {
      y.noalias() = ConstMapMat(xi, g.out_pixels(), g.cin) * wmat;
    } else {
      const int tile = tile_rows(g);
      auto& col = scratch(0, static_cast<std::size_t>(tile) * g.patch());
      for (int first = 0; first < g.out_pixels(); first += tile) {
        const int count = std::min(tile, g.out_pixels() - first);
        im2col(xi, g, first, count, col.data());
        y.middleRows(first, count).noalias() =
            ConstMapMat(col.data(), count, g.patch()) * wmat;
      }
    }
    if (bias) {
      Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data(), g.cout);
      y.rowwise() += b;
    }
  }

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias ? bias.node() : nullptr;
  return x.graph()->make(
      std::move(out), {&x, &weight, &bias},
      [xn, wn, bn, g, n, pointwise, in_stride, out_stride](Node& self) {
        const Tensor& gy = self.grad;
        ConstMapMat wmat(wn->value.data(), g.patch(), g.cout);
        for (int i = 0; i < n; ++i) {
          ConstMapMat dy(gy.data() + out_stride * i, g.out_pixels(), g.cout);
          const double* xi = xn->value.data() + in_stride * i;
          if (bn && bn->requires_grad) {
            double* db = bn->grad_buffer().data();
            for (int r = 0; r < g.out_pixels(); ++r)
              for (int c = 0; c < g.cout; ++c) db[c] += dy(r, c);
          }
          double* dxi =
              xn->requires_grad ? xn->grad_buffer().data() + in_stride * i : nullptr;
          if (pointwise) {
            if (wn->requires_grad) {
              MapMat dw(wn->grad_buffer().data(), g.patch(), g.cout);
              dw.noalias() += ConstMapMat(xi, g.out_pixels(), g.cin).transpose() * dy;
            }
            if (dxi) {
              MapMat dx(dxi, g.out_pixels(), g.cin);
              dx.noalias() += dy * wmat.transpose();
            }
            continue;
          }
          const int tile = tile_rows(g);
          auto& col = scratch(0, static_cast<std::size_t>(tile) * g.patch());
          for (int first = 0; first < g.out_pixels(); first += tile) {
            const int count = std::min(tile, g.out_pixels() - first);
            if (wn->requires_grad) {
              MapMat dw(wn->grad_buffer().data(), g.patch(), g.cout);
              im2col(xi, g, first, count, col.data());
              dw.noalias() +=
                  ConstMapMat(col.data(), count, g.patch()).transpose() *
                  dy.middleRows(first, count);
            }
            if (dxi) {
              MapMat dc(col.data(), count, g.patch());
              dc.noalias() = dy.middleRows(first, count) * wmat.transpose();
              col2im_add(col.data(), g, first, count, dxi);
            }
          }
        }
      });
}

Var grouped_conv2d(const Var& x, const Var& weight, const Var& bias) {
  require_rank4(x, "grouped_conv2d");
  const Tensor& wt = weight.value();
  require(wt.rank() == 5 && wt.dim(1) == wt.dim(2) && wt.dim(1) % 2 == 1,
          "grouped_conv2d: weight must be (G, k, k, cin, cout), got " +
              shape_string(wt.shape()));
  const int groups = wt.dim(0);
  const int k = wt.dim(1);
  const int cin = wt.dim(3);
  const int cout = wt.dim(4);
  const Tensor& xv = x.value();
  require(xv.c() == groups * cin,
          "grouped_conv2d: input channels " + std::to_string(xv.c()) +
              " != groups * cin = " + std::to_string(groups * cin));
  if (bias) {
    require(bias.value().size() == static_cast<std::size_t>(groups * cout),
            "grouped_conv2d: bias length must be G * cout");
  }
  const int n = xv.n(), h = xv.h(), w = xv.w(), pad = k / 2;
  Tensor out({n, h, w, groups * cout});
  const double* wd = wt.data();
  auto widx = [=](int gi, int ky, int kx, int i, int o) {
    return (((static_cast<std::size_t>(gi) * k + ky) * k + kx) * cin + i) * cout + o;
  };
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        double* o_px = &out.at(b, y, xx, 0);
        if (bias) {
          for (int c = 0; c < groups * cout; ++c) o_px[c] = bias.value()[c];
        }
        for (int ky = 0; ky < k; ++ky) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = xx + kx - pad;
            if (ix < 0 || ix >= w) continue;
            const double* i_px = xv.data() + xv.offset(b, iy, ix, 0);
            for (int gi = 0; gi < groups; ++gi) {
              for (int i = 0; i < cin; ++i) {
                const double v = i_px[gi * cin + i];
                const double* wrow = wd + widx(gi, ky, kx, i, 0);
                double* orow = o_px + gi * cout;
                for (int o = 0; o < cout; ++o) orow[o] += v * wrow[o];
              }
            }
          }
        }
      }
    }
  }
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias ? bias.node() : nullptr;
  return x.graph()->make(
      std::move(out), {&x, &weight, &bias},
      [=](Node& self) {
        const Tensor& gy = self.grad;
        const Tensor& xv = xn->value;
        const double* wd = wn->value.data();
        double* dw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
        double* dx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
        double* db = (bn && bn->requires_grad) ? bn->grad_buffer().data() : nullptr;
        for (int b = 0; b < n; ++b) {
          for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
              const double* g_px = gy.data() + gy.offset(b, y, xx, 0);
              if (db) {
                for (int c = 0; c < groups * cout; ++c) db[c] += g_px[c];
              }
              for (int ky = 0; ky < k; ++ky) {
                const int iy = y + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = xx + kx - pad;
                  if (ix < 0 || ix >= w) continue;
                  const std::size_t in_off = xv.offset(b, iy, ix, 0);
                  for (int gi = 0; gi < groups; ++gi) {
                    const double* grow = g_px + gi * cout;
                    for (int i = 0; i < cin; ++i) {
                      const std::size_t wi = widx(gi, ky, kx, i, 0);
                      const std::size_t xi = in_off + gi * cin + i;
                      double acc = 0.0;
                      for (int o = 0; o < cout; ++o) {
                        acc += grow[o] * wd[wi + o];
                        if (dw) dw[wi + o] += grow[o] * xv[xi];
                      }
                      if (dx) dx[xi] += acc;
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (self.value[i] > 0.0) dx[i] += self.grad[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double y = self.value[i];
      dx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()),
          "add: shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
  Tensor out = a.value();
  out += b.value();
  auto an = a.node();
  auto bn = b.node();
  return a.graph()->make(std::move(out), {&a, &b}, [an, bn](Node& self) {
    if (an->requires_grad) an->grad_buffer() += self.grad;
    if (bn->requires_grad) bn->grad_buffer() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()),
          "sub: shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  return a.graph()->make(std::move(out), {&a, &b}, [an, bn](Node& self) {
    if (an->requires_grad) an->grad_buffer() += self.grad;
    if (bn->requires_grad) {
      Tensor& db = bn->grad_buffer();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= self.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  auto an = a.node();
  return a.graph()->make(std::move(out), {&a}, [an, s](Node& self) {
    Tensor& da = an->grad_buffer();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_rank4(a, "mul");
  require_rank4(b, "mul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  std::size_t bstride[4];
  {
    std::size_t natural = 1;
    for (int d = 3; d >= 0; --d) {
      require(bs[d] == 1 || bs[d] == as[d],
              "mul: cannot broadcast " + shape_string(bs) + " onto " +
                  shape_string(as));
      bstride[d] = bs[d] == 1 ? 0 : natural;
      natural *= static_cast<std::size_t>(bs[d]);
    }
  }
  auto for_each = [as, bstride](auto&& fn) {
    std::size_t ai = 0;
    for (int n = 0; n < as[0]; ++n)
      for (int y = 0; y < as[1]; ++y)
        for (int x = 0; x < as[2]; ++x)
          for (int c = 0; c < as[3]; ++c, ++ai)
            fn(ai, n * bstride[0] + y * bstride[1] + x * bstride[2] +
                       c * bstride[3]);
  };
  Tensor out(as);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for_each([&](std::size_t ai, std::size_t bi) { out[ai] = av[ai] * bv[bi]; });
  auto an = a.node();
  auto bn = b.node();
  return a.graph()->make(std::move(out), {&a, &b},
                         [an, bn, for_each](Node& self) {
                           const Tensor& g = self.grad;
                           if (an->requires_grad) {
                             Tensor& da = an->grad_buffer();
                             for_each([&](std::size_t ai, std::size_t bi) {
                               da[ai] += g[ai] * bn->value[bi];
                             });
                           }
                           if (bn->requires_grad) {
                             Tensor& db = bn->grad_buffer();
                             for_each([&](std::size_t ai, std::size_t bi) {
                               db[bi] += g[ai] * an->value[ai];
                             });
                           }
                         });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  for (const Var& p : parts) require_rank4(p, "concat_channels");
  const Shape& s0 = parts.front().shape();
  int total = 0;
  for (const Var& p : parts) {
    require(p.shape()[0] == s0[0] && p.shape()[1] == s0[1] &&
                p.shape()[2] == s0[2],
            "concat_channels: spatial/batch mismatch " + shape_string(s0) +
                " vs " + shape_string(p.shape()));
    total += p.shape()[3];
  }
  const std::size_t pixels =
      static_cast<std::size_t>(s0[0]) * s0[1] * s0[2];
  Tensor out({s0[0], s0[1], s0[2], total});
  int offset = 0;
  for (const Var& p : parts) {
    const int c = p.shape()[3];
    const double* src = p.value().data();
    for (std::size_t px = 0; px < pixels; ++px) {
      std::memcpy(out.data() + px * total + offset, src + px * c,
                  static_cast<std::size_t>(c) * sizeof(double));
    }
    offset += c;
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const Var& p : parts) nodes.push_back(p.node());
  return parts.front().graph()->make(
      std::move(out), parts, [nodes, pixels, total](Node& self) {
        int offset = 0;
        for (const auto& pn : nodes) {
          const int c = pn->value.c();
          if (pn->requires_grad) {
            double* dst = pn->grad_buffer().data();
            for (std::size_t px = 0; px < pixels; ++px) {
              const double* g = self.grad.data() + px * total + offset;
              double* d = dst + px * c;
              for (int k = 0; k < c; ++k) d[k] += g[k];
            }
          }
          offset += c;
        }
      });
}

Var slice_channels(const Var& x, int begin, int count) {
  require_rank4(x, "slice_channels");
  const Tensor& xv = x.value();
  require(begin >= 0 && count > 0 && begin + count <= xv.c(),
          "slice_channels: range out of bounds");
  const std::size_t pixels = static_cast<std::size_t>(xv.n()) * xv.h() * xv.w();
  const int total = xv.c();
  Tensor out({xv.n(), xv.h(), xv.w(), count});
  for (std::size_t px = 0; px < pixels; ++px) {
    std::memcpy(out.data() + px * count, xv.data() + px * total + begin,
                static_cast<std::size_t>(count) * sizeof(double));
  }
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x},
                         [xn, pixels, total, begin, count](Node& self) {
                           double* dx = xn->grad_buffer().data();
                           for (std::size_t px = 0; px < pixels; ++px) {
                             for (int k = 0; k < count; ++k) {
                               dx[px * total + begin + k] +=
                                   self.grad[px * count + k];
                             }
                           }
                         });
}

Var upsample_nearest2x(const Var& x) {
  require_rank4(x, "upsample_nearest2x");
  const Tensor& xv = x.value();
  const int n = xv.n(), h = xv.h(), w = xv.w(), c = xv.c();
  Tensor out({n, 2 * h, 2 * w, c});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        std::memcpy(&out.at(b, y, xx, 0), xv.data() + xv.offset(b, y / 2, xx / 2, 0),
                    static_cast<std::size_t>(c) * sizeof(double));
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn, n, h, w, c](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) {
          const double* g = &self.grad.at(b, y, xx, 0);
          double* d = &dx.at(b, y / 2, xx / 2, 0);
          for (int k = 0; k < c; ++k) d[k] += g[k];
        }
  });
}

Var avg_pool2x(const Var& x) {
  require_rank4(x, "avg_pool2x");
  const Tensor& xv = x.value();
  const int n = xv.n(), h = xv.h(), w = xv.w(), c = xv.c();
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2x: spatial dims must be even");
  Tensor out({n, h / 2, w / 2, c});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h / 2; ++y)
      for (int xx = 0; xx < w / 2; ++xx)
        for (int k = 0; k < c; ++k)
          out.at(b, y, xx, k) =
              0.25 * (xv.at(b, 2 * y, 2 * xx, k) + xv.at(b, 2 * y, 2 * xx + 1, k) +
                      xv.at(b, 2 * y + 1, 2 * xx, k) +
                      xv.at(b, 2 * y + 1, 2 * xx + 1, k));
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn, n, h, w, c](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          for (int k = 0; k < c; ++k)
            dx.at(b, y, xx, k) += 0.25 * self.grad.at(b, y / 2, xx / 2, k);
  });
}

Var global_avg_pool(const Var& x) {
  require_rank4(x, "global_avg_pool");
  const Tensor& xv = x.value();
  const int n = xv.n(), c = xv.c();
  const int pixels = xv.h() * xv.w();
  Tensor out({n, 1, 1, c});
  for (int b = 0; b < n; ++b)
    for (int p = 0; p < pixels; ++p)
      for (int k = 0; k < c; ++k)
        out[static_cast<std::size_t>(b) * c + k] +=
            xv[(static_cast<std::size_t>(b) * pixels + p) * c + k] / pixels;
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn, n, c, pixels](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (int b = 0; b < n; ++b)
      for (int p = 0; p < pixels; ++p)
        for (int k = 0; k < c; ++k)
          dx[(static_cast<std::size_t>(b) * pixels + p) * c + k] +=
              self.grad[static_cast<std::size_t>(b) * c + k] / pixels;
  });
}

Var softmax_channels(const Var& x) {
  require_rank4(x, "softmax_channels");
  const Tensor& xv = x.value();
  const int c = xv.c();
  const std::size_t pixels = xv.size() / static_cast<std::size_t>(c);
  Tensor out(xv.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* in = xv.data() + p * c;
    double* o = out.data() + p * c;
    const double m = *std::max_element(in, in + c);
    double z = 0.0;
    for (int k = 0; k < c; ++k) z += (o[k] = std::exp(in[k] - m));
    for (int k = 0; k < c; ++k) o[k] /= z;
  }
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn, c, pixels](Node& self) {
    double* dx = xn->grad_buffer().data();
    for (std::size_t p = 0; p < pixels; ++p) {
      const double* y = self.value.data() + p * c;
      const double* g = self.grad.data() + p * c;
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += g[k] * y[k];
      for (int k = 0; k < c; ++k) dx[p * c + k] += y[k] * (g[k] - dot);
    }
  });
}

Var group_modulate(const Var& features, const Var& weights) {
  require_rank4(features, "group_modulate");
  require_rank4(weights, "group_modulate");
  const Tensor& fv = features.value();
  const Tensor& wv = weights.value();
  require(fv.n() == wv.n() && fv.h() == wv.h() && fv.w() == wv.w(),
          "group_modulate: spatial mismatch " + shape_string(fv.shape()) +
              " vs " + shape_string(wv.shape()));
  const int groups = wv.c();
  require(groups > 0 && fv.c() % groups == 0,
          "group_modulate: feature channels " + std::to_string(fv.c()) +
              " not divisible by group count " + std::to_string(groups));
  const int width = fv.c() / groups;
  const std::size_t pixels = fv.size() / static_cast<std::size_t>(fv.c());
  Tensor out(fv.shape());
  for (std::size_t p = 0; p < pixels; ++p)
    for (int g = 0; g < groups; ++g) {
      const double wgt = wv[p * groups + g];
      for (int j = 0; j < width; ++j) {
        const std::size_t i = p * fv.c() + g * width + j;
        out[i] = fv[i] * wgt;
      }
    }
  auto fn = features.node();
  auto wn = weights.node();
  return features.graph()->make(
      std::move(out), {&features, &weights},
      [fn, wn, groups, width, pixels](Node& self) {
        const int c = groups * width;
        double* df = fn->requires_grad ? fn->grad_buffer().data() : nullptr;
        double* dw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
        for (std::size_t p = 0; p < pixels; ++p)
          for (int g = 0; g < groups; ++g) {
            const double wgt = wn->value[p * groups + g];
            double acc = 0.0;
            for (int j = 0; j < width; ++j) {
              const std::size_t i = p * c + g * width + j;
              if (df) df[i] += self.grad[i] * wgt;
              acc += self.grad[i] * fn->value[i];
            }
            if (dw) dw[p * groups + g] += acc;
          }
      });
}

Var sum_all(const Var& x) {
  Tensor out({1}, x.value().sum());
  auto xn = x.node();
  return x.graph()->make(std::move(out), {&x}, [xn](Node& self) {
    Tensor& dx = xn->grad_buffer();
    const double g = self.grad[0];
    for (double& v : dx.values()) v += g;
  });
}

Var mean_squared_error(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()),
          "mean_squared_error: shape mismatch " + shape_string(a.shape()) +
              " vs " + shape_string(b.shape()));
  const std::size_t count = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  Tensor out({1}, acc / static_cast<double>(count));
  auto an = a.node();
  auto bn = b.node();
  return a.graph()->make(std::move(out), {&a, &b}, [an, bn, count](Node& self) {
    const double k = 2.0 * self.grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double d = an->value[i] - bn->value[i];
      if (an->requires_grad) an->grad_buffer()[i] += k * d;
      if (bn->requires_grad) bn->grad_buffer()[i] -= k * d;
    }
  });
}

}  // namespace desnow::ag
