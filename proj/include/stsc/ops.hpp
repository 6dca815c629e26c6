#pragma once

// Differentiable primitives recorded on a Tape.
//
// Conventions:
//  - No implicit broadcasting. Every shape mismatch throws ShapeError.
//  - Per-channel vectors (conv bias, norm gain/shift) have shape (1, c, 1, 1).
//  - Scalars have shape (1, 1, 1, 1).

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stsc/error.hpp"
#include "stsc/tape.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

constexpr Shape channel_vector_shape(std::size_t c) noexcept { return Shape{1, c, 1, 1}; }
constexpr Shape scalar_shape() noexcept { return Shape{1, 1, 1, 1}; }

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return;
  const char* dim = a.n != b.n ? "n" : a.c != b.c ? "c" : a.h != b.h ? "h" : "w";
  throw ShapeError(std::string(op) + ": shape mismatch in dimension " + dim + ": " + a.str() + " vs " +
                   b.str());
}

/// Source index for padded coordinate p under mirror padding that excludes the edge.
inline std::size_t reflect_index(std::ptrdiff_t p, std::ptrdiff_t pad, std::ptrdiff_t len) {
  std::ptrdiff_t i = p - pad;
  if (i < 0) i = -i;
  if (i >= len) i = 2 * (len - 1) - i;
  return static_cast<std::size_t>(i);
}

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
  std::vector<std::size_t> rows;  // padded row -> source row
  std::vector<std::size_t> cols;  // padded col -> source col

  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return ho * wo; }
};

/// Unrolls sample `x` (cin x h x w) into a (cin*k*k) x (ho*wo) matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t P = g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* src = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* dst = col + ((ci * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const T* row = src + g.rows[oy * g.stride + ky] * g.w;
          const std::size_t* cmap = g.cols.data() + kx;
          for (std::size_t ox = 0; ox < g.wo; ++ox) dst[oy * g.wo + ox] = row[cmap[ox * g.stride]];
        }
      }
    }
  }
}

/// Adjoint of im2col, folding mirrored taps back onto their source pixels.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t P = g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* dst = dx + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* src = col + ((ci * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          T* row = dst + g.rows[oy * g.stride + ky] * g.w;
          const std::size_t* cmap = g.cols.data() + kx;
          for (std::size_t ox = 0; ox < g.wo; ++ox) row[cmap[ox * g.stride]] += src[oy * g.wo + ox];
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution with square kernels and mirror padding.
///
/// weight: (c_out, c_in, k, k); bias: (1, c_out, 1, 1). Output spatial size is
/// floor((h + 2*pad - k) / stride) + 1. Mirror padding needs pad < h and pad < w.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  const Shape xs = tape.shape(input);
  const Shape ws = tape.shape(weight);
  const Shape bs = tape.shape(bias);
  detail::require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  detail::require(ws.h == ws.w, "conv2d: kernel must be square, got " + ws.str());
  detail::require(xs.c == ws.c, "conv2d: input channel dimension c = " + std::to_string(xs.c) +
                                    " does not match weight c_in = " + std::to_string(ws.c));
  detail::require(bs == channel_vector_shape(ws.n),
                  "conv2d: bias shape " + bs.str() + " does not match c_out = " + std::to_string(ws.n));
  detail::require(pad < xs.h && pad < xs.w,
                  "conv2d: reflection pad " + std::to_string(pad) + " too large for spatial dims " + xs.str());
  detail::require(xs.h + 2 * pad >= ws.h && xs.w + 2 * pad >= ws.w,
                  "conv2d: padded spatial dims smaller than kernel " + std::to_string(ws.h));

  auto geo = std::make_shared<detail::ConvGeometry>();
  geo->cin = xs.c;
  geo->h = xs.h;
  geo->w = xs.w;
  geo->cout = ws.n;
  geo->k = ws.h;
  geo->stride = stride;
  geo->pad = pad;
  geo->ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  geo->wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  for (std::size_t p = 0; p < xs.h + 2 * pad; ++p)
    geo->rows.push_back(detail::reflect_index(static_cast<std::ptrdiff_t>(p), pad, xs.h));
  for (std::size_t p = 0; p < xs.w + 2 * pad; ++p)
    geo->cols.push_back(detail::reflect_index(static_cast<std::ptrdiff_t>(p), pad, xs.w));

  using Mat = detail::RowMat<T>;
  const std::size_t K = geo->patch();
  const std::size_t P = geo->pixels();
  const Tensor4<T>& x = tape.value(input);
  const Tensor4<T>& wt = tape.value(weight);
  const Tensor4<T>& b = tape.value(bias);

  Tensor4<T> out(Shape{xs.n, geo->cout, geo->ho, geo->wo});
  std::vector<T> col(K * P);
  Eigen::Map<const Mat> W(wt.data().data(), geo->cout, K);
  for (std::size_t n = 0; n < xs.n; ++n) {
    detail::im2col(*geo, x.plane(n, 0), col.data());
    Eigen::Map<Mat> O(out.plane(n, 0), geo->cout, P);
    O.noalias() = W * Eigen::Map<const Mat>(col.data(), K, P);
    for (std::size_t co = 0; co < geo->cout; ++co) O.row(co).array() += b[co];
  }

  const bool rg = tape.requires_grad(input) || tape.requires_grad(weight) || tape.requires_grad(bias);
  return tape.record(std::move(out), rg, [input, weight, bias, geo](Tape<T>& t, std::size_t self) {
    const std::size_t K = geo->patch();
    const std::size_t P = geo->pixels();
    const Tensor4<T>& g = t.grad_buffer(self);
    const Tensor4<T>& x = t.value(input);
    const std::size_t N = x.shape().n;
    Eigen::Map<const Mat> W(t.value(weight).data().data(), geo->cout, K);
    std::vector<T> col(K * P);
    std::vector<T> dcol;
    for (std::size_t n = 0; n < N; ++n) {
      Eigen::Map<const Mat> G(g.plane(n, 0), geo->cout, P);
      if (t.requires_grad(weight)) {
        detail::im2col(*geo, x.plane(n, 0), col.data());
        Eigen::Map<Mat> dW(t.grad_buffer(weight).data().data(), geo->cout, K);
        dW.noalias() += G * Eigen::Map<const Mat>(col.data(), K, P).transpose();
      }
      if (t.requires_grad(bias)) {
        Tensor4<T>& db = t.grad_buffer(bias);
        for (std::size_t co = 0; co < geo->cout; ++co) db[co] += G.row(co).sum();
      }
      if (t.requires_grad(input)) {
        dcol.resize(K * P);
        Eigen::Map<Mat>(dcol.data(), K, P).noalias() = W.transpose() * G;
        detail::col2im_add(*geo, dcol.data(), t.grad_buffer(input).plane(n, 0));
      }
    }
  });
}

/// Instance normalization: per (sample, channel) standardization with
/// population variance, followed by a per-channel affine map.
template <typename T>
Var instance_norm(Tape<T>& tape, Var input, Var gain, Var shift, T eps) {
  if (!(eps > T{0})) throw ShapeError("instance_norm: eps must be positive");
  const Shape xs = tape.shape(input);
  detail::require(xs.plane() >= 1, "instance_norm: empty spatial plane");
  detail::require_same(tape.shape(gain), channel_vector_shape(xs.c), "instance_norm gain");
  detail::require_same(tape.shape(shift), channel_vector_shape(xs.c), "instance_norm shift");

  const Tensor4<T>& x = tape.value(input);
  const Tensor4<T>& ga = tape.value(gain);
  const Tensor4<T>& sh = tape.value(shift);
  const std::size_t HW = xs.plane();
  auto stats = std::make_shared<std::vector<T>>(2 * xs.n * xs.c);  // (mean, inv_std) pairs
  Tensor4<T> out(xs);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* src = x.plane(n, c);
      T mean{0};
      for (std::size_t i = 0; i < HW; ++i) mean += src[i];
      mean /= static_cast<T>(HW);
      T var{0};
      for (std::size_t i = 0; i < HW; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<T>(HW);
      const T inv_std = T{1} / std::sqrt(var + eps);
      (*stats)[2 * (n * xs.c + c)] = mean;
      (*stats)[2 * (n * xs.c + c) + 1] = inv_std;
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < HW; ++i) dst[i] = ga[c] * ((src[i] - mean) * inv_std) + sh[c];
    }
  }

  const bool rg = tape.requires_grad(input) || tape.requires_grad(gain) || tape.requires_grad(shift);
  return tape.record(std::move(out), rg, [input, gain, shift, stats](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    const Tensor4<T>& x = t.value(input);
    const Tensor4<T>& ga = t.value(gain);
    const Shape xs = x.shape();
    const std::size_t HW = xs.plane();
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        const T mean = (*stats)[2 * (n * xs.c + c)];
        const T inv_std = (*stats)[2 * (n * xs.c + c) + 1];
        const T* src = x.plane(n, c);
        const T* gy = g.plane(n, c);
        T sum_g{0};
        T sum_g_xhat{0};
        for (std::size_t i = 0; i < HW; ++i) {
          const T xhat = (src[i] - mean) * inv_std;
          sum_g += gy[i];
          sum_g_xhat += gy[i] * xhat;
        }
        if (t.requires_grad(gain)) t.grad_buffer(gain)[c] += sum_g_xhat;
        if (t.requires_grad(shift)) t.grad_buffer(shift)[c] += sum_g;
        if (t.requires_grad(input)) {
          T* dx = t.grad_buffer(input).plane(n, c);
          const T mg = sum_g / static_cast<T>(HW);
          const T mgx = sum_g_xhat / static_cast<T>(HW);
          for (std::size_t i = 0; i < HW; ++i) {
            const T xhat = (src[i] - mean) * inv_std;
            dx[i] += ga[c] * inv_std * (gy[i] - mg - xhat * mgx);
          }
        }
      }
    }
  });
}

namespace detail {

/// Elementwise unary op y = f(x) with dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Var unary(Tape<T>& tape, Var input, F f, DF df) {
  const Tensor4<T>& x = tape.value(input);
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return tape.record(std::move(out), tape.requires_grad(input), [input, df](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    const Tensor4<T>& x = t.value(input);
    const Tensor4<T>& y = t.value(Var{self});
    Tensor4<T>& dx = t.grad_buffer(input);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

/// max(x, 0); the subgradient at exactly 0 is 0.
template <typename T>
Var relu(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x, [](T v) { return v > T{0} || std::isnan(v) ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

/// Logistic output map 1 / (1 + exp(-x)), range (0, 1).
template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x,
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

/// Multiplies every element by a fixed constant.
template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  return detail::unary(
      tape, x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  detail::require_same(tape.shape(a), tape.shape(b), "add");
  const Tensor4<T>& x = tape.value(a);
  const Tensor4<T>& y = tape.value(b);
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor4<T>& d = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  detail::require_same(tape.shape(a), tape.shape(b), "sub");
  const Tensor4<T>& x = tape.value(a);
  const Tensor4<T>& y = tape.value(b);
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    if (t.requires_grad(a)) {
      Tensor4<T>& d = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor4<T>& d = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

/// Elementwise product of two same-shaped tensors.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  detail::require_same(tape.shape(a), tape.shape(b), "mul");
  const Tensor4<T>& x = tape.value(a);
  const Tensor4<T>& y = tape.value(b);
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    const Tensor4<T>& x = t.value(a);
    const Tensor4<T>& y = t.value(b);
    if (t.requires_grad(a)) {
      Tensor4<T>& d = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
    }
    if (t.requires_grad(b)) {
      Tensor4<T>& d = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
    }
  });
}

/// x * s where s is a recorded 1x1x1x1 scalar (the explicit form of scalar broadcast).
template <typename T>
Var scale_by(Tape<T>& tape, Var x, Var s) {
  detail::require_same(tape.shape(s), scalar_shape(), "scale_by scalar");
  const Tensor4<T>& xv = tape.value(x);
  const T sv = tape.value(s)[0];
  Tensor4<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sv;
  const bool rg = tape.requires_grad(x) || tape.requires_grad(s);
  return tape.record(std::move(out), rg, [x, s](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    const Tensor4<T>& xv = t.value(x);
    const T sv = t.value(s)[0];
    if (t.requires_grad(x)) {
      Tensor4<T>& d = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * sv;
    }
    if (t.requires_grad(s)) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad_buffer(s)[0] += acc;
    }
  });
}

/// Sum of all elements as a scalar.
template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor4<T>& xv = tape.value(x);
  T acc{0};
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  return tape.record(Tensor4<T>::scalar(acc), tape.requires_grad(x), [x](Tape<T>& t, std::size_t self) {
    const T g = t.grad_buffer(self)[0];
    Tensor4<T>& d = t.grad_buffer(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

/// Each pixel replicated into a factor x factor block.
template <typename T>
Var nearest_upsample(Tape<T>& tape, Var input, std::size_t factor) {
  if (factor < 1) throw ShapeError("nearest_upsample: factor must be >= 1");
  const Tensor4<T>& x = tape.value(input);
  const Shape xs = x.shape();
  Tensor4<T> out(Shape{xs.n, xs.c, xs.h * factor, xs.w * factor});
  const std::size_t wo = xs.w * factor;
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* src = x.data().data() + nc * xs.plane();
    T* dst = out.data().data() + nc * xs.plane() * factor * factor;
    for (std::size_t y = 0; y < xs.h * factor; ++y)
      for (std::size_t xo = 0; xo < wo; ++xo) dst[y * wo + xo] = src[(y / factor) * xs.w + xo / factor];
  }
  return tape.record(std::move(out), tape.requires_grad(input), [input, factor](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    Tensor4<T>& dx = t.grad_buffer(input);
    const Shape xs = dx.shape();
    const std::size_t wo = xs.w * factor;
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
      T* dst = dx.data().data() + nc * xs.plane();
      const T* src = g.data().data() + nc * xs.plane() * factor * factor;
      for (std::size_t y = 0; y < xs.h * factor; ++y)
        for (std::size_t xo = 0; xo < wo; ++xo) dst[(y / factor) * xs.w + xo / factor] += src[y * wo + xo];
    }
  });
}

/// Non-overlapping 2x2 mean pooling; h and w must be even.
template <typename T>
Var avg_pool2(Tape<T>& tape, Var input) {
  const Tensor4<T>& x = tape.value(input);
  const Shape xs = x.shape();
  detail::require(xs.h % 2 == 0 && xs.w % 2 == 0, "avg_pool2: spatial dims must be even, got " + xs.str());
  const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  Tensor4<T> out(os);
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* src = x.data().data() + nc * xs.plane();
    T* dst = out.data().data() + nc * os.plane();
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t xo = 0; xo < os.w; ++xo) {
        const T* p = src + 2 * y * xs.w + 2 * xo;
        dst[y * os.w + xo] = (p[0] + p[1] + p[xs.w] + p[xs.w + 1]) * T(0.25);
      }
  }
  return tape.record(std::move(out), tape.requires_grad(input), [input](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    Tensor4<T>& dx = t.grad_buffer(input);
    const Shape xs = dx.shape();
    const Shape os = g.shape();
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
      T* dst = dx.data().data() + nc * xs.plane();
      const T* src = g.data().data() + nc * os.plane();
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xo = 0; xo < os.w; ++xo) {
          const T v = src[y * os.w + xo] * T(0.25);
          T* p = dst + 2 * y * xs.w + 2 * xo;
          p[0] += v;
          p[1] += v;
          p[xs.w] += v;
          p[xs.w + 1] += v;
        }
    }
  });
}

/// Per-sample Gram matrix G = F F^T / (c*h*w), F the c x (h*w) unrolled
/// feature map. Output shape (n, 1, c, c).
template <typename T>
Var gram(Tape<T>& tape, Var features) {
  using Mat = detail::RowMat<T>;
  const Tensor4<T>& f = tape.value(features);
  const Shape fs = f.shape();
  detail::require(fs.plane() >= 1, "gram: empty spatial plane");
  const T norm = T{1} / static_cast<T>(fs.c * fs.plane());
  Tensor4<T> out(Shape{fs.n, 1, fs.c, fs.c});
  for (std::size_t n = 0; n < fs.n; ++n) {
    Eigen::Map<const Mat> F(f.plane(n, 0), fs.c, fs.plane());
    Eigen::Map<Mat> G(out.plane(n, 0), fs.c, fs.c);
    G.noalias() = F * F.transpose();
    G *= norm;
    // Exact symmetry regardless of GEMM summation order.
    for (std::size_t i = 0; i < fs.c; ++i)
      for (std::size_t j = i + 1; j < fs.c; ++j) G(j, i) = G(i, j);
  }
  return tape.record(std::move(out), tape.requires_grad(features), [features, norm](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    const Tensor4<T>& f = t.value(features);
    const Shape fs = f.shape();
    Tensor4<T>& df = t.grad_buffer(features);
    for (std::size_t n = 0; n < fs.n; ++n) {
      Eigen::Map<const Mat> F(f.plane(n, 0), fs.c, fs.plane());
      Eigen::Map<const Mat> G(g.plane(n, 0), fs.c, fs.c);
      Eigen::Map<Mat> D(df.plane(n, 0), fs.c, fs.plane());
      const Mat sym = (G + G.transpose()) * norm;
      D.noalias() += sym * F;
    }
  });
}

/// Mean of squared differences over all elements.
template <typename T>
Var mse(Tape<T>& tape, Var a, Var b) {
  detail::require_same(tape.shape(a), tape.shape(b), "mse");
  const Tensor4<T>& x = tape.value(a);
  const Tensor4<T>& y = tape.value(b);
  T acc{0};
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  const T inv = x.size() > 0 ? T{1} / static_cast<T>(x.size()) : T{0};
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(Tensor4<T>::scalar(acc * inv), rg, [a, b, inv](Tape<T>& t, std::size_t self) {
    const T g = t.grad_buffer(self)[0] * T{2} * inv;
    const Tensor4<T>& x = t.value(a);
    const Tensor4<T>& y = t.value(b);
    if (t.requires_grad(a)) {
      Tensor4<T>& d = t.grad_buffer(a);
      for (std::size_t i = 0; i < x.size(); ++i) d[i] += g * (x[i] - y[i]);
    }
    if (t.requires_grad(b)) {
      Tensor4<T>& d = t.grad_buffer(b);
      for (std::size_t i = 0; i < x.size(); ++i) d[i] -= g * (x[i] - y[i]);
    }
  });
}

/// (sum of squared horizontal + vertical neighbour differences) / (n*c*h*w).
template <typename T>
Var total_variation(Tape<T>& tape, Var input) {
  const Tensor4<T>& x = tape.value(input);
  const Shape xs = x.shape();
  detail::require(xs.size() > 0, "total_variation: empty tensor");
  const T inv = T{1} / static_cast<T>(xs.size());
  T acc{0};
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* p = x.data().data() + nc * xs.plane();
    for (std::size_t y = 0; y < xs.h; ++y)
      for (std::size_t xo = 0; xo < xs.w; ++xo) {
        if (xo + 1 < xs.w) acc += (p[y * xs.w + xo + 1] - p[y * xs.w + xo]) * (p[y * xs.w + xo + 1] - p[y * xs.w + xo]);
        if (y + 1 < xs.h) acc += (p[(y + 1) * xs.w + xo] - p[y * xs.w + xo]) * (p[(y + 1) * xs.w + xo] - p[y * xs.w + xo]);
      }
  }
  return tape.record(Tensor4<T>::scalar(acc * inv), tape.requires_grad(input), [input, inv](Tape<T>& t, std::size_t self) {
    const T g = t.grad_buffer(self)[0] * T{2} * inv;
    const Tensor4<T>& x = t.value(input);
    const Shape xs = x.shape();
    Tensor4<T>& dx = t.grad_buffer(input);
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
      const T* p = x.data().data() + nc * xs.plane();
      T* d = dx.data().data() + nc * xs.plane();
      for (std::size_t y = 0; y < xs.h; ++y)
        for (std::size_t xo = 0; xo < xs.w; ++xo) {
          const std::size_t i = y * xs.w + xo;
          if (xo + 1 < xs.w) {
            const T diff = g * (p[i + 1] - p[i]);
            d[i + 1] += diff;
            d[i] -= diff;
          }
          if (y + 1 < xs.h) {
            const T diff = g * (p[i + xs.w] - p[i]);
            d[i + xs.w] += diff;
            d[i] -= diff;
          }
        }
    }
  });
}

/// Stacks `count` copies of a single-sample tensor along the batch axis.
template <typename T>
Var repeat_batch(Tape<T>& tape, Var x, std::size_t count) {
  const Tensor4<T>& v = tape.value(x);
  detail::require(v.shape().n == 1, "repeat_batch: input batch must be 1, got " + v.shape().str());
  const Shape os{count, v.shape().c, v.shape().h, v.shape().w};
  Tensor4<T> out(os);
  for (std::size_t n = 0; n < count; ++n) std::copy(v.data().begin(), v.data().end(), out.data().begin() + n * v.size());
  return tape.record(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, std::size_t self) {
    const Tensor4<T>& g = t.grad_buffer(self);
    Tensor4<T>& d = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i % d.size()] += g[i];
  });
}

}  // namespace stsc
