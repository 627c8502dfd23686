#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tdfusion/autodiff/tape.hpp"
#include "tdfusion/autodiff/tensor.hpp"

// Differentiable tensor operations.
//
// Every backward rule is written in terms of these same operations, so when
// a backward pass runs with recording enabled the gradients land on the tape
// as ordinary nodes and can be differentiated again.
//
// Image tensors use the layout [batch, channels, height, width].

namespace tdfusion::autodiff {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor shift(const Tensor& x, double offset);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor expand(const Tensor& s, const Shape& shape);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reflect_pad(const Tensor& x, std::size_t pad);
Tensor reflect_pad_adjoint(const Tensor& g, std::size_t pad);
Tensor conv_valid(const Tensor& x, const Tensor& w);
Tensor conv_input_grad(const Tensor& g, const Tensor& w);
Tensor conv_weight_grad(const Tensor& x, const Tensor& g);
Tensor conv2d(const Tensor& x, const Tensor& w);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor bias_broadcast(const Tensor& b, const Shape& shape);
Tensor bias_reduce(const Tensor& g);
Tensor channel_sum(const Tensor& x);
Tensor channel_broadcast(const Tensor& x, std::size_t channels);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count);
Tensor embed_channels(const Tensor& x, std::size_t start, std::size_t total);
Tensor softmax_channels(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

namespace testing {
/// Test hook: when set, the backward rule of this op is deliberately scaled
/// by 1.25. Used as a negative control for gradient verification.
inline std::optional<OpKind> corrupted_backward;
}  // namespace testing

namespace detail {

inline Tape* common_tape(const std::vector<Tensor>& inputs) {
  Tape* tape = nullptr;
  for (const Tensor& in : inputs) {
    if (!in.on_tape()) continue;
    if (tape != nullptr && tape != in.tape()) throw TapeError("inputs recorded on different tapes");
    tape = in.tape();
  }
  return tape;
}

inline void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined input tensor");
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

/// Builds the result tensor and, when an input is on a recording tape,
/// appends the node with its backward rule.
inline Tensor finish(OpKind kind, Shape shape, std::vector<double> values,
                     const std::vector<Tensor>& inputs,
                     const std::function<BackwardFn(const Tensor&)>& make_backward) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(op_name(kind)) + " produced a non-finite value");
    }
  }
  Tensor result(std::move(shape), std::move(values));
  Tape* tape = common_tape(inputs);
  if (tape == nullptr || !recording_enabled()) return result;
  if (testing::corrupted_backward == kind) {
    return tape->record(kind, result, inputs, [&](const Tensor& out) -> BackwardFn {
      BackwardFn inner = make_backward(out);
      return [inner](const Tensor& g) {
        std::vector<Tensor> grads = inner(g);
        for (Tensor& t : grads) {
          if (t.defined()) t = scale(t, 1.25);
        }
        return grads;
      };
    });
  }
  return tape->record(kind, result, inputs, make_backward);
}

inline Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() == b.shape()) return a.shape();
  if (a.numel() == 1) return b.shape();
  if (b.numel() == 1) return a.shape();
  throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()) + " do not conform");
}

template <class F>
std::vector<double> zip(const Tensor& a, const Tensor& b, std::size_t n, F f) {
  std::vector<double> out(n);
  const auto da = a.data();
  const auto db = b.data();
  const bool sa = da.size() == 1 && n != 1;
  const bool sb = db.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(da[sa ? 0 : i], db[sb ? 0 : i]);
  return out;
}

template <class F>
std::vector<double> map(const Tensor& x, F f) {
  std::vector<double> out(x.numel());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
  return out;
}

/// Gradient of a broadcast operand: summed when the operand was a scalar.
inline Tensor reduce_to(const Tensor& g, const Tensor& like) {
  if (g.shape() == like.shape()) return g;
  if (g.numel() == like.numel()) return reshape(g, like.shape());
  return reshape(sum(g), like.shape());
}

struct Dims4 {
  std::size_t n, c, h, w;
};

inline Dims4 dims4(const Tensor& t, const char* op) {
  require_rank(t, 4, op);
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= len) i = 2 * (len - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape = detail::broadcast_shape(a, b, "add");
  auto values = detail::zip(a, b, numel(shape), [](double x, double y) { return x + y; });
  return detail::finish(OpKind::Add, shape, std::move(values), {a, b}, [a, b](const Tensor&) {
    return [a, b](const Tensor& g) -> std::vector<Tensor> {
      return {detail::reduce_to(g, a), detail::reduce_to(g, b)};
    };
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape = detail::broadcast_shape(a, b, "sub");
  auto values = detail::zip(a, b, numel(shape), [](double x, double y) { return x - y; });
  return detail::finish(OpKind::Sub, shape, std::move(values), {a, b}, [a, b](const Tensor&) {
    return [a, b](const Tensor& g) -> std::vector<Tensor> {
      return {detail::reduce_to(g, a), detail::reduce_to(scale(g, -1.0), b)};
    };
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape = detail::broadcast_shape(a, b, "mul");
  auto values = detail::zip(a, b, numel(shape), [](double x, double y) { return x * y; });
  return detail::finish(OpKind::Mul, shape, std::move(values), {a, b}, [a, b](const Tensor&) {
    return [a, b](const Tensor& g) -> std::vector<Tensor> {
      return {detail::reduce_to(mul(g, b), a), detail::reduce_to(mul(g, a), b)};
    };
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  detail::require_defined(x, "scale");
  auto values = detail::map(x, [factor](double v) { return v * factor; });
  return detail::finish(OpKind::Scale, x.shape(), std::move(values), {x}, [factor](const Tensor&) {
    return [factor](const Tensor& g) -> std::vector<Tensor> { return {scale(g, factor)}; };
  });
}

inline Tensor shift(const Tensor& x, double offset) {
  detail::require_defined(x, "shift");
  auto values = detail::map(x, [offset](double v) { return v + offset; });
  return detail::finish(OpKind::Shift, x.shape(), std::move(values), {x}, [](const Tensor&) {
    return [](const Tensor& g) -> std::vector<Tensor> { return {g}; };
  });
}

inline Tensor square(const Tensor& x) {
  detail::require_defined(x, "square");
  auto values = detail::map(x, [](double v) { return v * v; });
  return detail::finish(OpKind::Square, x.shape(), std::move(values), {x}, [x](const Tensor&) {
    return [x](const Tensor& g) -> std::vector<Tensor> { return {mul(g, scale(x, 2.0))}; };
  });
}

inline Tensor abs(const Tensor& x) {
  detail::require_defined(x, "abs");
  auto values = detail::map(x, [](double v) { return std::abs(v); });
  return detail::finish(OpKind::Abs, x.shape(), std::move(values), {x}, [x](const Tensor&) {
    // subgradient 0 at the kink
    Tensor sign(x.shape(), detail::map(x, [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
    return [sign](const Tensor& g) -> std::vector<Tensor> { return {mul(g, sign)}; };
  });
}

inline Tensor maximum(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "maximum");
  detail::require_defined(b, "maximum");
  if (a.shape() != b.shape()) {
    throw ShapeError("maximum: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
  }
  auto values = detail::zip(a, b, a.numel(), [](double x, double y) { return std::max(x, y); });
  return detail::finish(OpKind::Maximum, a.shape(), std::move(values), {a, b}, [a, b](const Tensor&) {
    // ties route to the first argument
    Tensor first(a.shape(), detail::zip(a, b, a.numel(), [](double x, double y) { return x >= y ? 1.0 : 0.0; }));
    Tensor second(a.shape(), detail::zip(a, b, a.numel(), [](double x, double y) { return x >= y ? 0.0 : 1.0; }));
    return [first, second](const Tensor& g) -> std::vector<Tensor> {
      return {mul(g, first), mul(g, second)};
    };
  });
}

inline Tensor relu(const Tensor& x) {
  detail::require_defined(x, "relu");
  auto values = detail::map(x, [](double v) { return v > 0 ? v : 0.0; });
  return detail::finish(OpKind::Relu, x.shape(), std::move(values), {x}, [x](const Tensor&) {
    Tensor step(x.shape(), detail::map(x, [](double v) { return v > 0 ? 1.0 : 0.0; }));
    return [step](const Tensor& g) -> std::vector<Tensor> { return {mul(g, step)}; };
  });
}

inline Tensor sigmoid(const Tensor& x) {
  detail::require_defined(x, "sigmoid");
  auto values = detail::map(x, [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return detail::finish(OpKind::Sigmoid, x.shape(), std::move(values), {x}, [](const Tensor& y) {
    return [y](const Tensor& g) -> std::vector<Tensor> {
      return {mul(g, mul(y, shift(scale(y, -1.0), 1.0)))};
    };
  });
}

inline Tensor sum(const Tensor& x) {
  detail::require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const Shape shape = x.shape();
  return detail::finish(OpKind::Sum, {1}, {s}, {x}, [shape](const Tensor&) {
    return [shape](const Tensor& g) -> std::vector<Tensor> { return {expand(g, shape)}; };
  });
}

inline Tensor mean(const Tensor& x) {
  detail::require_defined(x, "mean");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor expand(const Tensor& s, const Shape& shape) {
  detail::require_defined(s, "expand");
  if (s.numel() != 1) throw ShapeError("expand: source must hold one element, got " + to_string(s.shape()));
  std::vector<double> values(numel(shape), s[0]);
  const Shape src = s.shape();
  return detail::finish(OpKind::Expand, shape, std::move(values), {s}, [src](const Tensor&) {
    return [src](const Tensor& g) -> std::vector<Tensor> { return {reshape(sum(g), src)}; };
  });
}

inline Tensor reshape(const Tensor& x, const Shape& shape) {
  detail::require_defined(x, "reshape");
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  const Shape src = x.shape();
  return detail::finish(OpKind::Reshape, shape, x.values(), {x}, [src](const Tensor&) {
    return [src](const Tensor& g) -> std::vector<Tensor> { return {reshape(g, src)}; };
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = da[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * db[p * n + j];
    }
  }
  return detail::finish(OpKind::MatMul, {m, n}, std::move(out), {a, b}, [a, b](const Tensor&) {
    return [a, b](const Tensor& g) -> std::vector<Tensor> {
      return {matmul(g, transpose(b)), matmul(transpose(a), g)};
    };
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto d = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  }
  return detail::finish(OpKind::Transpose, {c, r}, std::move(out), {x}, [](const Tensor&) {
    return [](const Tensor& g) -> std::vector<Tensor> { return {transpose(g)}; };
  });
}

inline Tensor reflect_pad(const Tensor& x, std::size_t pad) {
  const auto [n, c, h, w] = detail::dims4(x, "reflect_pad");
  if (pad == 0) return x;
  if (pad >= h || pad >= w) {
    throw ShapeError("reflect_pad: padding " + std::to_string(pad) + " too large for " + to_string(x.shape()));
  }
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<double> out(n * c * hp * wp);
  const auto d = x.data();
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = d.data() + plane * h * w;
    double* dst = out.data() + plane * hp * wp;
    for (std::size_t i = 0; i < hp; ++i) {
      const std::size_t si = detail::reflect_index(static_cast<std::ptrdiff_t>(i) - p, h);
      for (std::size_t j = 0; j < wp; ++j) {
        dst[i * wp + j] = src[si * w + detail::reflect_index(static_cast<std::ptrdiff_t>(j) - p, w)];
      }
    }
  }
  return detail::finish(OpKind::ReflectPad, {n, c, hp, wp}, std::move(out), {x}, [pad](const Tensor&) {
    return [pad](const Tensor& g) -> std::vector<Tensor> { return {reflect_pad_adjoint(g, pad)}; };
  });
}

/// Adjoint of reflect_pad: folds the padded border back onto the interior.
inline Tensor reflect_pad_adjoint(const Tensor& g, std::size_t pad) {
  const auto [n, c, hp, wp] = detail::dims4(g, "reflect_pad_adjoint");
  if (pad == 0) return g;
  if (hp <= 3 * pad || wp <= 3 * pad) {
    throw ShapeError("reflect_pad_adjoint: padding " + std::to_string(pad) + " too large for " +
                     to_string(g.shape()));
  }
  const std::size_t h = hp - 2 * pad, w = wp - 2 * pad;
  std::vector<double> out(n * c * h * w, 0.0);
  const auto d = g.data();
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = d.data() + plane * hp * wp;
    double* dst = out.data() + plane * h * w;
    for (std::size_t i = 0; i < hp; ++i) {
      const std::size_t si = detail::reflect_index(static_cast<std::ptrdiff_t>(i) - p, h);
      for (std::size_t j = 0; j < wp; ++j) {
        dst[si * w + detail::reflect_index(static_cast<std::ptrdiff_t>(j) - p, w)] += src[i * wp + j];
      }
    }
  }
  return detail::finish(OpKind::ReflectPadAdjoint, {n, c, h, w}, std::move(out), {g}, [pad](const Tensor&) {
    return [pad](const Tensor& u) -> std::vector<Tensor> { return {reflect_pad(u, pad)}; };
  });
}

// The three convolution ops are the partial derivatives of one trilinear form
//   T(g, W, x) = sum g[n,o,i,j] W[o,c,u,v] x[n,c,i+u,j+v]
// so each one's backward rule is expressed with the other two.

/// Valid cross-correlation: x [N,Ci,H,W], w [Co,Ci,kh,kw] -> [N,Co,H-kh+1,W-kw+1].
inline Tensor conv_valid(const Tensor& x, const Tensor& w) {
  const auto [n, ci, hx, wx] = detail::dims4(x, "conv");
  const auto [co, wci, kh, kw] = detail::dims4(w, "conv");
  if (wci != ci) {
    throw ShapeError("conv: weight " + to_string(w.shape()) + " does not match input " + to_string(x.shape()));
  }
  if (kh > hx || kw > wx) throw ShapeError("conv: kernel larger than input " + to_string(x.shape()));
  const std::size_t ho = hx - kh + 1, wo = wx - kw + 1;
  std::vector<double> out(n * co * ho * wo, 0.0);
  const auto dx = x.data();
  const auto dw = w.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      double* y = out.data() + (b * co + o) * ho * wo;
      for (std::size_t c = 0; c < ci; ++c) {
        const double* xc = dx.data() + (b * ci + c) * hx * wx;
        for (std::size_t u = 0; u < kh; ++u) {
          for (std::size_t v = 0; v < kw; ++v) {
            const double wv = dw[((o * ci + c) * kh + u) * kw + v];
            for (std::size_t i = 0; i < ho; ++i) {
              double* yrow = y + i * wo;
              const double* xrow = xc + (i + u) * wx + v;
              for (std::size_t j = 0; j < wo; ++j) yrow[j] += wv * xrow[j];
            }
          }
        }
      }
    }
  }
  return detail::finish(OpKind::Conv, {n, co, ho, wo}, std::move(out), {x, w}, [x, w](const Tensor&) {
    return [x, w](const Tensor& g) -> std::vector<Tensor> {
      return {conv_input_grad(g, w), conv_weight_grad(x, g)};
    };
  });
}

/// g [N,Co,Ho,Wo], w [Co,Ci,kh,kw] -> [N,Ci,Ho+kh-1,Wo+kw-1].
inline Tensor conv_input_grad(const Tensor& g, const Tensor& w) {
  const auto [n, co, ho, wo] = detail::dims4(g, "conv_input_grad");
  const auto [wco, ci, kh, kw] = detail::dims4(w, "conv_input_grad");
  if (wco != co) {
    throw ShapeError("conv_input_grad: weight " + to_string(w.shape()) + " does not match " + to_string(g.shape()));
  }
  const std::size_t hx = ho + kh - 1, wx = wo + kw - 1;
  std::vector<double> out(n * ci * hx * wx, 0.0);
  const auto dg = g.data();
  const auto dw = w.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      const double* go = dg.data() + (b * co + o) * ho * wo;
      for (std::size_t c = 0; c < ci; ++c) {
        double* xc = out.data() + (b * ci + c) * hx * wx;
        for (std::size_t u = 0; u < kh; ++u) {
          for (std::size_t v = 0; v < kw; ++v) {
            const double wv = dw[((o * ci + c) * kh + u) * kw + v];
            for (std::size_t i = 0; i < ho; ++i) {
              const double* grow = go + i * wo;
              double* xrow = xc + (i + u) * wx + v;
              for (std::size_t j = 0; j < wo; ++j) xrow[j] += wv * grow[j];
            }
          }
        }
      }
    }
  }
  return detail::finish(OpKind::ConvInputGrad, {n, ci, hx, wx}, std::move(out), {g, w}, [g, w](const Tensor&) {
    return [g, w](const Tensor& u) -> std::vector<Tensor> {
      return {conv_valid(u, w), conv_weight_grad(u, g)};
    };
  });
}

/// x [N,Ci,H,W], g [N,Co,Ho,Wo] -> [Co,Ci,H-Ho+1,W-Wo+1].
inline Tensor conv_weight_grad(const Tensor& x, const Tensor& g) {
  const auto [n, ci, hx, wx] = detail::dims4(x, "conv_weight_grad");
  const auto [gn, co, ho, wo] = detail::dims4(g, "conv_weight_grad");
  if (gn != n || ho > hx || wo > wx) {
    throw ShapeError("conv_weight_grad: " + to_string(x.shape()) + " and " + to_string(g.shape()) +
                     " do not conform");
  }
  const std::size_t kh = hx - ho + 1, kw = wx - wo + 1;
  std::vector<double> out(co * ci * kh * kw, 0.0);
  const auto dx = x.data();
  const auto dg = g.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      const double* go = dg.data() + (b * co + o) * ho * wo;
      for (std::size_t c = 0; c < ci; ++c) {
        const double* xc = dx.data() + (b * ci + c) * hx * wx;
        for (std::size_t u = 0; u < kh; ++u) {
          for (std::size_t v = 0; v < kw; ++v) {
            // four independent partial sums keep the reduction pipelined
            double s[4] = {0.0, 0.0, 0.0, 0.0};
            for (std::size_t i = 0; i < ho; ++i) {
              const double* grow = go + i * wo;
              const double* xrow = xc + (i + u) * wx + v;
              std::size_t j = 0;
              for (; j + 4 <= wo; j += 4) {
                s[0] += grow[j] * xrow[j];
                s[1] += grow[j + 1] * xrow[j + 1];
                s[2] += grow[j + 2] * xrow[j + 2];
                s[3] += grow[j + 3] * xrow[j + 3];
              }
              for (; j < wo; ++j) s[j % 4] += grow[j] * xrow[j];
            }
            out[((o * ci + c) * kh + u) * kw + v] += (s[0] + s[1]) + (s[2] + s[3]);
          }
        }
      }
    }
  }
  return detail::finish(OpKind::ConvWeightGrad, {co, ci, kh, kw}, std::move(out), {x, g}, [x, g](const Tensor&) {
    return [x, g](const Tensor& u) -> std::vector<Tensor> {
      return {conv_input_grad(g, u), conv_valid(x, u)};
    };
  });
}

/// Same-size convolution with reflect padding; kernels must be odd.
inline Tensor conv2d(const Tensor& x, const Tensor& w) {
  detail::require_rank(w, 4, "conv2d");
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0 || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: kernel must be square and odd, got " + to_string(w.shape()));
  }
  return conv_valid(reflect_pad(x, w.dim(2) / 2), w);
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = conv2d(x, w);
  return add(y, bias_broadcast(bias, y.shape()));
}

/// b [C] -> shape [N,C,H,W], constant over batch and pixels.
inline Tensor bias_broadcast(const Tensor& b, const Shape& shape) {
  detail::require_rank(b, 1, "bias_broadcast");
  if (shape.size() != 4 || shape[1] != b.dim(0)) {
    throw ShapeError("bias_broadcast: bias " + to_string(b.shape()) + " does not match " + to_string(shape));
  }
  const std::size_t n = shape[0], c = shape[1], plane = shape[2] * shape[3];
  std::vector<double> out(n * c * plane);
  const auto d = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((i * c + k) * plane), plane, d[k]);
  }
  return detail::finish(OpKind::BiasBroadcast, shape, std::move(out), {b}, [](const Tensor&) {
    return [](const Tensor& g) -> std::vector<Tensor> { return {bias_reduce(g)}; };
  });
}

/// [N,C,H,W] -> [C], summing over batch and pixels.
inline Tensor bias_reduce(const Tensor& g) {
  const auto [n, c, h, w] = detail::dims4(g, "bias_reduce");
  std::vector<double> out(c, 0.0);
  const auto d = g.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double* p = d.data() + (i * c + k) * h * w;
      double s = 0.0;
      for (std::size_t q = 0; q < h * w; ++q) s += p[q];
      out[k] += s;
    }
  }
  const Shape shape = g.shape();
  return detail::finish(OpKind::BiasReduce, {c}, std::move(out), {g}, [shape](const Tensor&) {
    return [shape](const Tensor& u) -> std::vector<Tensor> { return {bias_broadcast(u, shape)}; };
  });
}

/// [N,C,H,W] -> [N,1,H,W].
inline Tensor channel_sum(const Tensor& x) {
  const auto [n, c, h, w] = detail::dims4(x, "channel_sum");
  const std::size_t plane = h * w;
  std::vector<double> out(n * plane, 0.0);
  const auto d = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double* p = d.data() + (i * c + k) * plane;
      double* o = out.data() + i * plane;
      for (std::size_t q = 0; q < plane; ++q) o[q] += p[q];
    }
  }
  const std::size_t channels = c;
  return detail::finish(OpKind::ChannelSum, {n, 1, h, w}, std::move(out), {x}, [channels](const Tensor&) {
    return [channels](const Tensor& g) -> std::vector<Tensor> { return {channel_broadcast(g, channels)}; };
  });
}

/// [N,1,H,W] -> [N,C,H,W].
inline Tensor channel_broadcast(const Tensor& x, std::size_t channels) {
  const auto [n, c, h, w] = detail::dims4(x, "channel_broadcast");
  if (c != 1) throw ShapeError("channel_broadcast: expected one channel, got " + to_string(x.shape()));
  const std::size_t plane = h * w;
  std::vector<double> out(n * channels * plane);
  const auto d = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < channels; ++k) {
      std::copy_n(d.data() + i * plane, plane, out.begin() + static_cast<std::ptrdiff_t>((i * channels + k) * plane));
    }
  }
  return detail::finish(OpKind::ChannelBroadcast, {n, channels, h, w}, std::move(out), {x}, [](const Tensor&) {
    return [](const Tensor& g) -> std::vector<Tensor> { return {channel_sum(g)}; };
  });
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const auto [n, ca, h, w] = detail::dims4(a, "concat");
  const auto [nb, cb, hb, wb] = detail::dims4(b, "concat");
  if (nb != n || hb != h || wb != w) {
    throw ShapeError("concat: " + to_string(a.shape()) + " and " + to_string(b.shape()) + " do not conform");
  }
  const std::size_t plane = h * w, c = ca + cb;
  std::vector<double> out(n * c * plane);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(da.data() + i * ca * plane, ca * plane, out.begin() + static_cast<std::ptrdiff_t>(i * c * plane));
    std::copy_n(db.data() + i * cb * plane, cb * plane,
                out.begin() + static_cast<std::ptrdiff_t>((i * c + ca) * plane));
  }
  const std::size_t first = ca, second = cb;
  return detail::finish(OpKind::Concat, {n, c, h, w}, std::move(out), {a, b}, [first, second](const Tensor&) {
    return [first, second](const Tensor& g) -> std::vector<Tensor> {
      return {slice_channels(g, 0, first), slice_channels(g, first, second)};
    };
  });
}

inline Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count) {
  const auto [n, c, h, w] = detail::dims4(x, "slice_channels");
  if (count == 0 || start + count > c) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside " + to_string(x.shape()));
  }
  const std::size_t plane = h * w;
  std::vector<double> out(n * count * plane);
  const auto d = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(d.data() + (i * c + start) * plane, count * plane,
                out.begin() + static_cast<std::ptrdiff_t>(i * count * plane));
  }
  return detail::finish(OpKind::SliceChannels, {n, count, h, w}, std::move(out), {x}, [start, c](const Tensor&) {
    return [start, c](const Tensor& g) -> std::vector<Tensor> { return {embed_channels(g, start, c)}; };
  });
}

/// Adjoint of slice_channels: places x at channel offset `start` in a zero tensor.
inline Tensor embed_channels(const Tensor& x, std::size_t start, std::size_t total) {
  const auto [n, c, h, w] = detail::dims4(x, "embed_channels");
  if (start + c > total) throw ShapeError("embed_channels: channels exceed total");
  const std::size_t plane = h * w;
  std::vector<double> out(n * total * plane, 0.0);
  const auto d = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(d.data() + i * c * plane, c * plane,
                out.begin() + static_cast<std::ptrdiff_t>((i * total + start) * plane));
  }
  const std::size_t count = c;
  return detail::finish(OpKind::EmbedChannels, {n, total, h, w}, std::move(out), {x}, [start, count](const Tensor&) {
    return [start, count](const Tensor& g) -> std::vector<Tensor> { return {slice_channels(g, start, count)}; };
  });
}

/// Softmax across the channel axis at every pixel.
inline Tensor softmax_channels(const Tensor& x) {
  const auto [n, c, h, w] = detail::dims4(x, "softmax");
  const std::size_t plane = h * w;
  std::vector<double> out(x.numel());
  const auto d = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = d.data() + i * c * plane;
    double* dst = out.data() + i * c * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      double mx = src[q];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, src[k * plane + q]);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double e = std::exp(src[k * plane + q] - mx);
        dst[k * plane + q] = e;
        z += e;
      }
      for (std::size_t k = 0; k < c; ++k) dst[k * plane + q] /= z;
    }
  }
  const std::size_t channels = c;
  return detail::finish(OpKind::Softmax, x.shape(), std::move(out), {x}, [channels](const Tensor& y) {
    return [y, channels](const Tensor& g) -> std::vector<Tensor> {
      return {mul(y, sub(g, channel_broadcast(channel_sum(mul(g, y)), channels)))};
    };
  });
}

/// Mean per-pixel cross-entropy of logits [N,C,H,W] against labels [N,H,W].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const auto [n, c, h, w] = detail::dims4(logits, "cross_entropy");
  const std::size_t plane = h * w;
  if (labels.size() != n * plane) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
    }
  }
  const auto d = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = d.data() + i * c * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      double mx = src[q];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, src[k * plane + q]);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) z += std::exp(src[k * plane + q] - mx);
      const auto label = static_cast<std::size_t>(labels[i * plane + q]);
      total += mx + std::log(z) - src[label * plane + q];
    }
  }
  const double count = static_cast<double>(n * plane);
  return detail::finish(OpKind::CrossEntropy, {1}, {total / count}, {logits}, [&](const Tensor&) {
    std::vector<double> onehot(logits.numel(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < plane; ++q) {
        onehot[(i * c + static_cast<std::size_t>(labels[i * plane + q])) * plane + q] = 1.0;
      }
    }
    Tensor target(logits.shape(), std::move(onehot));
    Tensor x = logits;
    return [x, target, count](const Tensor& g) -> std::vector<Tensor> {
      return {mul(g, scale(sub(softmax_channels(x), target), 1.0 / count))};
    };
  });
}

}  // namespace tdfusion::autodiff
