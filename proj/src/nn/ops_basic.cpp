#include <algorithm>
#include <cmath>

#include "turbdet/core/error.hpp"
#include "turbdet/kernels/kernels.hpp"
#include "turbdet/nn/autograd.hpp"

namespace turbdet::nn {

namespace K = turbdet::kernels;

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                     " vs " + b.value().shape_str());
}

bool preq(Node& n, size_t i) { return n.parents[i]->requires_grad; }
Tensor& pgrad(Node& n, size_t i) { return n.parents[i]->ensure_grad(); }

// (outer, axis_len, inner) decomposition for axis-wise ops.
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_axis(const std::vector<int64_t>& shape, int64_t axis) {
  AxisSplit s;
  for (int64_t i = 0; i < static_cast<int64_t>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<size_t>(i)];
    else if (i == axis) s.len = shape[static_cast<size_t>(i)];
    else s.inner *= shape[static_cast<size_t>(i)];
  }
  return s;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor y(a.shape());
  K::vadd(a.value().data(), b.value().data(), y.data(), y.numel());
  return make_op(std::move(y), {a, b},
                 [](Node& n) {
                   const Tensor& gy = n.grad;
                   if (preq(n, 0)) K::vaxpy(1.0f, gy.data(), pgrad(n, 0).data(), gy.numel());
                   if (preq(n, 1)) K::vaxpy(1.0f, gy.data(), pgrad(n, 1).data(), gy.numel());
                 },
                 "add");
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor y(a.shape());
  K::vsub(a.value().data(), b.value().data(), y.data(), y.numel());
  return make_op(std::move(y), {a, b},
                 [](Node& n) {
                   const Tensor& gy = n.grad;
                   if (preq(n, 0)) K::vaxpy(1.0f, gy.data(), pgrad(n, 0).data(), gy.numel());
                   if (preq(n, 1)) K::vaxpy(-1.0f, gy.data(), pgrad(n, 1).data(), gy.numel());
                 },
                 "sub");
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor y(a.shape());
  K::vmul(a.value().data(), b.value().data(), y.data(), y.numel());
  Tensor av = a.value(), bv = b.value();
  return make_op(std::move(y), {a, b},
                 [av, bv](Node& n) {
                   const Tensor& gy = n.grad;
                   const int64_t m = gy.numel();
                   if (preq(n, 0)) {
                     float* g = pgrad(n, 0).data();
                     for (int64_t i = 0; i < m; ++i) g[i] += gy[i] * bv[i];
                   }
                   if (preq(n, 1)) {
                     float* g = pgrad(n, 1).data();
                     for (int64_t i = 0; i < m; ++i) g[i] += gy[i] * av[i];
                   }
                 },
                 "mul");
}

Var div_ew(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor y(a.shape());
  const int64_t m = y.numel();
  for (int64_t i = 0; i < m; ++i) y[i] = a.value()[i] / b.value()[i];
  Tensor av = a.value(), bv = b.value();
  return make_op(std::move(y), {a, b},
                 [av, bv](Node& n) {
                   const Tensor& gy = n.grad;
                   const int64_t m = gy.numel();
                   if (preq(n, 0)) {
                     float* g = pgrad(n, 0).data();
                     for (int64_t i = 0; i < m; ++i) g[i] += gy[i] / bv[i];
                   }
                   if (preq(n, 1)) {
                     float* g = pgrad(n, 1).data();
                     for (int64_t i = 0; i < m; ++i)
                       g[i] -= gy[i] * av[i] / (bv[i] * bv[i]);
                   }
                 },
                 "div");
}

namespace {

Var minmax_impl(const Var& a, const Var& b, bool is_min) {
  check_same_shape(a, b, "min/max");
  Tensor y(a.shape());
  const int64_t m = y.numel();
  // a wins ties so the subgradient choice is deterministic.
  std::vector<uint8_t> a_side(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const bool pick_a = is_min ? (a.value()[i] <= b.value()[i]) : (a.value()[i] >= b.value()[i]);
    a_side[static_cast<size_t>(i)] = pick_a;
    y[i] = pick_a ? a.value()[i] : b.value()[i];
  }
  return make_op(std::move(y), {a, b},
                 [a_side = std::move(a_side)](Node& n) {
                   const Tensor& gy = n.grad;
                   const int64_t m = gy.numel();
                   if (preq(n, 0)) {
                     float* g = pgrad(n, 0).data();
                     for (int64_t i = 0; i < m; ++i)
                       if (a_side[static_cast<size_t>(i)]) g[i] += gy[i];
                   }
                   if (preq(n, 1)) {
                     float* g = pgrad(n, 1).data();
                     for (int64_t i = 0; i < m; ++i)
                       if (!a_side[static_cast<size_t>(i)]) g[i] += gy[i];
                   }
                 },
                 is_min ? "min" : "max");
}

}  // namespace

Var min_ew(const Var& a, const Var& b) { return minmax_impl(a, b, true); }
Var max_ew(const Var& a, const Var& b) { return minmax_impl(a, b, false); }

Var scale(const Var& x, float s) {
  Tensor y(x.shape());
  K::vscale(x.value().data(), s, y.data(), y.numel());
  return make_op(std::move(y), {x},
                 [s](Node& n) {
                   if (preq(n, 0)) K::vaxpy(s, n.grad.data(), pgrad(n, 0).data(), n.grad.numel());
                 },
                 "scale");
}

Var add_scalar(const Var& x, float s) {
  Tensor y(x.shape());
  const int64_t m = y.numel();
  for (int64_t i = 0; i < m; ++i) y[i] = x.value()[i] + s;
  return make_op(std::move(y), {x},
                 [](Node& n) {
                   if (preq(n, 0)) K::vaxpy(1.0f, n.grad.data(), pgrad(n, 0).data(), n.grad.numel());
                 },
                 "add_scalar");
}

Var neg(const Var& x) { return scale(x, -1.0f); }

Var relu(const Var& x) {
  Tensor y(x.shape());
  K::vrelu(x.value().data(), y.data(), y.numel());
  Tensor xv = x.value();
  return make_op(std::move(y), {x},
                 [xv](Node& n) {
                   if (preq(n, 0))
                     K::vrelu_bwd(xv.data(), n.grad.data(), pgrad(n, 0).data(), n.grad.numel());
                 },
                 "relu");
}

Var sigmoid(const Var& x) {
  Tensor y(x.shape());
  const int64_t m = y.numel();
  for (int64_t i = 0; i < m; ++i) {
    const float v = x.value()[i];
    y[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                     : std::exp(v) / (1.0f + std::exp(v));
  }
  Tensor yv = y;
  return make_op(std::move(y), {x},
                 [yv](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   const int64_t m = n.grad.numel();
                   for (int64_t i = 0; i < m; ++i) g[i] += n.grad[i] * yv[i] * (1.0f - yv[i]);
                 },
                 "sigmoid");
}

Var softplus(const Var& x) {
  Tensor y(x.shape());
  const int64_t m = y.numel();
  for (int64_t i = 0; i < m; ++i) {
    const float v = x.value()[i];
    y[i] = v > 20.0f ? v : std::log1p(std::exp(v));
  }
  Tensor xv = x.value();
  return make_op(std::move(y), {x},
                 [xv](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   const int64_t m = n.grad.numel();
                   for (int64_t i = 0; i < m; ++i) {
                     const float v = xv[i];
                     const float sig = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                                                 : std::exp(v) / (1.0f + std::exp(v));
                     g[i] += n.grad[i] * sig;
                   }
                 },
                 "softplus");
}

Var exp_op(const Var& x) {
  Tensor y(x.shape());
  K::vexp(x.value().data(), y.data(), y.numel());
  Tensor yv = y;
  return make_op(std::move(y), {x},
                 [yv](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * yv[i];
                 },
                 "exp");
}

Var log_op(const Var& x) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::log(x.value()[i]);
  Tensor xv = x.value();
  return make_op(std::move(y), {x},
                 [xv](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] / xv[i];
                 },
                 "log");
}

Var pow_const(const Var& x, float p) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::pow(x.value()[i], p);
  Tensor xv = x.value();
  return make_op(std::move(y), {x},
                 [xv, p](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t i = 0; i < n.grad.numel(); ++i)
                     g[i] += n.grad[i] * p * std::pow(xv[i], p - 1.0f);
                 },
                 "pow");
}

Var abs_op(const Var& x) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::abs(x.value()[i]);
  Tensor xv = x.value();
  return make_op(std::move(y), {x},
                 [xv](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t i = 0; i < n.grad.numel(); ++i)
                     g[i] += xv[i] > 0.0f ? n.grad[i] : (xv[i] < 0.0f ? -n.grad[i] : 0.0f);
                 },
                 "abs");
}

Var clamp(const Var& x, float lo, float hi) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i)
    y[i] = std::min(std::max(x.value()[i], lo), hi);
  Tensor xv = x.value();
  return make_op(std::move(y), {x},
                 [xv, lo, hi](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t i = 0; i < n.grad.numel(); ++i)
                     if (xv[i] >= lo && xv[i] <= hi) g[i] += n.grad[i];
                 },
                 "clamp");
}

Var detach(const Var& x) { return Var::constant(x.value()); }

Var mean_all(const Var& x) {
  Tensor y({1});
  const int64_t m = x.numel();
  y[0] = static_cast<float>(K::vsum(x.value().data(), m) / static_cast<double>(m));
  return make_op(std::move(y), {x},
                 [m](Node& n) {
                   if (!preq(n, 0)) return;
                   const float g = n.grad[0] / static_cast<float>(m);
                   float* gx = pgrad(n, 0).data();
                   for (int64_t i = 0; i < m; ++i) gx[i] += g;
                 },
                 "mean");
}

Var sum_all(const Var& x) {
  Tensor y({1});
  y[0] = static_cast<float>(K::vsum(x.value().data(), x.numel()));
  const int64_t m = x.numel();
  return make_op(std::move(y), {x},
                 [m](Node& n) {
                   if (!preq(n, 0)) return;
                   const float g = n.grad[0];
                   float* gx = pgrad(n, 0).data();
                   for (int64_t i = 0; i < m; ++i) gx[i] += g;
                 },
                 "sum");
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return make_op(std::move(y), {x},
                 [](Node& n) {
                   if (preq(n, 0)) K::vaxpy(1.0f, n.grad.data(), pgrad(n, 0).data(), n.grad.numel());
                 },
                 "reshape");
}

namespace {

void permute_copy(const Tensor& src, const std::vector<int64_t>& axes, Tensor& dst,
                  bool accumulate_into_dst) {
  const int64_t nd = src.ndim();
  std::vector<int64_t> sstride(static_cast<size_t>(nd), 1);
  for (int64_t i = nd - 2; i >= 0; --i)
    sstride[static_cast<size_t>(i)] = sstride[static_cast<size_t>(i + 1)] * src.dim(i + 1);
  std::vector<int64_t> oshape(static_cast<size_t>(nd));
  std::vector<int64_t> ostride_in_src(static_cast<size_t>(nd));
  for (int64_t i = 0; i < nd; ++i) {
    oshape[static_cast<size_t>(i)] = src.dim(axes[static_cast<size_t>(i)]);
    ostride_in_src[static_cast<size_t>(i)] = sstride[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  }
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  const int64_t total = src.numel();
  const float* s = src.data();
  float* d = dst.data();
  int64_t soff = 0;
  for (int64_t o = 0; o < total; ++o) {
    if (accumulate_into_dst) d[o] += s[soff];
    else d[o] = s[soff];
    for (int64_t ax = nd - 1; ax >= 0; --ax) {
      idx[static_cast<size_t>(ax)]++;
      soff += ostride_in_src[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < oshape[static_cast<size_t>(ax)]) break;
      soff -= ostride_in_src[static_cast<size_t>(ax)] * oshape[static_cast<size_t>(ax)];
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
}

}  // namespace

Var permute(const Var& x, std::vector<int64_t> axes) {
  const int64_t nd = x.value().ndim();
  if (static_cast<int64_t>(axes.size()) != nd) throw ShapeError("permute: axes rank mismatch");
  std::vector<int64_t> oshape(static_cast<size_t>(nd));
  for (int64_t i = 0; i < nd; ++i) oshape[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  Tensor y(oshape);
  permute_copy(x.value(), axes, y, false);
  // Backward permutes the gradient with the inverse axis map.
  std::vector<int64_t> inv(static_cast<size_t>(nd));
  for (int64_t i = 0; i < nd; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
  return make_op(std::move(y), {x},
                 [inv](Node& n) {
                   if (!preq(n, 0)) return;
                   Tensor tmp(n.parents[0]->value.shape());
                   permute_copy(n.grad, inv, tmp, false);
                   K::vaxpy(1.0f, tmp.data(), pgrad(n, 0).data(), tmp.numel());
                 },
                 "permute");
}

Var narrow(const Var& x, int64_t axis, int64_t start, int64_t len) {
  const auto sp = split_axis(x.shape(), axis);
  if (start < 0 || start + len > sp.len) throw ShapeError("narrow: range out of bounds");
  std::vector<int64_t> oshape = x.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Tensor y(oshape);
  const float* s = x.value().data();
  float* d = y.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    std::copy(s + (o * sp.len + start) * sp.inner, s + (o * sp.len + start + len) * sp.inner,
              d + o * len * sp.inner);
  return make_op(std::move(y), {x},
                 [sp, start, len](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   const float* gy = n.grad.data();
                   for (int64_t o = 0; o < sp.outer; ++o) {
                     float* dst = g + (o * sp.len + start) * sp.inner;
                     const float* src = gy + o * len * sp.inner;
                     K::vaxpy(1.0f, src, dst, len * sp.inner);
                   }
                 },
                 "narrow");
}

Var concat(const std::vector<Var>& xs, int64_t axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  std::vector<int64_t> oshape = xs[0].shape();
  int64_t total_len = 0;
  for (const auto& x : xs) total_len += x.dim(axis);
  oshape[static_cast<size_t>(axis)] = total_len;
  Tensor y(oshape);
  const auto osp = split_axis(oshape, axis);
  std::vector<int64_t> lens, offs;
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t l = x.dim(axis);
    lens.push_back(l);
    offs.push_back(off);
    const float* s = x.value().data();
    for (int64_t o = 0; o < osp.outer; ++o)
      std::copy(s + o * l * osp.inner, s + (o + 1) * l * osp.inner,
                y.data() + (o * total_len + off) * osp.inner);
    off += l;
  }
  return make_op(std::move(y), xs,
                 [osp, lens, offs, total_len](Node& n) {
                   const float* gy = n.grad.data();
                   for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                     if (!preq(n, pi)) continue;
                     float* g = pgrad(n, pi).data();
                     const int64_t l = lens[pi];
                     for (int64_t o = 0; o < osp.outer; ++o)
                       K::vaxpy(1.0f, gy + (o * total_len + offs[pi]) * osp.inner,
                                g + o * l * osp.inner, l * osp.inner);
                   }
                 },
                 "concat");
}

namespace {

void flip_copy(const Tensor& src, const std::vector<int64_t>& axes, Tensor& dst) {
  const int64_t nd = src.ndim();
  std::vector<bool> flipped(static_cast<size_t>(nd), false);
  for (int64_t a : axes) flipped[static_cast<size_t>(a)] = true;
  std::vector<int64_t> stride(static_cast<size_t>(nd), 1);
  for (int64_t i = nd - 2; i >= 0; --i)
    stride[static_cast<size_t>(i)] = stride[static_cast<size_t>(i + 1)] * src.dim(i + 1);
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  const int64_t total = src.numel();
  for (int64_t o = 0; o < total; ++o) {
    int64_t soff = 0;
    for (int64_t a = 0; a < nd; ++a) {
      const int64_t v = flipped[static_cast<size_t>(a)]
                            ? src.dim(a) - 1 - idx[static_cast<size_t>(a)]
                            : idx[static_cast<size_t>(a)];
      soff += v * stride[static_cast<size_t>(a)];
    }
    dst[o] = src[soff];
    for (int64_t ax = nd - 1; ax >= 0; --ax) {
      if (++idx[static_cast<size_t>(ax)] < src.dim(ax)) break;
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
}

}  // namespace

Var flip(const Var& x, const std::vector<int64_t>& axes) {
  Tensor y(x.shape());
  flip_copy(x.value(), axes, y);
  return make_op(std::move(y), {x},
                 [axes](Node& n) {
                   if (!preq(n, 0)) return;
                   Tensor tmp(n.grad.shape());
                   flip_copy(n.grad, axes, tmp);
                   K::vaxpy(1.0f, tmp.data(), pgrad(n, 0).data(), tmp.numel());
                 },
                 "flip");
}

Var select_rows(const Var& x, const std::vector<int64_t>& rows) {
  const auto sp = split_axis(x.shape(), 0);
  std::vector<int64_t> oshape = x.shape();
  oshape[0] = static_cast<int64_t>(rows.size());
  Tensor y(oshape);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy(x.value().data() + rows[r] * sp.inner, x.value().data() + (rows[r] + 1) * sp.inner,
              y.data() + static_cast<int64_t>(r) * sp.inner);
  return make_op(std::move(y), {x},
                 [rows, sp](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (size_t r = 0; r < rows.size(); ++r)
                     K::vaxpy(1.0f, n.grad.data() + static_cast<int64_t>(r) * sp.inner,
                              g + rows[r] * sp.inner, sp.inner);
                 },
                 "select_rows");
}

Var add_channel_bias(const Var& x, const Var& b, int64_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  if (b.numel() != sp.len) throw ShapeError("add_channel_bias: bias length mismatch");
  Tensor y = x.value().clone();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t c = 0; c < sp.len; ++c) {
      float* row = y.data() + (o * sp.len + c) * sp.inner;
      const float bv = b.value()[c];
      for (int64_t i = 0; i < sp.inner; ++i) row[i] += bv;
    }
  return make_op(std::move(y), {x, b},
                 [sp](Node& n) {
                   const Tensor& gy = n.grad;
                   if (preq(n, 0)) K::vaxpy(1.0f, gy.data(), pgrad(n, 0).data(), gy.numel());
                   if (preq(n, 1)) {
                     float* gb = pgrad(n, 1).data();
                     for (int64_t o = 0; o < sp.outer; ++o)
                       for (int64_t c = 0; c < sp.len; ++c)
                         gb[c] += static_cast<float>(
                             K::vsum(gy.data() + (o * sp.len + c) * sp.inner, sp.inner));
                   }
                 },
                 "add_channel_bias");
}

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  if (a.value().ndim() != 2 || b.value().ndim() != 2)
    throw ShapeError("matmul: expects 2-D tensors");
  const int64_t m = ta ? a.dim(1) : a.dim(0);
  const int64_t k = ta ? a.dim(0) : a.dim(1);
  const int64_t kb = tb ? b.dim(1) : b.dim(0);
  const int64_t n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) throw ShapeError("matmul: inner dimension mismatch");
  Tensor y({m, n});
  K::sgemm(ta, tb, m, n, k, 1.0f, a.value().data(), a.dim(1), b.value().data(), b.dim(1),
           0.0f, y.data(), n);
  Tensor av = a.value(), bv = b.value();
  return make_op(
      std::move(y), {a, b},
      [av, bv, ta, tb, m, n, k](Node& nd) {
        const Tensor& gy = nd.grad;
        if (preq(nd, 0)) {
          Tensor& ga = pgrad(nd, 0);
          if (!ta) {
            // ga(m,k) += gy(m,n) @ op(B)^T
            K::sgemm(false, !tb, m, k, n, 1.0f, gy.data(), n, bv.data(), bv.dim(1), 1.0f,
                     ga.data(), ga.dim(1));
          } else {
            // stored a is (k,m): ga += op(B) @ gy^T
            K::sgemm(tb, true, k, m, n, 1.0f, bv.data(), bv.dim(1), gy.data(), n, 1.0f,
                     ga.data(), ga.dim(1));
          }
        }
        if (preq(nd, 1)) {
          Tensor& gb = pgrad(nd, 1);
          if (!tb) {
            // gb(k,n) += op(A)^T @ gy
            K::sgemm(!ta, false, k, n, m, 1.0f, av.data(), av.dim(1), gy.data(), n, 1.0f,
                     gb.data(), gb.dim(1));
          } else {
            // stored b is (n,k): gb += gy^T @ op(A)
            K::sgemm(true, ta, n, k, m, 1.0f, gy.data(), n, av.data(), av.dim(1), 1.0f,
                     gb.data(), gb.dim(1));
          }
        }
      },
      "matmul");
}

Var softmax_lastdim(const Var& x) {
  const int64_t nd = x.value().ndim();
  const int64_t cols = x.dim(nd - 1);
  const int64_t rows = x.numel() / cols;
  Tensor y(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x.value().data() + r * cols;
    float* yr = y.data() + r * cols;
    float mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int64_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
  Tensor yv = y;
  return make_op(std::move(y), {x},
                 [yv, rows, cols](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t r = 0; r < rows; ++r) {
                     const float* yr = yv.data() + r * cols;
                     const float* gy = n.grad.data() + r * cols;
                     const double dot = K::vdot(gy, yr, cols);
                     for (int64_t c = 0; c < cols; ++c)
                       g[r * cols + c] += yr[c] * (gy[c] - static_cast<float>(dot));
                   }
                 },
                 "softmax");
}

Var rowmax_lastdim(const Var& x) {
  if (x.value().ndim() != 2) throw ShapeError("rowmax: expects 2-D tensor");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor y({rows});
  std::vector<int64_t> arg(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x.value().data() + r * cols;
    int64_t best = 0;
    for (int64_t c = 1; c < cols; ++c)
      if (xr[c] > xr[best]) best = c;
    arg[static_cast<size_t>(r)] = best;
    y[r] = xr[best];
  }
  return make_op(std::move(y), {x},
                 [arg, cols](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t r = 0; r < n.grad.numel(); ++r)
                     g[r * cols + arg[static_cast<size_t>(r)]] += n.grad[r];
                 },
                 "rowmax");
}

Var charbonnier_loss(const Var& x, const Tensor& target, float eps) {
  if (!x.value().same_shape(target)) throw ShapeError("charbonnier: shape mismatch");
  const int64_t m = x.numel();
  Tensor y({1});
  y[0] = static_cast<float>(K::charbonnier_sum(x.value().data(), target.data(), m, eps) /
                            static_cast<double>(m));
  Tensor xv = x.value(), tv = target;
  return make_op(std::move(y), {x},
                 [xv, tv, eps, m](Node& n) {
                   if (!preq(n, 0)) return;
                   const float g = n.grad[0] / static_cast<float>(m);
                   float* gx = pgrad(n, 0).data();
                   const float e2 = eps * eps;
                   for (int64_t i = 0; i < m; ++i) {
                     const float d = xv[i] - tv[i];
                     gx[i] += g * d / std::sqrt(d * d + e2);
                   }
                 },
                 "charbonnier");
}

}  // namespace turbdet::nn
