#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "turbdet/core/error.hpp"
#include "turbdet/kernels/kernels.hpp"
#include "turbdet/nn/autograd.hpp"

namespace turbdet::nn {

namespace K = turbdet::kernels;

namespace {

bool preq(Node& n, size_t i) { return n.parents[i]->requires_grad; }
Tensor& pgrad(Node& n, size_t i) { return n.parents[i]->ensure_grad(); }

struct ConvDims {
  int64_t C, T, H, W, OC, kt, kh, kw, taps;
  int pt, ph, pw;
};

// im2col over a contiguous run of output rows [(t0,y0) .. ) covering
// `rows` W-wide rows. col is (C*kt*kh*kw, rows*W). Interior x-runs are
// memcpy'd, out-of-bounds taps zero-filled.
void im2col_rows(const float* x, const ConvDims& d, int64_t row0, int64_t rows,
                 float* col) {
  const int64_t B = rows * d.W;
  int64_t r = 0;
  for (int64_t c = 0; c < d.C; ++c) {
    const float* xc = x + c * d.T * d.H * d.W;
    for (int64_t a = 0; a < d.kt; ++a)
      for (int64_t u = 0; u < d.kh; ++u)
        for (int64_t v = 0; v < d.kw; ++v, ++r) {
          float* dst = col + r * B;
          for (int64_t rr = 0; rr < rows; ++rr) {
            const int64_t orow = row0 + rr;
            const int64_t t = orow / d.H, y = orow % d.H;
            const int64_t ts = t + a - d.pt;
            const int64_t ys = y + u - d.ph;
            float* drow = dst + rr * d.W;
            if (ts < 0 || ts >= d.T || ys < 0 || ys >= d.H) {
              std::memset(drow, 0, static_cast<size_t>(d.W) * sizeof(float));
              continue;
            }
            const float* srow = xc + (ts * d.H + ys) * d.W;
            const int64_t shift = v - d.pw;  // xs = x + shift
            const int64_t x_lo = std::max<int64_t>(0, -shift);
            const int64_t x_hi = std::min<int64_t>(d.W, d.W - shift);
            if (x_lo > 0) std::memset(drow, 0, static_cast<size_t>(x_lo) * sizeof(float));
            if (x_hi > x_lo)
              std::memcpy(drow + x_lo, srow + x_lo + shift,
                          static_cast<size_t>(x_hi - x_lo) * sizeof(float));
            if (x_hi < d.W)
              std::memset(drow + std::max<int64_t>(x_hi, 0), 0,
                          static_cast<size_t>(d.W - std::max<int64_t>(x_hi, 0)) * sizeof(float));
          }
        }
  }
}

// Adjoint of im2col_rows: scatter col gradients back into gx.
void col2im_rows(const float* col, const ConvDims& d, int64_t row0, int64_t rows,
                 float* gx) {
  const int64_t B = rows * d.W;
  int64_t r = 0;
  for (int64_t c = 0; c < d.C; ++c) {
    float* gc = gx + c * d.T * d.H * d.W;
    for (int64_t a = 0; a < d.kt; ++a)
      for (int64_t u = 0; u < d.kh; ++u)
        for (int64_t v = 0; v < d.kw; ++v, ++r) {
          const float* src = col + r * B;
          for (int64_t rr = 0; rr < rows; ++rr) {
            const int64_t orow = row0 + rr;
            const int64_t t = orow / d.H, y = orow % d.H;
            const int64_t ts = t + a - d.pt;
            const int64_t ys = y + u - d.ph;
            if (ts < 0 || ts >= d.T || ys < 0 || ys >= d.H) continue;
            float* drow = gc + (ts * d.H + ys) * d.W;
            const float* srow = src + rr * d.W;
            const int64_t shift = v - d.pw;
            const int64_t x_lo = std::max<int64_t>(0, -shift);
            const int64_t x_hi = std::min<int64_t>(d.W, d.W - shift);
            if (x_hi > x_lo)
              K::vaxpy(1.0f, srow + x_lo, drow + x_lo + shift, x_hi - x_lo);
          }
        }
  }
}

int64_t conv_block_rows(const ConvDims& d) {
  // Cap the im2col buffer around 32 MB.
  const int64_t budget = (32ll << 20) / static_cast<int64_t>(sizeof(float));
  const int64_t per_row = d.taps * d.W;
  return std::max<int64_t>(1, std::min<int64_t>(d.T * d.H, budget / std::max<int64_t>(per_row, 1)));
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, int pt, int ph, int pw) {
  if (x.value().ndim() != 4 || w.value().ndim() != 5)
    throw ShapeError("conv3d: expects x (C,T,H,W), w (OC,C,kt,kh,kw)");
  if (x.dim(0) != w.dim(1)) throw ShapeError("conv3d: channel mismatch");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
             w.dim(2), w.dim(3), w.dim(4), 0, pt, ph, pw};
  d.taps = d.C * d.kt * d.kh * d.kw;
  const int64_t P = d.T * d.H * d.W;
  Tensor y({d.OC, d.T, d.H, d.W});

  const int64_t block = conv_block_rows(d);
  std::vector<float> col(static_cast<size_t>(d.taps * block * d.W));
  for (int64_t row0 = 0; row0 < d.T * d.H; row0 += block) {
    const int64_t rows = std::min<int64_t>(block, d.T * d.H - row0);
    const int64_t B = rows * d.W;
    im2col_rows(x.value().data(), d, row0, rows, col.data());
    K::sgemm(false, false, d.OC, B, d.taps, 1.0f, w.value().data(), d.taps, col.data(), B,
             0.0f, y.data() + row0 * d.W, P);
  }
  if (b.defined() && b.numel() > 0) {
    for (int64_t oc = 0; oc < d.OC; ++oc) {
      float* yc = y.data() + oc * P;
      const float bv = b.value()[oc];
      for (int64_t i = 0; i < P; ++i) yc[i] += bv;
    }
  }

  Tensor xv = x.value(), wv = w.value();
  const bool has_bias = b.defined() && b.numel() > 0;
  std::vector<Var> parents = has_bias ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(
      std::move(y), parents,
      [xv, wv, d, P, has_bias](Node& n) {
        const Tensor& gy = n.grad;
        const int64_t block = conv_block_rows(d);
        std::vector<float> col(static_cast<size_t>(d.taps * block * d.W));
        std::vector<float> gcol(static_cast<size_t>(d.taps * block * d.W));
        const bool need_gx = preq(n, 0);
        const bool need_gw = preq(n, 1);
        for (int64_t row0 = 0; row0 < d.T * d.H; row0 += block) {
          const int64_t rows = std::min<int64_t>(block, d.T * d.H - row0);
          const int64_t B = rows * d.W;
          if (need_gw) {
            im2col_rows(xv.data(), d, row0, rows, col.data());
            K::sgemm(false, true, d.OC, d.taps, B, 1.0f, gy.data() + row0 * d.W, P,
                     col.data(), B, 1.0f, pgrad(n, 1).data(), d.taps);
          }
          if (need_gx) {
            K::sgemm(true, false, d.taps, B, d.OC, 1.0f, wv.data(), d.taps,
                     gy.data() + row0 * d.W, P, 0.0f, gcol.data(), B);
            col2im_rows(gcol.data(), d, row0, rows, pgrad(n, 0).data());
          }
        }
        if (has_bias && preq(n, 2)) {
          float* gb = pgrad(n, 2).data();
          for (int64_t oc = 0; oc < d.OC; ++oc)
            gb[oc] += static_cast<float>(K::vsum(gy.data() + oc * P, P));
        }
      },
      "conv3d");
}

Var maxpool3d_spatial2(const Var& x) {
  const int64_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("maxpool3d_spatial2: H,W must be even");
  const int64_t Ho = H / 2, Wo = W / 2;
  Tensor y({C, T, Ho, Wo});
  std::vector<int32_t> arg(static_cast<size_t>(y.numel()));
  const float* xd = x.value().data();
  int64_t o = 0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t t = 0; t < T; ++t) {
      const float* plane = xd + (c * T + t) * H * W;
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j, ++o) {
          const int64_t base = (2 * i) * W + 2 * j;
          const int64_t cand[4] = {base, base + 1, base + W, base + W + 1};
          int best = 0;
          for (int q = 1; q < 4; ++q)
            if (plane[cand[q]] > plane[cand[best]]) best = q;
          y[o] = plane[cand[best]];
          arg[static_cast<size_t>(o)] = static_cast<int32_t>(cand[best]);
        }
    }
  return make_op(std::move(y), {x},
                 [arg = std::move(arg), C, T, H, W, Ho, Wo](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   int64_t o = 0;
                   for (int64_t c = 0; c < C; ++c)
                     for (int64_t t = 0; t < T; ++t) {
                       float* plane = g + (c * T + t) * H * W;
                       for (int64_t i = 0; i < Ho * Wo; ++i, ++o)
                         plane[arg[static_cast<size_t>(o)]] += n.grad[o];
                     }
                 },
                 "maxpool3d");
}

namespace {

struct LerpTap {
  int64_t i0, i1;
  float w0, w1;
};

// align_corners=false mapping for exact x2 upsampling with edge clamp.
std::vector<LerpTap> up2_taps(int64_t in, int64_t out) {
  std::vector<LerpTap> taps(static_cast<size_t>(out));
  for (int64_t o = 0; o < out; ++o) {
    const float s = (static_cast<float>(o) + 0.5f) / 2.0f - 0.5f;
    const float sc = std::min(std::max(s, 0.0f), static_cast<float>(in - 1));
    const int64_t i0 = static_cast<int64_t>(sc);
    const int64_t i1 = std::min(i0 + 1, in - 1);
    const float a = sc - static_cast<float>(i0);
    taps[static_cast<size_t>(o)] = {i0, i1, 1.0f - a, a};
  }
  return taps;
}

}  // namespace

Var upsample_trilinear_spatial2(const Var& x) {
  const int64_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H * 2, Wo = W * 2;
  Tensor y({C, T, Ho, Wo});
  const auto ty = up2_taps(H, Ho), tx = up2_taps(W, Wo);
  const float* xd = x.value().data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t t = 0; t < T; ++t) {
      const float* plane = xd + (c * T + t) * H * W;
      float* oplane = y.data() + (c * T + t) * Ho * Wo;
      for (int64_t i = 0; i < Ho; ++i) {
        const auto& py = ty[static_cast<size_t>(i)];
        for (int64_t j = 0; j < Wo; ++j) {
          const auto& px = tx[static_cast<size_t>(j)];
          oplane[i * Wo + j] = py.w0 * (px.w0 * plane[py.i0 * W + px.i0] +
                                        px.w1 * plane[py.i0 * W + px.i1]) +
                               py.w1 * (px.w0 * plane[py.i1 * W + px.i0] +
                                        px.w1 * plane[py.i1 * W + px.i1]);
        }
      }
    }
  return make_op(std::move(y), {x},
                 [C, T, H, W, Ho, Wo, ty, tx](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t c = 0; c < C; ++c)
                     for (int64_t t = 0; t < T; ++t) {
                       float* gplane = g + (c * T + t) * H * W;
                       const float* gy = n.grad.data() + (c * T + t) * Ho * Wo;
                       for (int64_t i = 0; i < Ho; ++i) {
                         const auto& py = ty[static_cast<size_t>(i)];
                         for (int64_t j = 0; j < Wo; ++j) {
                           const auto& px = tx[static_cast<size_t>(j)];
                           const float gv = gy[i * Wo + j];
                           gplane[py.i0 * W + px.i0] += py.w0 * px.w0 * gv;
                           gplane[py.i0 * W + px.i1] += py.w0 * px.w1 * gv;
                           gplane[py.i1 * W + px.i0] += py.w1 * px.w0 * gv;
                           gplane[py.i1 * W + px.i1] += py.w1 * px.w1 * gv;
                         }
                       }
                     }
                 },
                 "upsample2x");
}

Var avgpool2d(const Var& x, int k) {
  if (x.value().ndim() != 3) throw ShapeError("avgpool2d: expects (C,H,W)");
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % k != 0 || W % k != 0) throw ShapeError("avgpool2d: size not divisible by k");
  const int64_t Ho = H / k, Wo = W / k;
  Tensor y({C, Ho, Wo});
  const float inv = 1.0f / static_cast<float>(k * k);
  for (int64_t c = 0; c < C; ++c) {
    const float* plane = x.value().data() + c * H * W;
    for (int64_t i = 0; i < Ho; ++i)
      for (int64_t j = 0; j < Wo; ++j) {
        double acc = 0.0;
        for (int64_t u = 0; u < k; ++u)
          for (int64_t v = 0; v < k; ++v) acc += plane[(i * k + u) * W + j * k + v];
        y.at({c, i, j}) = static_cast<float>(acc) * inv;
      }
  }
  return make_op(std::move(y), {x},
                 [C, H, W, Ho, Wo, k, inv](Node& n) {
                   if (!preq(n, 0)) return;
                   float* g = pgrad(n, 0).data();
                   for (int64_t c = 0; c < C; ++c)
                     for (int64_t i = 0; i < Ho; ++i)
                       for (int64_t j = 0; j < Wo; ++j) {
                         const float gv = n.grad[(c * Ho + i) * Wo + j] * inv;
                         for (int64_t u = 0; u < k; ++u)
                           for (int64_t v = 0; v < k; ++v)
                             g[c * H * W + (i * k + u) * W + j * k + v] += gv;
                       }
                 },
                 "avgpool2d");
}

}  // namespace turbdet::nn
