#include <cmath>
#include <string>
#include <vector>

#include "turbdet/core/error.hpp"
#include "turbdet/kernels/kernels.hpp"
#include "turbdet/nn/autograd.hpp"

namespace turbdet::nn {

namespace K = turbdet::kernels;

namespace {

bool preq(Node& n, size_t i) { return n.parents[i]->requires_grad; }
Tensor& pgrad(Node& n, size_t i) { return n.parents[i]->ensure_grad(); }

constexpr int64_t kBlock = 64;  // checkpoint interval

// One recurrence step for all (c, n) lanes. The state runs in double and
// abar = exp(delta_k * a) goes through the dispatched vexp_pd kernel, so the
// blocked implementation tracks a plain sequential recurrence to ~1e-12.
void scan_step(int64_t C, int64_t N, const float* a, const float* u_k,
               const float* delta_k, const float* b_k, const float* c_k, double* h,
               float* y_k, double* tmp, double* abar) {
  for (int64_t c = 0; c < C; ++c) {
    const double dk = delta_k[c];
    for (int64_t n = 0; n < N; ++n)
      tmp[c * N + n] = dk * static_cast<double>(a[c * N + n]);
  }
  K::vexp_pd(tmp, abar, C * N);
  for (int64_t c = 0; c < C; ++c) {
    const double du = static_cast<double>(delta_k[c]) * u_k[c];
    double acc = 0.0;
    double* hc = h + c * N;
    const double* ac = abar + c * N;
    for (int64_t n = 0; n < N; ++n) {
      hc[n] = ac[n] * hc[n] + du * b_k[n];
      acc += static_cast<double>(c_k[n]) * hc[n];
    }
    y_k[c] = static_cast<float>(acc);
  }
}

}  // namespace

Var ssm_scan(const Var& u, const Var& delta, const Var& bseq, const Var& cseq,
             const Var& a) {
  if (u.value().ndim() != 2 || delta.value().ndim() != 2 || bseq.value().ndim() != 2 ||
      cseq.value().ndim() != 2 || a.value().ndim() != 2)
    throw ShapeError("ssm_scan: expects 2-D inputs");
  const int64_t L = u.dim(0), C = u.dim(1), N = a.dim(1);
  if (delta.dim(0) != L || delta.dim(1) != C || bseq.dim(0) != L || bseq.dim(1) != N ||
      cseq.dim(0) != L || cseq.dim(1) != N || a.dim(0) != C)
    throw ShapeError("ssm_scan: dimension mismatch");

  Tensor y({L, C});
  const int64_t n_blocks = (L + kBlock - 1) / kBlock;
  // State checkpoints at block starts; backward recomputes inside a block.
  std::vector<double> checkpoints(static_cast<size_t>((n_blocks + 1) * C * N));
  std::vector<double> h(static_cast<size_t>(C * N), 0.0);
  std::vector<double> tmp(static_cast<size_t>(C * N)), abar(static_cast<size_t>(C * N));

  const float* ud = u.value().data();
  const float* dd = delta.value().data();
  const float* bd = bseq.value().data();
  const float* cd = cseq.value().data();
  const float* ad = a.value().data();

  for (int64_t blk = 0; blk < n_blocks; ++blk) {
    std::copy(h.begin(), h.end(), checkpoints.begin() + blk * C * N);
    const int64_t k0 = blk * kBlock, k1 = std::min(L, k0 + kBlock);
    for (int64_t k = k0; k < k1; ++k)
      scan_step(C, N, ad, ud + k * C, dd + k * C, bd + k * N, cd + k * N, h.data(),
                y.data() + k * C, tmp.data(), abar.data());
    for (int64_t c = 0; c < C; ++c)
      for (int64_t n = 0; n < N; ++n)
        if (!std::isfinite(h[static_cast<size_t>(c * N + n)]))
          throw ModelError("ssm_scan: non-finite state in channel " + std::to_string(c));
  }
  std::copy(h.begin(), h.end(), checkpoints.begin() + n_blocks * C * N);

  Tensor uv = u.value(), dv = delta.value(), bv = bseq.value(), cv = cseq.value(),
         av = a.value();
  return make_op(
      std::move(y), {u, delta, bseq, cseq, a},
      [uv, dv, bv, cv, av, checkpoints = std::move(checkpoints), L, C, N,
       n_blocks](Node& nd) {
        const bool ng_u = preq(nd, 0), ng_d = preq(nd, 1), ng_b = preq(nd, 2),
                   ng_c = preq(nd, 3), ng_a = preq(nd, 4);
        float* gu = ng_u ? pgrad(nd, 0).data() : nullptr;
        float* gd = ng_d ? pgrad(nd, 1).data() : nullptr;
        float* gb = ng_b ? pgrad(nd, 2).data() : nullptr;
        float* gc = ng_c ? pgrad(nd, 3).data() : nullptr;
        float* ga = ng_a ? pgrad(nd, 4).data() : nullptr;

        std::vector<double> gh(static_cast<size_t>(C * N), 0.0);
        std::vector<double> hblk(static_cast<size_t>((kBlock + 1) * C * N));
        std::vector<double> ablk(static_cast<size_t>(kBlock * C * N));
        std::vector<double> tmp(static_cast<size_t>(C * N));
        std::vector<float> yk(static_cast<size_t>(C));

        for (int64_t blk = n_blocks - 1; blk >= 0; --blk) {
          const int64_t k0 = blk * kBlock, k1 = std::min(L, k0 + kBlock);
          const int64_t len = k1 - k0;
          std::copy(checkpoints.begin() + blk * C * N,
                    checkpoints.begin() + (blk + 1) * C * N, hblk.begin());
          for (int64_t s = 0; s < len; ++s) {
            std::copy(hblk.begin() + s * C * N, hblk.begin() + (s + 1) * C * N,
                      hblk.begin() + (s + 1) * C * N);
            scan_step(C, N, av.data(), uv.data() + (k0 + s) * C, dv.data() + (k0 + s) * C,
                      bv.data() + (k0 + s) * N, cv.data() + (k0 + s) * N,
                      hblk.data() + (s + 1) * C * N, yk.data(), tmp.data(),
                      ablk.data() + s * C * N);
          }
          for (int64_t s = len - 1; s >= 0; --s) {
            const int64_t k = k0 + s;
            const double* h_prev = hblk.data() + s * C * N;
            const double* h_cur = hblk.data() + (s + 1) * C * N;
            const double* ab = ablk.data() + s * C * N;
            const float* gy = nd.grad.data() + k * C;
            for (int64_t c = 0; c < C; ++c) {
              const double dk = dv[k * C + c];
              const double uk = uv[k * C + c];
              double* ghc = gh.data() + c * N;
              double gd_acc = 0.0, gu_acc = 0.0;
              for (int64_t n = 0; n < N; ++n) {
                // y_k contribution.
                ghc[n] += static_cast<double>(gy[c]) * cv[k * N + n];
                if (ng_c) gc[k * N + n] += static_cast<float>(gy[c] * h_cur[c * N + n]);
                // Through h_k = abar*h_{k-1} + dk*b_k*u_k.
                const double gabar = ghc[n] * h_prev[c * N + n];
                const double aval = av[c * N + n];
                const double abv = ab[c * N + n];
                if (ng_d) gd_acc += gabar * aval * abv + ghc[n] * bv[k * N + n] * uk;
                if (ng_a) ga[c * N + n] += static_cast<float>(gabar * dk * abv);
                if (ng_b) gb[k * N + n] += static_cast<float>(ghc[n] * dk * uk);
                if (ng_u) gu_acc += ghc[n] * dk * bv[k * N + n];
                ghc[n] *= abv;  // propagate to h_{k-1}
              }
              if (ng_d) gd[k * C + c] += static_cast<float>(gd_acc);
              if (ng_u) gu[k * C + c] += static_cast<float>(gu_acc);
            }
          }
        }
      },
      "ssm_scan");
}

}  // namespace turbdet::nn
