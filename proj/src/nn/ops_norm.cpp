#include <cmath>
#include <vector>

#include "turbdet/core/error.hpp"
#include "turbdet/kernels/kernels.hpp"
#include "turbdet/nn/autograd.hpp"

namespace turbdet::nn {

namespace K = turbdet::kernels;

namespace {

bool preq(Node& n, size_t i) { return n.parents[i]->requires_grad; }
Tensor& pgrad(Node& n, size_t i) { return n.parents[i]->ensure_grad(); }

struct Split {
  int64_t outer, C, inner;
};

Split split_for(const std::vector<int64_t>& shape, int64_t axis) {
  Split s{1, 1, 1};
  for (int64_t i = 0; i < static_cast<int64_t>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<size_t>(i)];
    else if (i == axis) s.C = shape[static_cast<size_t>(i)];
    else s.inner *= shape[static_cast<size_t>(i)];
  }
  return s;
}

}  // namespace

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
              Tensor& running_var, int64_t channel_axis, bool training,
              bool update_stats, float momentum, float eps) {
  const Split sp = split_for(x.shape(), channel_axis);
  if (gamma.numel() != sp.C || beta.numel() != sp.C ||
      running_mean.numel() != sp.C || running_var.numel() != sp.C)
    throw ShapeError("batchnorm: parameter length mismatch");
  const int64_t count = sp.outer * sp.inner;
  if (count == 0) throw ShapeError("batchnorm: empty input");

  std::vector<float> mean(static_cast<size_t>(sp.C)), invstd(static_cast<size_t>(sp.C));
  const float* xd = x.value().data();
  if (training) {
    for (int64_t c = 0; c < sp.C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int64_t o = 0; o < sp.outer; ++o) {
        const float* row = xd + (o * sp.C + c) * sp.inner;
        s += K::vsum(row, sp.inner);
        s2 += K::vsumsq(row, sp.inner);
      }
      const double m = s / count;
      const double v = std::max(0.0, s2 / count - m * m);
      mean[static_cast<size_t>(c)] = static_cast<float>(m);
      invstd[static_cast<size_t>(c)] = static_cast<float>(1.0 / std::sqrt(v + eps));
      if (update_stats) {
        const double unbiased = count > 1 ? v * count / (count - 1) : v;
        running_mean[c] = (1.0f - momentum) * running_mean[c] + momentum * static_cast<float>(m);
        running_var[c] = (1.0f - momentum) * running_var[c] + momentum * static_cast<float>(unbiased);
      }
    }
  } else {
    for (int64_t c = 0; c < sp.C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[c];
      invstd[static_cast<size_t>(c)] = 1.0f / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor y(x.shape());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t c = 0; c < sp.C; ++c) {
      const float* row = xd + (o * sp.C + c) * sp.inner;
      float* yrow = y.data() + (o * sp.C + c) * sp.inner;
      const float m = mean[static_cast<size_t>(c)];
      const float is = invstd[static_cast<size_t>(c)];
      const float g = gamma.value()[c], b = beta.value()[c];
      for (int64_t i = 0; i < sp.inner; ++i) yrow[i] = (row[i] - m) * is * g + b;
    }

  Tensor xv = x.value(), gv = gamma.value();
  return make_op(
      std::move(y), {x, gamma, beta},
      [xv, gv, sp, count, mean, invstd, training](Node& n) {
        const bool ng_x = preq(n, 0), ng_g = preq(n, 1), ng_b = preq(n, 2);
        const float* gy = n.grad.data();
        const float* xd = xv.data();
        for (int64_t c = 0; c < sp.C; ++c) {
          const float m = mean[static_cast<size_t>(c)];
          const float is = invstd[static_cast<size_t>(c)];
          // Accumulate sum(gy) and sum(gy * xhat) for this channel.
          double sg = 0.0, sgx = 0.0;
          for (int64_t o = 0; o < sp.outer; ++o) {
            const float* gyr = gy + (o * sp.C + c) * sp.inner;
            const float* xr = xd + (o * sp.C + c) * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) {
              sg += gyr[i];
              sgx += static_cast<double>(gyr[i]) * (xr[i] - m) * is;
            }
          }
          if (ng_g) pgrad(n, 1).data()[c] += static_cast<float>(sgx);
          if (ng_b) pgrad(n, 2).data()[c] += static_cast<float>(sg);
          if (ng_x) {
            float* gx = pgrad(n, 0).data();
            const float gch = gv[c];
            const float mg = static_cast<float>(sg / count);
            const float mgx = static_cast<float>(sgx / count);
            for (int64_t o = 0; o < sp.outer; ++o) {
              const float* gyr = gy + (o * sp.C + c) * sp.inner;
              const float* xr = xd + (o * sp.C + c) * sp.inner;
              float* gxr = gx + (o * sp.C + c) * sp.inner;
              if (training) {
                for (int64_t i = 0; i < sp.inner; ++i) {
                  const float xhat = (xr[i] - m) * is;
                  gxr[i] += gch * is * (gyr[i] - mg - xhat * mgx);
                }
              } else {
                for (int64_t i = 0; i < sp.inner; ++i) gxr[i] += gch * is * gyr[i];
              }
            }
          }
        }
      },
      "batchnorm");
}

}  // namespace turbdet::nn
