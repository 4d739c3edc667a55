#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "turbdet/core/rng.hpp"

namespace turbdet::oracle {

Tensor conv3d_naive(const Tensor& x, const Tensor& w, const Tensor& b, int pt, int ph,
                    int pw) {
  const int64_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OC = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  Tensor y({OC, T, H, W});
  for (int64_t oc = 0; oc < OC; ++oc)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
          double acc = b.defined() && b.numel() > 0 ? b[oc] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t a = 0; a < kt; ++a)
              for (int64_t u = 0; u < kh; ++u)
                for (int64_t v = 0; v < kw; ++v) {
                  const int64_t tt = t + a - pt;
                  const int64_t ii = i + u - ph;
                  const int64_t jj = j + v - pw;
                  if (tt < 0 || tt >= T || ii < 0 || ii >= H || jj < 0 || jj >= W)
                    continue;
                  acc += static_cast<double>(
                             x.at({c, tt, ii, jj})) *
                         w.at({oc, c, a, u, v});
                }
          y.at({oc, t, i, j}) = static_cast<float>(acc);
        }
  return y;
}

Tensor ssm_scan_naive(const Tensor& u, const Tensor& delta, const Tensor& bseq,
                      const Tensor& cseq, const Tensor& a) {
  const int64_t L = u.dim(0), C = u.dim(1), N = a.dim(1);
  Tensor y({L, C});
  std::vector<double> h(static_cast<size_t>(C * N), 0.0);
  for (int64_t k = 0; k < L; ++k) {
    for (int64_t c = 0; c < C; ++c) {
      const double dk = delta.at({k, c});
      const double uk = u.at({k, c});
      double out = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double abar = std::exp(dk * a.at({c, n}));
        double& hc = h[static_cast<size_t>(c * N + n)];
        hc = abar * hc + dk * bseq.at({k, n}) * uk;
        out += cseq.at({k, n}) * hc;
      }
      y.at({k, c}) = static_cast<float>(out);
    }
  }
  return y;
}

double ssm_probe_loss_naive(const Tensor& u, const Tensor& delta, const Tensor& bseq,
                            const Tensor& cseq, const Tensor& a, const Tensor& probe) {
  const int64_t L = u.dim(0), C = u.dim(1), N = a.dim(1);
  std::vector<double> h(static_cast<size_t>(C * N), 0.0);
  double loss = 0.0;
  for (int64_t k = 0; k < L; ++k) {
    for (int64_t c = 0; c < C; ++c) {
      const double dk = delta.at({k, c});
      const double uk = u.at({k, c});
      double out = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double abar = std::exp(dk * a.at({c, n}));
        double& hc = h[static_cast<size_t>(c * N + n)];
        hc = abar * hc + dk * bseq.at({k, n}) * uk;
        out += cseq.at({k, n}) * hc;
      }
      loss += out * probe.at({k, c});
    }
  }
  return loss / static_cast<double>(L * C);
}

std::pair<std::vector<int>, double> assignment_bruteforce(const std::vector<double>& cost,
                                                          int n_gt, int n_q) {
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> current(static_cast<size_t>(n_gt), -1);
  std::vector<bool> used(static_cast<size_t>(n_q), false);
  std::function<void(int, double)> rec = [&](int row, double acc) {
    if (row == n_gt) {
      if (acc < best_cost - 1e-15) {
        best_cost = acc;
        best = current;
      }
      return;
    }
    for (int col = 0; col < n_q; ++col) {
      if (used[static_cast<size_t>(col)]) continue;
      used[static_cast<size_t>(col)] = true;
      current[static_cast<size_t>(row)] = col;
      rec(row + 1, acc + cost[static_cast<size_t>(row * n_q + col)]);
      used[static_cast<size_t>(col)] = false;
    }
  };
  rec(0, 0.0);
  return {best, best_cost};
}

double gradcheck(const std::function<double(const Tensor&)>& f, const Tensor& x,
                 const Tensor& analytic_grad, int n_probe, double step, uint64_t seed) {
  Rng rng(seed);
  Tensor probe = x.clone();
  double max_rel = 0.0;
  const int64_t n = x.numel();
  for (int i = 0; i < n_probe; ++i) {
    const int64_t idx = rng.uniform_int(0, n - 1);
    const float orig = probe[idx];
    const double h = step * (1.0 + std::abs(static_cast<double>(orig)));
    probe[idx] = static_cast<float>(orig + h);
    const double fp = f(probe);
    probe[idx] = static_cast<float>(orig - h);
    const double fm = f(probe);
    probe[idx] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = analytic_grad[idx];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
    max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
  }
  return max_rel;
}

double iou_xyxy(double ax1, double ay1, double ax2, double ay2, double bx1, double by1,
                double bx2, double by2) {
  const double ix1 = std::max(ax1, bx1), iy1 = std::max(ay1, by1);
  const double ix2 = std::min(ax2, bx2), iy2 = std::min(ay2, by2);
  const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double ua = std::max(0.0, ax2 - ax1) * std::max(0.0, ay2 - ay1) +
                    std::max(0.0, bx2 - bx1) * std::max(0.0, by2 - by1) - inter;
  if (ua <= 0.0) return 0.0;
  return inter / ua;
}

namespace {

double iou_box(const OracleBox& a, const OracleBox& b) {
  return iou_xyxy(a.cx - a.w / 2, a.cy - a.h / 2, a.cx + a.w / 2, a.cy + a.h / 2,
                  b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2);
}

}  // namespace

double map_50_95_naive(const std::vector<std::pair<int, OracleBox>>& detections,
                       const std::vector<std::pair<int, OracleBox>>& ground_truth) {
  std::set<int> classes;
  for (const auto& [img, g] : ground_truth) classes.insert(g.cls);
  if (classes.empty()) return 0.0;

  double total = 0.0;
  int n_thr = 0;
  for (int ti = 0; ti < 10; ++ti) {
    const double thr = 0.50 + 0.05 * ti;
    double ap_sum = 0.0;
    for (int cls : classes) {
      // Collect class detections sorted by score descending (stable on index).
      std::vector<std::pair<int, OracleBox>> dets;
      for (const auto& d : detections)
        if (d.second.cls == cls) dets.push_back(d);
      std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
        return a.second.score > b.second.score;
      });
      int n_gt = 0;
      std::map<int, std::vector<OracleBox>> gt_by_img;
      for (const auto& [img, g] : ground_truth)
        if (g.cls == cls) {
          gt_by_img[img].push_back(g);
          ++n_gt;
        }
      std::map<int, std::vector<bool>> taken;
      for (auto& [img, v] : gt_by_img) taken[img].assign(v.size(), false);

      std::vector<int> tp_flags;
      for (const auto& [img, d] : dets) {
        int best = -1;
        double best_iou = 0.0;
        auto it = gt_by_img.find(img);
        if (it != gt_by_img.end()) {
          for (size_t gi = 0; gi < it->second.size(); ++gi) {
            if (taken[img][gi]) continue;
            const double v = iou_box(d, it->second[gi]);
            if (v >= thr && v > best_iou) {
              best_iou = v;
              best = static_cast<int>(gi);
            }
          }
        }
        if (best >= 0) {
          taken[img][static_cast<size_t>(best)] = true;
          tp_flags.push_back(1);
        } else {
          tp_flags.push_back(0);
        }
      }
      // Precision/recall points, then 101-point interpolated AP by brute-force
      // max-precision search.
      std::vector<double> precs, recs;
      int tp = 0;
      for (size_t i = 0; i < tp_flags.size(); ++i) {
        tp += tp_flags[i];
        precs.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recs.push_back(n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0);
      }
      double ap = 0.0;
      if (n_gt > 0) {
        for (int ri = 0; ri <= 100; ++ri) {
          const double r = ri / 100.0;
          double pmax = 0.0;
          for (size_t i = 0; i < precs.size(); ++i)
            if (recs[i] >= r - 1e-12) pmax = std::max(pmax, precs[i]);
          ap += pmax;
        }
        ap /= 101.0;
      }
      ap_sum += ap;
    }
    total += ap_sum / static_cast<double>(classes.size());
    ++n_thr;
  }
  return total / n_thr;
}

}  // namespace turbdet::oracle
