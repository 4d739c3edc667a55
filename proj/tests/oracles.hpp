#pragma once

// Independent reference implementations used as test oracles. Everything here
// is deliberately written as plainly as possible (nested loops, no shared
// helpers with the library) so it can stand as an independent check.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "turbdet/core/tensor.hpp"

namespace turbdet::oracle {

// Dense 3D convolution, stride 1, zero padding (pt, ph, pw).
// x: (C, T, H, W), w: (OC, C, kt, kh, kw), b: (OC) or empty.
Tensor conv3d_naive(const Tensor& x, const Tensor& w, const Tensor& b, int pt, int ph,
                    int pw);

// Sequential selective-scan recurrence: one step at a time, no blocking.
// u, delta: (L, C); bseq, cseq: (L, N); a: (C, N). Returns y (L, C).
Tensor ssm_scan_naive(const Tensor& u, const Tensor& delta, const Tensor& bseq,
                      const Tensor& cseq, const Tensor& a);

// Same recurrence kept entirely in double, reduced against a probe tensor:
// returns mean(y * probe). Used for finite-difference checks where float32
// rounding would mask the signal.
double ssm_probe_loss_naive(const Tensor& u, const Tensor& delta, const Tensor& bseq,
                            const Tensor& cseq, const Tensor& a, const Tensor& probe);

// Minimum-cost one-to-one assignment of n_gt rows to n_q columns by exhaustive
// enumeration over all injections. cost is row-major (n_gt x n_q).
// Returns column index per row and the optimal cost.
std::pair<std::vector<int>, double> assignment_bruteforce(const std::vector<double>& cost,
                                                          int n_gt, int n_q);

// Central-difference gradient check: f must be a pure function of `x`.
// Returns max relative error over the probed coordinates.
double gradcheck(const std::function<double(const Tensor&)>& f, const Tensor& x,
                 const Tensor& analytic_grad, int n_probe, double step, uint64_t seed);

struct OracleBox {
  double cx, cy, w, h;  // normalized
  int cls;
  double score;  // detections only
};

// Average precision by explicit precision/recall construction (101-point
// interpolation), greedy score-descending matching. Detections and ground
// truth carry an image id so multi-image instances pool per class.
double map_50_95_naive(const std::vector<std::pair<int, OracleBox>>& detections,
                       const std::vector<std::pair<int, OracleBox>>& ground_truth);

double iou_xyxy(double ax1, double ay1, double ax2, double ay2, double bx1, double by1,
                double bx2, double by2);

}  // namespace turbdet::oracle
