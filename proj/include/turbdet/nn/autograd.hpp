#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "turbdet/core/tensor.hpp"

namespace turbdet::nn {

// Reverse-mode tape. Heavy operations (convolutions, scans, warps, norms) are
// single fused nodes with hand-written backward passes, so graphs stay small
// even for long sequences.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor t, bool requires_grad = false);

  static Var constant(Tensor t) { return Var(std::move(t), false); }
  static Var param(Tensor t, std::string name);

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  Tensor& ensure_grad() { return n_->ensure_grad(); }
  void zero_grad();
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const std::string& name() const { return n_->name; }

  const std::vector<int64_t>& shape() const { return n_->value.shape(); }
  int64_t dim(int64_t i) const { return n_->value.dim(i); }
  int64_t numel() const { return n_->value.numel(); }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// Builds an op node. requires_grad is inherited from parents; backward_fn is
// dropped when no parent needs gradients.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn,
            std::string name);

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// ---- elementwise / shape ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div_ew(const Var& a, const Var& b);
Var min_ew(const Var& a, const Var& b);
Var max_ew(const Var& a, const Var& b);
Var scale(const Var& x, float s);
Var add_scalar(const Var& x, float s);
Var neg(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var exp_op(const Var& x);
Var log_op(const Var& x);
Var pow_const(const Var& x, float p);
Var abs_op(const Var& x);
Var clamp(const Var& x, float lo, float hi);
Var detach(const Var& x);
Var mean_all(const Var& x);
Var sum_all(const Var& x);
Var reshape(const Var& x, std::vector<int64_t> shape);
Var permute(const Var& x, std::vector<int64_t> axes);
Var narrow(const Var& x, int64_t axis, int64_t start, int64_t len);
Var concat(const std::vector<Var>& xs, int64_t axis);
Var flip(const Var& x, const std::vector<int64_t>& axes);
Var select_rows(const Var& x, const std::vector<int64_t>& rows);  // axis 0
// Adds bias b (length = x.dim(axis)) broadcast over all other axes.
Var add_channel_bias(const Var& x, const Var& b, int64_t axis);

// ---- linear algebra / attention ----
// op(A) (m x k) @ op(B) (k x n); 2-D tensors.
Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false);
Var softmax_lastdim(const Var& x);
Var rowmax_lastdim(const Var& x);  // (R, C) -> (R)

// ---- convolution / pooling / resampling (feature volumes are (C,T,H,W)) ----
Var conv3d(const Var& x, const Var& w, const Var& b, int pt, int ph, int pw);
Var maxpool3d_spatial2(const Var& x);
Var upsample_trilinear_spatial2(const Var& x);
Var avgpool2d(const Var& x, int k);  // (C,H,W), k x k non-overlapping mean

// Deformable 3D convolution. offsets: (3*kt*kh*kw, T, H, W), tap-major
// (dt,dy,dx) triples. Sampling is trilinear with zero padding outside the
// volume; offsets are clamped to the axis extents.
Var deform_conv3d(const Var& x, const Var& offsets, const Var& w, const Var& b);

// Backward-warps each frame by its per-pixel field: out(:,t,y,x) =
// frames(:,t, y+fy, x+fx) with bilinear sampling and edge replication.
// center >= 0 marks a frame passed through untouched.
Var warp_frames(const Var& frames, const Var& field, int64_t center);

// ---- normalization ----
// Batch norm over every axis except `channel_axis`. Running stats are stored
// by the caller; stats update only when training && update_stats.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
              Tensor& running_var, int64_t channel_axis, bool training,
              bool update_stats, float momentum, float eps);

// ---- selective scan ----
// Sequential state recurrence with input-dependent discretization:
//   h_k = exp(delta_k * a) . h_{k-1} + delta_k * b_k * u_k,  y_k = <c_k, h_k>
// u, delta: (L, C); bseq, cseq: (L, N); a: (C, N). Implementation runs in
// blocks with boundary checkpoints; gradients recompute within a block.
Var ssm_scan(const Var& u, const Var& delta, const Var& bseq, const Var& cseq,
             const Var& a);

// ---- losses ----
// mean over elements of sqrt((x - target)^2 + eps^2); target is constant.
Var charbonnier_loss(const Var& x, const Tensor& target, float eps);

}  // namespace turbdet::nn
