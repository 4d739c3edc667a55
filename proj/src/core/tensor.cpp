#include "turbdet/core/tensor.hpp"

#include <cstring>
#include <sstream>

#include "turbdet/core/error.hpp"
#include "turbdet/core/rng.hpp"

namespace turbdet {

int64_t Tensor::shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative tensor dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  numel_ = shape_numel(shape_);
  data_ = std::shared_ptr<float[]>(new float[static_cast<size_t>(numel_)]());
}

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, float v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<float> values) {
  Tensor t(std::move(shape));
  if (t.numel() != static_cast<int64_t>(values.size()))
    throw ShapeError("Tensor::from: value count does not match shape");
  std::memcpy(t.data(), values.data(), values.size() * sizeof(float));
  return t;
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, float mean, float stddev) {
  Tensor t(std::move(shape));
  rng.fill_normal(t.data(), t.numel(), mean, stddev);
  return t;
}

Tensor Tensor::rand(std::vector<int64_t> shape, Rng& rng, float lo, float hi) {
  Tensor t(std::move(shape));
  rng.fill_uniform(t.data(), t.numel(), lo, hi);
  return t;
}

int64_t Tensor::dim(int64_t i) const {
  if (i < 0) i += ndim();
  if (i < 0 || i >= ndim()) throw ShapeError("Tensor::dim: axis out of range");
  return shape_[static_cast<size_t>(i)];
}

int64_t Tensor::offset_of(std::initializer_list<int64_t> idx) const {
  if (static_cast<int64_t>(idx.size()) != ndim())
    throw ShapeError("Tensor::at: index rank mismatch");
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    off = off * shape_[k] + i;
    ++k;
  }
  return off;
}

float& Tensor::at(std::initializer_list<int64_t> idx) { return data_.get()[offset_of(idx)]; }
float Tensor::at(std::initializer_list<int64_t> idx) const { return data_.get()[offset_of(idx)]; }

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  if (shape_numel(shape) != numel_) throw ShapeError("reshape: numel mismatch");
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_;
  t.data_ = data_;
  return t;
}

Tensor Tensor::clone() const {
  if (!defined()) return Tensor();
  Tensor t(shape_);
  std::memcpy(t.data(), data(), static_cast<size_t>(numel_) * sizeof(float));
  return t;
}

void Tensor::fill(float v) {
  float* p = data();
  for (int64_t i = 0; i < numel_; ++i) p[i] = v;
}

void Tensor::copy_from(const Tensor& src) {
  if (!same_shape(src)) throw ShapeError("copy_from: shape mismatch");
  std::memcpy(data(), src.data(), static_cast<size_t>(numel_) * sizeof(float));
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << ")";
  return os.str();
}

}  // namespace turbdet
