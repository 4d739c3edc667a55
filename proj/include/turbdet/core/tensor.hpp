#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace turbdet {

class Rng;

// Dense row-major float32 tensor. Always contiguous; reshape shares the
// buffer, everything else copies.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, float v);
  static Tensor from(std::vector<int64_t> shape, std::vector<float> values);
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, float mean = 0.0f,
                      float stddev = 1.0f);
  static Tensor rand(std::vector<int64_t> shape, Rng& rng, float lo = 0.0f,
                     float hi = 1.0f);

  bool defined() const { return data_ != nullptr; }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const;
  int64_t numel() const { return numel_; }

  float* data() { return data_.get(); }
  const float* data() const { return data_.get(); }

  float& operator[](int64_t i) { return data_.get()[i]; }
  float operator[](int64_t i) const { return data_.get()[i]; }

  // Multi-index accessor for tests and glue code (row-major).
  float& at(std::initializer_list<int64_t> idx);
  float at(std::initializer_list<int64_t> idx) const;

  Tensor reshaped(std::vector<int64_t> shape) const;  // shares buffer
  Tensor clone() const;
  void fill(float v);
  void zero() { fill(0.0f); }
  void copy_from(const Tensor& src);

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  static int64_t shape_numel(const std::vector<int64_t>& shape);

 private:
  int64_t offset_of(std::initializer_list<int64_t> idx) const;

  std::vector<int64_t> shape_;
  int64_t numel_ = 0;
  std::shared_ptr<float[]> data_;
};

}  // namespace turbdet
