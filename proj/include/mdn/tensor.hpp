#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mdn {

struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense N x C x H x W float tensor, row-major (w fastest).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  float& at(int64_t n, int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>(((n * shape_.c + c) * shape_.h + y) * shape_.w + x)];
  }
  float at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>(((n * shape_.c + c) * shape_.h + y) * shape_.w + x)];
  }

  // Pointer to the start of one (n, c) plane.
  float* plane(int64_t n, int64_t c) { return data() + (n * shape_.c + c) * shape_.plane(); }
  const float* plane(int64_t n, int64_t c) const {
    return data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(float v);
  // this += other (same shape).
  void add_(const Tensor& other);
  bool all_finite() const;
  double sum() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace mdn
