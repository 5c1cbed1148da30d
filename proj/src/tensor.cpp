#include "mdn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mdn/errors.hpp"

namespace mdn {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw InvalidInput("negative tensor dimension: " + shape.str());
  }
  data_.assign(static_cast<size_t>(shape.numel()), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape.numel()) {
    throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  require_same_shape(*this, other, "Tensor::add_");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

double Tensor::sum() const {
  double s = 0.0;
  for (float v : data_) s += v;
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                       b.shape().str());
  }
}

}  // namespace mdn
