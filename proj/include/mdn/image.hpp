#pragma once

#include <cstdint>
#include <vector>

#include "mdn/tensor.hpp"

namespace mdn {

// Single-channel 2-D image in double precision. Classical filters, metrics and
// the data pipeline work on this; the network works on float Tensors.
struct Image {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> px;

  Image() = default;
  Image(int64_t h, int64_t w, double fill = 0.0);
  Image(int64_t h, int64_t w, std::vector<double> values);

  int64_t size() const { return height * width; }
  bool empty() const { return px.empty(); }
  double& at(int64_t y, int64_t x) { return px[static_cast<size_t>(y * width + x)]; }
  double at(int64_t y, int64_t x) const { return px[static_cast<size_t>(y * width + x)]; }

  double mean() const;
  double min() const;
  double max() const;
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

// Mirror index without repeating the edge sample (..., 2, 1, 0, 1, 2, ...),
// valid for any integer i including far out-of-range values.
int64_t mirror_index(int64_t i, int64_t n);

Tensor to_tensor(const Image& img);
Tensor to_tensor(const std::vector<Image>& batch);
Image from_tensor(const Tensor& t, int64_t n = 0, int64_t c = 0);

Image crop(const Image& img, int64_t y0, int64_t x0, int64_t h, int64_t w);
Image clipped(const Image& img, double lo, double hi);

}  // namespace mdn
