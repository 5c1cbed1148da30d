#include "mdn/image.hpp"

#include <algorithm>
#include <numeric>

#include "mdn/errors.hpp"

namespace mdn {

Image::Image(int64_t h, int64_t w, double fill) : height(h), width(w) {
  if (h < 0 || w < 0) throw InvalidInput("Image: negative size");
  px.assign(static_cast<size_t>(h * w), fill);
}

Image::Image(int64_t h, int64_t w, std::vector<double> values)
    : height(h), width(w), px(std::move(values)) {
  if (h < 0 || w < 0 || static_cast<int64_t>(px.size()) != h * w) {
    throw InvalidInput("Image: pixel count does not match " + std::to_string(h) + "x" +
                       std::to_string(w));
  }
}

double Image::mean() const {
  if (px.empty()) return 0.0;
  return std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
}

double Image::min() const { return px.empty() ? 0.0 : *std::min_element(px.begin(), px.end()); }
double Image::max() const { return px.empty() ? 0.0 : *std::max_element(px.begin(), px.end()); }

int64_t mirror_index(int64_t i, int64_t n) {
  if (n <= 1) return 0;
  const int64_t period = 2 * (n - 1);
  int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

Tensor to_tensor(const Image& img) { return to_tensor(std::vector<Image>{img}); }

Tensor to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) throw InvalidInput("to_tensor: empty batch");
  const int64_t h = batch.front().height;
  const int64_t w = batch.front().width;
  Tensor t({static_cast<int64_t>(batch.size()), 1, h, w});
  for (size_t n = 0; n < batch.size(); ++n) {
    if (batch[n].height != h || batch[n].width != w) {
      throw InvalidInput("to_tensor: images differ in size");
    }
    float* p = t.plane(static_cast<int64_t>(n), 0);
    for (int64_t i = 0; i < h * w; ++i) p[i] = static_cast<float>(batch[n].px[i]);
  }
  return t;
}

Image from_tensor(const Tensor& t, int64_t n, int64_t c) {
  const Shape s = t.shape();
  if (n >= s.n || c >= s.c) throw InvalidInput("from_tensor: index out of range");
  Image img(s.h, s.w);
  const float* p = t.plane(n, c);
  for (int64_t i = 0; i < s.plane(); ++i) img.px[i] = p[i];
  return img;
}

Image crop(const Image& img, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  if (y0 < 0 || x0 < 0 || h < 0 || w < 0 || y0 + h > img.height || x0 + w > img.width) {
    throw InvalidInput("crop: window outside image");
  }
  Image out(h, w);
  for (int64_t y = 0; y < h; ++y) {
    std::copy_n(img.px.begin() + (y0 + y) * img.width + x0, w, out.px.begin() + y * w);
  }
  return out;
}

Image clipped(const Image& img, double lo, double hi) {
  Image out = img;
  for (auto& v : out.px) v = std::clamp(v, lo, hi);
  return out;
}

}  // namespace mdn
