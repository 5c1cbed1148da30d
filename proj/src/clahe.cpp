#include "mdn/clahe.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mdn/errors.hpp"

namespace mdn {

Image rescale01(const Image& img) {
  Image out(img.height, img.width);
  if (img.empty()) return out;
  const double lo = img.min(), hi = img.max();
  if (hi > lo) {
    for (int64_t i = 0; i < img.size(); ++i) out.px[i] = (img.px[i] - lo) / (hi - lo);
  }
  return out;
}

Image clahe(const Image& img, const ClaheParams& p) {
  if (img.empty()) throw InvalidInput("clahe: empty image");
  if (p.tiles_y < 1 || p.tiles_x < 1 || p.bins < 2 || !(p.clip_limit > 0)) {
    throw InvalidInput("clahe: invalid parameters");
  }
  const int ty = static_cast<int>(std::min<int64_t>(p.tiles_y, img.height));
  const int tx = static_cast<int>(std::min<int64_t>(p.tiles_x, img.width));
  const int nb = p.bins;

  std::vector<int> q(static_cast<size_t>(img.size()));
  for (int64_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.px[i], 0.0, 1.0);
    q[i] = std::min(nb - 1, static_cast<int>(v * nb));
  }
  auto tile_y0 = [&](int t) { return img.height * t / ty; };
  auto tile_x0 = [&](int t) { return img.width * t / tx; };

  // Per-tile lookup tables.
  std::vector<std::vector<double>> lut(static_cast<size_t>(ty * tx));
  for (int a = 0; a < ty; ++a) {
    for (int b = 0; b < tx; ++b) {
      const int64_t y0 = tile_y0(a), y1 = tile_y0(a + 1), x0 = tile_x0(b), x1 = tile_x0(b + 1);
      const double count = static_cast<double>((y1 - y0) * (x1 - x0));
      std::vector<double> hist(static_cast<size_t>(nb), 0.0);
      for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x) hist[q[y * img.width + x]] += 1;
      const double limit = std::max(1.0, p.clip_limit * count / nb);
      double excess = 0;
      for (double& h : hist) {
        if (h > limit) {
          excess += h - limit;
          h = limit;
        }
      }
      for (double& h : hist) h += excess / nb;
      auto& l = lut[a * tx + b];
      l.resize(static_cast<size_t>(nb));
      double cdf = 0;
      for (int i = 0; i < nb; ++i) {
        cdf += hist[i];
        l[i] = std::clamp(cdf / count, 0.0, 1.0);
      }
    }
  }

  // Bilinear blend between the four nearest tile centres.
  auto centre_y = [&](int t) { return 0.5 * (tile_y0(t) + tile_y0(t + 1)) - 0.5; };
  auto centre_x = [&](int t) { return 0.5 * (tile_x0(t) + tile_x0(t + 1)) - 0.5; };
  auto locate = [](double pos, int n, auto centre, int& i0, double& f) {
    i0 = 0;
    while (i0 + 1 < n && centre(i0 + 1) <= pos) ++i0;
    if (i0 + 1 >= n || pos <= centre(0)) {
      f = 0;
      if (pos <= centre(0)) i0 = 0;
      return;
    }
    f = (pos - centre(i0)) / (centre(i0 + 1) - centre(i0));
  };
  Image out(img.height, img.width);
  for (int64_t y = 0; y < img.height; ++y) {
    int a0;
    double fy;
    locate(static_cast<double>(y), ty, centre_y, a0, fy);
    const int a1 = std::min(a0 + 1, ty - 1);
    for (int64_t x = 0; x < img.width; ++x) {
      int b0;
      double fx;
      locate(static_cast<double>(x), tx, centre_x, b0, fx);
      const int b1 = std::min(b0 + 1, tx - 1);
      const int v = q[y * img.width + x];
      const double top = (1 - fx) * lut[a0 * tx + b0][v] + fx * lut[a0 * tx + b1][v];
      const double bot = (1 - fx) * lut[a1 * tx + b0][v] + fx * lut[a1 * tx + b1][v];
      out.at(y, x) = std::clamp((1 - fy) * top + fy * bot, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace mdn
