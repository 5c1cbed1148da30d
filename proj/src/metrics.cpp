#include "mdn/metrics.hpp"

#include <cmath>
#include <string>

#include "mdn/errors.hpp"

namespace mdn {

namespace {

void check_pair(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw InvalidInput(std::string(what) + ": shape mismatch (" + std::to_string(a.height) + "x" +
                       std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                       std::to_string(b.width) + ")");
  }
  if (a.empty()) throw InvalidInput(std::string(what) + ": empty image");
}

std::vector<double> gaussian_window(const SsimConfig& c) {
  std::vector<double> k(static_cast<size_t>(c.window));
  const int r = c.window / 2;
  double s = 0;
  for (int i = 0; i < c.window; ++i) {
    k[i] = std::exp(-(i - r) * (i - r) / (2 * c.sigma * c.sigma));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

// Separable valid-mode correlation: (H - n + 1) x (W - n + 1).
Image filter_valid(const Image& img, const std::vector<double>& k) {
  const int64_t n = static_cast<int64_t>(k.size());
  const int64_t oh = img.height - n + 1, ow = img.width - n + 1;
  Image rows(img.height, ow);
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int64_t i = 0; i < n; ++i) s += k[i] * img.at(y, x + i);
      rows.at(y, x) = s;
    }
  Image out(oh, ow);
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int64_t i = 0; i < n; ++i) s += k[i] * rows.at(y + i, x);
      out.at(y, x) = s;
    }
  return out;
}

// Adjoint of filter_valid: scatters an (H - n + 1) x (W - n + 1) map back to H x W.
Image filter_valid_adjoint(const Image& g, const std::vector<double>& k, int64_t H, int64_t W) {
  const int64_t n = static_cast<int64_t>(k.size());
  Image cols(H, g.width);
  for (int64_t y = 0; y < g.height; ++y)
    for (int64_t x = 0; x < g.width; ++x)
      for (int64_t i = 0; i < n; ++i) cols.at(y + i, x) += k[i] * g.at(y, x);
  Image out(H, W);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < g.width; ++x)
      for (int64_t i = 0; i < n; ++i) out.at(y, x + i) += k[i] * cols.at(y, x);
  return out;
}

Image product(const Image& a, const Image& b) {
  Image o(a.height, a.width);
  for (int64_t i = 0; i < a.size(); ++i) o.px[i] = a.px[i] * b.px[i];
  return o;
}

struct SsimTerms {
  Image mx, my, exx, eyy, exy;
};

SsimTerms ssim_terms(const Image& a, const Image& b, const SsimConfig& c,
                     const std::vector<double>& k) {
  if (a.height < c.window || a.width < c.window) {
    throw InvalidInput("ssim: image smaller than the " + std::to_string(c.window) + "px window");
  }
  return {filter_valid(a, k), filter_valid(b, k), filter_valid(product(a, a), k),
          filter_valid(product(b, b), k), filter_valid(product(a, b), k)};
}

}  // namespace

double mse(const Image& a, const Image& b) {
  check_pair(a, b, "mse");
  double s = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = a.px[i] - b.px[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double mae(const Image& a, const Image& b) {
  check_pair(a, b, "mae");
  double s = 0;
  for (int64_t i = 0; i < a.size(); ++i) s += std::abs(a.px[i] - b.px[i]);
  return s / static_cast<double>(a.size());
}

double ssim(const Image& a, const Image& b, const SsimConfig& c) {
  check_pair(a, b, "ssim");
  const auto k = gaussian_window(c);
  const SsimTerms t = ssim_terms(a, b, c, k);
  const double c1 = (c.k1 * c.dynamic_range) * (c.k1 * c.dynamic_range);
  const double c2 = (c.k2 * c.dynamic_range) * (c.k2 * c.dynamic_range);
  double s = 0;
  for (int64_t i = 0; i < t.mx.size(); ++i) {
    const double mx = t.mx.px[i], my = t.my.px[i];
    const double vx = t.exx.px[i] - mx * mx, vy = t.eyy.px[i] - my * my;
    const double cxy = t.exy.px[i] - mx * my;
    s += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return s / static_cast<double>(t.mx.size());
}

SsimGradient ssim_with_gradient(const Image& a, const Image& b, const SsimConfig& c) {
  check_pair(a, b, "ssim");
  const auto k = gaussian_window(c);
  const SsimTerms t = ssim_terms(a, b, c, k);
  const double c1 = (c.k1 * c.dynamic_range) * (c.k1 * c.dynamic_range);
  const double c2 = (c.k2 * c.dynamic_range) * (c.k2 * c.dynamic_range);
  const int64_t m = t.mx.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  Image g_mu(t.mx.height, t.mx.width), g_exx(t.mx.height, t.mx.width),
      g_exy(t.mx.height, t.mx.width);
  double s = 0;
  for (int64_t i = 0; i < m; ++i) {
    const double mx = t.mx.px[i], my = t.my.px[i];
    const double vx = t.exx.px[i] - mx * mx, vy = t.eyy.px[i] - my * my;
    const double cxy = t.exy.px[i] - mx * my;
    const double a1 = 2 * mx * my + c1, a2 = 2 * cxy + c2;
    const double b1 = mx * mx + my * my + c1, b2 = vx + vy + c2;
    const double v = (a1 * a2) / (b1 * b2);
    s += v;
    g_mu.px[i] = inv_m * v * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2);
    g_exx.px[i] = -inv_m * v / b2;
    g_exy.px[i] = inv_m * 2 * v / a2;
  }
  SsimGradient r;
  r.value = s * inv_m;
  const Image d_mu = filter_valid_adjoint(g_mu, k, a.height, a.width);
  const Image d_exx = filter_valid_adjoint(g_exx, k, a.height, a.width);
  const Image d_exy = filter_valid_adjoint(g_exy, k, a.height, a.width);
  r.d_a = Image(a.height, a.width);
  for (int64_t i = 0; i < a.size(); ++i) {
    r.d_a.px[i] = d_mu.px[i] + 2 * a.px[i] * d_exx.px[i] + b.px[i] * d_exy.px[i];
  }
  return r;
}

MaeMap mae_map(const std::vector<Image>& errs) {
  if (errs.empty()) throw InvalidInput("mae_map: no error images");
  MaeMap r;
  r.map = Image(errs[0].height, errs[0].width);
  for (const Image& e : errs) {
    if (!e.same_shape(r.map)) throw InvalidInput("mae_map: error images differ in shape");
    for (int64_t i = 0; i < e.size(); ++i) r.map.px[i] += std::abs(e.px[i]);
  }
  const double n = static_cast<double>(errs.size());
  for (double& v : r.map.px) v /= n;
  r.mean = r.map.mean();
  return r;
}

}  // namespace mdn
