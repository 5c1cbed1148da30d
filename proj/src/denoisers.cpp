#include "mdn/denoisers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "mdn/errors.hpp"

namespace mdn {

namespace {

void require_nonempty(const Image& img, const char* what) {
  if (img.empty()) throw InvalidInput(std::string(what) + ": empty image");
}

// Reflect-101 padded copy with `pad` pixels on every side.
Image pad_mirror(const Image& img, int64_t pad) {
  Image out(img.height + 2 * pad, img.width + 2 * pad);
  for (int64_t y = 0; y < out.height; ++y) {
    const int64_t sy = mirror_index(y - pad, img.height);
    for (int64_t x = 0; x < out.width; ++x) {
      out.at(y, x) = img.at(sy, mirror_index(x - pad, img.width));
    }
  }
  return out;
}

double soft(double c, double t) {
  const double a = std::abs(c) - t;
  return a > 0 ? std::copysign(a, c) : 0.0;
}

}  // namespace

std::vector<double> gaussian3_kernel() {
  constexpr double sigma = 0.8;
  const double e = std::exp(-1.0 / (2 * sigma * sigma));
  const std::array<double, 3> k1{e / (1 + 2 * e), 1 / (1 + 2 * e), e / (1 + 2 * e)};
  std::vector<double> k(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k[i * 3 + j] = k1[i] * k1[j];
  return k;
}

Image gaussian3(const Image& img) {
  require_nonempty(img, "gaussian3");
  const auto k = gaussian3_kernel();
  const Image p = pad_mirror(img, 1);
  Image out(img.height, img.width);
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      const double c = img.at(y, x);
      double acc = 0;
      for (int dy = 0; dy < 3; ++dy)
        for (int dx = 0; dx < 3; ++dx) acc += k[dy * 3 + dx] * (p.at(y + dy, x + dx) - c);
      out.at(y, x) = c + acc;
    }
  }
  return out;
}

Image bilateral(const Image& img, const BilateralParams& prm) {
  require_nonempty(img, "bilateral");
  const int r = prm.diameter / 2;
  struct Tap {
    int dy, dx;
    double ws;
  };
  std::vector<Tap> taps;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dy * dy + dx * dx <= r * r)
        taps.push_back({dy, dx, std::exp(-(dy * dy + dx * dx) / (2 * prm.sigma_space * prm.sigma_space))});
  const double inv2c = 1.0 / (2 * prm.sigma_color * prm.sigma_color);
  const Image p = pad_mirror(img, r);
  Image out(img.height, img.width);
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      const double c = img.at(y, x);
      double wsum = 0, acc = 0;
      for (const Tap& t : taps) {
        const double d = p.at(y + r + t.dy, x + r + t.dx) - c;
        const double w = t.ws * std::exp(-d * d * inv2c);
        wsum += w;
        acc += w * d;
      }
      out.at(y, x) = c + acc / wsum;
    }
  }
  return out;
}

Image median3(const Image& img) {
  require_nonempty(img, "median3");
  const Image p = pad_mirror(img, 1);
  Image out(img.height, img.width);
  std::array<double, 9> v{};
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      int i = 0;
      for (int dy = 0; dy < 3; ++dy)
        for (int dx = 0; dx < 3; ++dx) v[i++] = p.at(y + dy, x + dx);
      std::nth_element(v.begin(), v.begin() + 4, v.end());
      out.at(y, x) = v[4];
    }
  }
  return out;
}

Image wiener(const Image& img, const WienerParams& prm) {
  require_nonempty(img, "wiener");
  const int r = prm.window / 2;
  const double n = static_cast<double>(prm.window) * prm.window;
  const Image p = pad_mirror(img, r);
  Image mu(img.height, img.width), var(img.height, img.width);
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      const double c = img.at(y, x);
      double s = 0;
      for (int dy = 0; dy < prm.window; ++dy)
        for (int dx = 0; dx < prm.window; ++dx) s += p.at(y + dy, x + dx) - c;
      const double m = c + s / n;
      double v = 0;
      for (int dy = 0; dy < prm.window; ++dy)
        for (int dx = 0; dx < prm.window; ++dx) {
          const double d = p.at(y + dy, x + dx) - m;
          v += d * d;
        }
      mu.at(y, x) = m;
      var.at(y, x) = v / n;
    }
  }
  const double noise = prm.noise >= 0 ? prm.noise : var.mean();
  Image out(img.height, img.width);
  for (int64_t i = 0; i < img.size(); ++i) {
    const double v = var.px[i];
    const double den = std::max(v, noise);
    out.px[i] = den > 0 ? mu.px[i] + std::max(v - noise, 0.0) / den * (img.px[i] - mu.px[i])
                        : mu.px[i];
  }
  return out;
}

namespace {

// One analysis level in averaging form on the top-left h x w region.
void haar_step(Image& a, int64_t h, int64_t w) {
  Image tmp(h, w);
  const int64_t h2 = h / 2, w2 = w / 2;
  for (int64_t y = 0; y < h2; ++y) {
    for (int64_t x = 0; x < w2; ++x) {
      const double p00 = a.at(2 * y, 2 * x), p01 = a.at(2 * y, 2 * x + 1);
      const double p10 = a.at(2 * y + 1, 2 * x), p11 = a.at(2 * y + 1, 2 * x + 1);
      tmp.at(y, x) = (p00 + p01 + p10 + p11) / 4;
      tmp.at(y, x + w2) = (p00 - p01 + p10 - p11) / 4;
      tmp.at(y + h2, x) = (p00 + p01 - p10 - p11) / 4;
      tmp.at(y + h2, x + w2) = (p00 - p01 - p10 + p11) / 4;
    }
  }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) a.at(y, x) = tmp.at(y, x);
}

void haar_unstep(Image& a, int64_t h, int64_t w) {
  Image tmp(h, w);
  const int64_t h2 = h / 2, w2 = w / 2;
  for (int64_t y = 0; y < h2; ++y) {
    for (int64_t x = 0; x < w2; ++x) {
      const double s = a.at(y, x), hd = a.at(y, x + w2);
      const double vd = a.at(y + h2, x), dd = a.at(y + h2, x + w2);
      tmp.at(2 * y, 2 * x) = s + hd + vd + dd;
      tmp.at(2 * y, 2 * x + 1) = s - hd + vd - dd;
      tmp.at(2 * y + 1, 2 * x) = s + hd - vd - dd;
      tmp.at(2 * y + 1, 2 * x + 1) = s - hd - vd + dd;
    }
  }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) a.at(y, x) = tmp.at(y, x);
}

void check_levels(const Image& img, int levels) {
  if (levels < 1) throw InvalidInput("haar: levels must be >= 1");
  const int64_t m = int64_t{1} << levels;
  if (img.height % m != 0 || img.width % m != 0) {
    throw InvalidInput("haar: dimensions must be divisible by 2^levels");
  }
}

// Averaging-form coefficients relate to orthonormal ones by 2^j at level j.
template <typename Fn>
void for_each_subband(int64_t H, int64_t W, int levels, Fn&& fn) {
  for (int j = 1; j <= levels; ++j) {
    const int64_t h2 = H >> j, w2 = W >> j;
    const double scale = std::ldexp(1.0, j);
    fn(j, 0, w2, h2, w2, scale);   // horizontal detail
    fn(j, h2, 0, h2, w2, scale);   // vertical detail
    fn(j, h2, w2, h2, w2, scale);  // diagonal
  }
}

double median_abs(std::vector<double> v) {
  if (v.empty()) return 0;
  for (double& x : v) x = std::abs(x);
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = (m + *std::max_element(v.begin(), v.begin() + mid)) / 2;
  return m;
}

int auto_levels(const Image& img) {
  const int64_t m = std::min(img.height, img.width);
  if (m < 8) throw InvalidInput("wavelet: image dimensions must be >= 8");
  int lg = 0;
  while ((int64_t{1} << (lg + 1)) <= m) ++lg;
  return std::min(4, lg - 2);
}

Image pad_to_multiple(const Image& img, int64_t m) {
  const int64_t H = (img.height + m - 1) / m * m, W = (img.width + m - 1) / m * m;
  if (H == img.height && W == img.width) return img;
  Image out(H, W);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      out.at(y, x) = img.at(mirror_index(y, img.height), mirror_index(x, img.width));
  return out;
}

}  // namespace

Image haar_forward(const Image& img, int levels) {
  check_levels(img, levels);
  Image a = img;
  for (int j = 0; j < levels; ++j) haar_step(a, img.height >> j, img.width >> j);
  for_each_subband(a.height, a.width, levels,
                   [&](int, int64_t y0, int64_t x0, int64_t h, int64_t w, double s) {
                     for (int64_t y = y0; y < y0 + h; ++y)
                       for (int64_t x = x0; x < x0 + w; ++x) a.at(y, x) *= s;
                   });
  const double s = std::ldexp(1.0, levels);
  for (int64_t y = 0; y < (a.height >> levels); ++y)
    for (int64_t x = 0; x < (a.width >> levels); ++x) a.at(y, x) *= s;
  return a;
}

Image haar_inverse(const Image& coeffs, int levels) {
  check_levels(coeffs, levels);
  Image a = coeffs;
  for_each_subband(a.height, a.width, levels,
                   [&](int, int64_t y0, int64_t x0, int64_t h, int64_t w, double s) {
                     for (int64_t y = y0; y < y0 + h; ++y)
                       for (int64_t x = x0; x < x0 + w; ++x) a.at(y, x) /= s;
                   });
  const double s = std::ldexp(1.0, levels);
  for (int64_t y = 0; y < (a.height >> levels); ++y)
    for (int64_t x = 0; x < (a.width >> levels); ++x) a.at(y, x) /= s;
  for (int j = levels - 1; j >= 0; --j) haar_unstep(a, a.height >> j, a.width >> j);
  return a;
}

double estimate_noise_sigma(const Image& img) {
  require_nonempty(img, "estimate_noise_sigma");
  Image a = pad_to_multiple(img, 2);
  haar_step(a, a.height, a.width);
  std::vector<double> hh;
  hh.reserve(static_cast<size_t>(a.size() / 4));
  for (int64_t y = a.height / 2; y < a.height; ++y)
    for (int64_t x = a.width / 2; x < a.width; ++x) hh.push_back(2 * a.at(y, x));
  return median_abs(std::move(hh)) / 0.6745;
}

Image wavelet_bayes_shrink(const Image& img, const WaveletParams& prm) {
  require_nonempty(img, "wavelet");
  const int levels = prm.levels > 0 ? prm.levels : auto_levels(img);
  Image a = pad_to_multiple(img, int64_t{1} << levels);
  const int64_t H = a.height, W = a.width;
  for (int j = 0; j < levels; ++j) haar_step(a, H >> j, W >> j);

  if (prm.threshold_scale > 0) {
    std::vector<double> hh;
    for (int64_t y = H / 2; y < H; ++y)
      for (int64_t x = W / 2; x < W; ++x) hh.push_back(2 * a.at(y, x));
    const double sigma = median_abs(std::move(hh)) / 0.6745;
    const double noise_var = sigma * sigma;
    for_each_subband(H, W, levels,
                     [&](int, int64_t y0, int64_t x0, int64_t h, int64_t w, double s) {
                       double ss = 0;
                       for (int64_t y = y0; y < y0 + h; ++y)
                         for (int64_t x = x0; x < x0 + w; ++x) {
                           const double c = s * a.at(y, x);
                           ss += c * c;
                         }
                       const double var = ss / static_cast<double>(h * w);
                       const double sx = std::sqrt(std::max(var - noise_var, 0.0));
                       const double t = sx > 0 ? prm.threshold_scale * noise_var / sx
                                               : std::numeric_limits<double>::infinity();
                       for (int64_t y = y0; y < y0 + h; ++y)
                         for (int64_t x = x0; x < x0 + w; ++x)
                           a.at(y, x) = std::isinf(t) ? 0.0 : soft(s * a.at(y, x), t) / s;
                     });
  }
  for (int j = levels - 1; j >= 0; --j) haar_unstep(a, H >> j, W >> j);
  return a.height == img.height && a.width == img.width ? a : crop(a, 0, 0, img.height, img.width);
}

namespace {

// Forward differences with zero at the last row/column.
inline double grad_x(const Image& u, int64_t y, int64_t x) {
  return x + 1 < u.width ? u.at(y, x + 1) - u.at(y, x) : 0.0;
}
inline double grad_y(const Image& u, int64_t y, int64_t x) {
  return y + 1 < u.height ? u.at(y + 1, x) - u.at(y, x) : 0.0;
}

double fidelity(const Image& u, const Image& f) {
  double s = 0;
  for (int64_t i = 0; i < u.size(); ++i) {
    const double d = u.px[i] - f.px[i];
    s += d * d;
  }
  return 0.5 * s;
}

bool is_constant(const Image& img) {
  return std::all_of(img.px.begin(), img.px.end(), [&](double v) { return v == img.px[0]; });
}

void check_tv(const Image& img, const TvParams& p, const char* what) {
  require_nonempty(img, what);
  if (!(p.weight > 0)) throw InvalidInput(std::string(what) + ": weight must be > 0");
  if (p.max_iter < 1) throw InvalidInput(std::string(what) + ": max_iter must be >= 1");
}

}  // namespace

double total_variation_isotropic(const Image& u) {
  double s = 0;
  for (int64_t y = 0; y < u.height; ++y)
    for (int64_t x = 0; x < u.width; ++x) s += std::hypot(grad_x(u, y, x), grad_y(u, y, x));
  return s;
}

double total_variation_anisotropic(const Image& u) {
  double s = 0;
  for (int64_t y = 0; y < u.height; ++y)
    for (int64_t x = 0; x < u.width; ++x)
      s += std::abs(grad_x(u, y, x)) + std::abs(grad_y(u, y, x));
  return s;
}

TvResult chambolle_tv_run(const Image& f, const TvParams& prm) {
  check_tv(f, prm, "chambolle_tv");
  TvResult r;
  r.image = f;
  r.costs.push_back(prm.weight * total_variation_isotropic(f));
  if (is_constant(f)) return r;

  constexpr double tau = 0.25;
  const int64_t H = f.height, W = f.width;
  Image px(H, W), py(H, W), gx(H, W), gy(H, W);
  Image& u = r.image;
  const double e0 = r.costs[0];
  for (int k = 1; k <= prm.max_iter; ++k) {
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        gx.at(y, x) = grad_x(u, y, x);
        gy.at(y, x) = grad_y(u, y, x);
      }
    for (int64_t i = 0; i < f.size(); ++i) {
      const double n = 1 + tau / prm.weight * std::hypot(gx.px[i], gy.px[i]);
      px.px[i] = (px.px[i] - tau * gx.px[i]) / n;
      py.px[i] = (py.px[i] - tau * gy.px[i]) / n;
    }
    // u = f + grad^T p
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double d = 0;
        if (x + 1 < W) d -= px.at(y, x);
        if (x > 0) d += px.at(y, x - 1);
        if (y + 1 < H) d -= py.at(y, x);
        if (y > 0) d += py.at(y - 1, x);
        u.at(y, x) = f.at(y, x) + d;
      }
    const double e = fidelity(u, f) + prm.weight * total_variation_isotropic(u);
    r.costs.push_back(e);
    r.iterations = k;
    if (std::abs(r.costs[k - 1] - e) < prm.tol * e0) break;
  }
  return r;
}

Image chambolle_tv(const Image& img, const TvParams& p) { return chambolle_tv_run(img, p).image; }

TvResult bregman_tv_run(const Image& f, const TvParams& prm) {
  check_tv(f, prm, "bregman_tv");
  TvResult r;
  r.image = f;
  r.costs.push_back(prm.weight * total_variation_anisotropic(f));
  if (is_constant(f)) return r;

  const double mu = 1.0 / prm.weight;
  const double lambda = 2.0 * mu;
  const double shrink_t = 1.0 / lambda;
  const int64_t H = f.height, W = f.width;
  Image dx(H, W), dy(H, W), bx(H, W), by(H, W);
  Image& u = r.image;
  const double e0 = r.costs[0];
  for (int k = 1; k <= prm.max_iter; ++k) {
    // Gauss-Seidel sweep on (mu + lambda grad^T grad) u = mu f + lambda grad^T (d - b),
    // written relative to f so constant regions stay exact.
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        const double c = f.at(y, x);
        double nb = 0, rhs = 0;
        int n = 0;
        if (x > 0) {
          nb += u.at(y, x - 1) - c;
          rhs += dx.at(y, x - 1) - bx.at(y, x - 1);
          ++n;
        }
        if (x + 1 < W) {
          nb += u.at(y, x + 1) - c;
          rhs -= dx.at(y, x) - bx.at(y, x);
          ++n;
        }
        if (y > 0) {
          nb += u.at(y - 1, x) - c;
          rhs += dy.at(y - 1, x) - by.at(y - 1, x);
          ++n;
        }
        if (y + 1 < H) {
          nb += u.at(y + 1, x) - c;
          rhs -= dy.at(y, x) - by.at(y, x);
          ++n;
        }
        u.at(y, x) = c + lambda * (nb + rhs) / (mu + lambda * n);
      }
    }
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        const double gxv = grad_x(u, y, x), gyv = grad_y(u, y, x);
        const double sx = gxv + bx.at(y, x), sy = gyv + by.at(y, x);
        dx.at(y, x) = soft(sx, shrink_t);
        dy.at(y, x) = soft(sy, shrink_t);
        bx.at(y, x) = sx - dx.at(y, x);
        by.at(y, x) = sy - dy.at(y, x);
      }
    }
    const double e = fidelity(u, f) + prm.weight * total_variation_anisotropic(u);
    r.costs.push_back(e);
    r.iterations = k;
    if (std::abs(r.costs[k - 1] - e) < prm.tol * e0) break;
  }
  return r;
}

Image bregman_tv(const Image& img, const TvParams& p) { return bregman_tv_run(img, p).image; }

Image nl_means(const Image& img, const NlMeansParams& prm) {
  require_nonempty(img, "nl_means");
  const int64_t rp = prm.patch / 2, rs = prm.search / 2;
  const int64_t pad = rp + rs;
  const Image p = pad_mirror(img, pad);
  const int64_t H = img.height, W = img.width;
  // Patch windows of output pixels span rows/cols [rs, rs + H + 2 rp) of p.
  const int64_t RH = H + 2 * rp, RW = W + 2 * rp;
  const double area = static_cast<double>(prm.patch) * prm.patch;
  const double inv_h2 = 1.0 / (prm.h * prm.h);
  const double bias = 2 * prm.sigma * prm.sigma;

  Image num(H, W), den(H, W, 1.0);
  std::vector<double> integral(static_cast<size_t>((RH + 1) * (RW + 1)), 0.0);
  auto I = [&](int64_t y, int64_t x) -> double& {
    return integral[static_cast<size_t>(y * (RW + 1) + x)];
  };
  for (int64_t sy = -rs; sy <= rs; ++sy) {
    for (int64_t sx = -rs; sx <= rs; ++sx) {
      if (sy == 0 && sx == 0) continue;
      for (int64_t y = 0; y < RH; ++y) {
        double row = 0;
        for (int64_t x = 0; x < RW; ++x) {
          const double d = p.at(rs + y, rs + x) - p.at(rs + y + sy, rs + x + sx);
          row += d * d;
          I(y + 1, x + 1) = I(y, x + 1) + row;
        }
      }
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
          const double ssd = I(y + 2 * rp + 1, x + 2 * rp + 1) - I(y, x + 2 * rp + 1) -
                             I(y + 2 * rp + 1, x) + I(y, x);
          const double d2 = std::max(ssd, 0.0) / area;
          const double w = std::exp(-std::max(d2 - bias, 0.0) * inv_h2);
          if (w == 0) continue;
          num.at(y, x) += w * (p.at(pad + y + sy, pad + x + sx) - img.at(y, x));
          den.at(y, x) += w;
        }
      }
    }
  }
  Image out(H, W);
  for (int64_t i = 0; i < out.size(); ++i) out.px[i] = img.px[i] + num.px[i] / den.px[i];
  return out;
}

const char* method_id(Method m) {
  switch (m) {
    case Method::Unfiltered: return "unfiltered";
    case Method::Gaussian: return "gaussian";
    case Method::Bilateral: return "bilateral";
    case Method::Median: return "median";
    case Method::Wiener: return "wiener";
    case Method::Wavelet: return "wavelet";
    case Method::ChambolleTv: return "chambolle_tv";
    case Method::BregmanTv: return "bregman_tv";
    case Method::NlMeans: return "nl_means";
  }
  return "?";
}

std::vector<std::string> all_method_ids() {
  std::vector<std::string> ids;
  for (int m = 0; m <= static_cast<int>(Method::NlMeans); ++m) {
    ids.emplace_back(method_id(static_cast<Method>(m)));
  }
  return ids;
}

DenoiserSpec DenoiserSpec::parse(const std::string& id) {
  for (int m = 0; m <= static_cast<int>(Method::NlMeans); ++m) {
    if (id == method_id(static_cast<Method>(m))) {
      DenoiserSpec s;
      s.method = static_cast<Method>(m);
      return s;
    }
  }
  throw ConfigError("unknown denoising method '" + id + "'");
}

std::string DenoiserSpec::id() const { return method_id(method); }

void DenoiserSpec::validate() const {
  auto odd = [](int v) { return v >= 1 && v % 2 == 1; };
  switch (method) {
    case Method::Bilateral:
      if (bilateral.diameter < 1 || !(bilateral.sigma_color > 0) || !(bilateral.sigma_space > 0))
        throw ConfigError("bilateral: diameter >= 1 and positive sigmas required");
      break;
    case Method::Wiener:
      if (!odd(wiener.window)) throw ConfigError("wiener: window must be odd");
      break;
    case Method::ChambolleTv:
    case Method::BregmanTv:
      if (!(tv.weight > 0) || tv.tol < 0 || tv.max_iter < 1)
        throw ConfigError(id() + ": weight > 0, tol >= 0, max_iter >= 1 required");
      break;
    case Method::NlMeans:
      if (!odd(nl_means.patch) || !odd(nl_means.search))
        throw ConfigError("nl_means: patch and search must be odd");
      if (!(nl_means.h > 0) || nl_means.sigma < 0)
        throw ConfigError("nl_means: h > 0 and sigma >= 0 required");
      break;
    case Method::Wavelet:
      if (wavelet.threshold_scale < 0) throw ConfigError("wavelet: threshold_scale must be >= 0");
      break;
    default:
      break;
  }
}

Image denoise(const DenoiserSpec& spec, const Image& img) {
  spec.validate();
  switch (spec.method) {
    case Method::Unfiltered: return img;
    case Method::Gaussian: return gaussian3(img);
    case Method::Bilateral: return bilateral(img, spec.bilateral);
    case Method::Median: return median3(img);
    case Method::Wiener: return wiener(img, spec.wiener);
    case Method::Wavelet: return wavelet_bayes_shrink(img, spec.wavelet);
    case Method::ChambolleTv: return chambolle_tv(img, spec.tv);
    case Method::BregmanTv: return bregman_tv(img, spec.tv);
    case Method::NlMeans: return nl_means(img, spec.nl_means);
  }
  throw ConfigError("unhandled method");
}

}  // namespace mdn
