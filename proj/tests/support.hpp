#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "mdn/image.hpp"
#include "mdn/rng.hpp"
#include "mdn/tensor.hpp"

namespace mdn::test {

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline Image random_image(int64_t h, int64_t w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Image img(h, w);
  for (auto& v : img.px) v = rng.uniform(lo, hi);
  return img;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (size_t i = 0; i < a.px.size(); ++i) m = std::max(m, std::abs(a.px[i] - b.px[i]));
  return m;
}

// Fresh empty directory under the system temp dir, unique per test name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mdn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mdn::test
