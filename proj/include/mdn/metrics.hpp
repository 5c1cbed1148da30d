#pragma once

#include <vector>

#include "mdn/image.hpp"

namespace mdn {

double mse(const Image& a, const Image& b);
double mae(const Image& a, const Image& b);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean of the local SSIM map over all windows that fit inside the image
// (no padding). Both dimensions must be >= the window size.
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

struct SsimGradient {
  double value = 0;
  Image d_a;  // d ssim / d a
};
SsimGradient ssim_with_gradient(const Image& a, const Image& b, const SsimConfig& cfg = {});

struct MaeMap {
  Image map;
  double mean = 0;
};
// Pixelwise mean of |error| images, plus the map's mean.
MaeMap mae_map(const std::vector<Image>& abs_errors);

}  // namespace mdn
