#pragma once

#include <string>
#include <vector>

#include "mdn/image.hpp"

namespace mdn {

// All windowed filters read borders by reflect-101 mirroring.

// 3x3 Gaussian, sigma 0.8, normalised.
Image gaussian3(const Image& img);
// The normalised 3x3 kernel, row-major.
std::vector<double> gaussian3_kernel();

struct BilateralParams {
  int diameter = 9;                    // circular support of radius diameter / 2
  double sigma_color = 75.0 / 255.0;   // in [0, 1] intensity units
  double sigma_space = 75.0;           // pixels
};
Image bilateral(const Image& img, const BilateralParams& p = {});

Image median3(const Image& img);

struct WienerParams {
  int window = 3;
  // Noise power; negative means "mean of the local variances".
  double noise = -1.0;
};
Image wiener(const Image& img, const WienerParams& p = {});

// Multi-level orthonormal Haar transform. Coefficients are stored in place in
// the usual quadrant layout; dimensions must be divisible by 2^levels.
Image haar_forward(const Image& img, int levels);
Image haar_inverse(const Image& coeffs, int levels);

struct WaveletParams {
  int levels = -1;               // -1: min(4, floor(log2(min dim)) - 2)
  double threshold_scale = 1.0;  // 0 disables shrinkage (round trip)
};
// Noise sigma from the finest diagonal subband: median(|HH1|) / 0.6745.
double estimate_noise_sigma(const Image& img);
Image wavelet_bayes_shrink(const Image& img, const WaveletParams& p = {});

struct TvParams {
  double weight = 0.1;
  double tol = 2e-4;
  int max_iter = 200;
};

struct TvResult {
  Image image;
  // costs[k] is the objective after iteration k; costs[0] is the input's.
  std::vector<double> costs;
  int iterations = 0;
};

// Isotropic TV objective 0.5 * ||u - f||^2 + weight * TV(u) (forward
// differences, Neumann boundary). Stops when |E_k - E_{k-1}| < tol * E_0.
TvResult chambolle_tv_run(const Image& img, const TvParams& p = {});
Image chambolle_tv(const Image& img, const TvParams& p = {});

// Anisotropic TV by split Bregman, one Gauss-Seidel sweep per iteration.
// Same objective scaling and stopping rule as chambolle_tv.
TvResult bregman_tv_run(const Image& img, const TvParams& p = {});
Image bregman_tv(const Image& img, const TvParams& p = {});

double total_variation_isotropic(const Image& img);
double total_variation_anisotropic(const Image& img);

struct NlMeansParams {
  int patch = 7;
  int search = 11;
  double h = 0.1;
  double sigma = 0.0;
};
Image nl_means(const Image& img, const NlMeansParams& p = {});

enum class Method {
  Unfiltered,
  Gaussian,
  Bilateral,
  Median,
  Wiener,
  Wavelet,
  ChambolleTv,
  BregmanTv,
  NlMeans,
};

struct DenoiserSpec {
  Method method = Method::Unfiltered;
  BilateralParams bilateral;
  WienerParams wiener;
  WaveletParams wavelet;
  TvParams tv;
  NlMeansParams nl_means;

  // Throws ConfigError for unknown ids.
  static DenoiserSpec parse(const std::string& id);
  // Throws ConfigError when a parameter is out of its domain.
  void validate() const;
  std::string id() const;
};

const char* method_id(Method m);
// All nine ids in table order.
std::vector<std::string> all_method_ids();

Image denoise(const DenoiserSpec& spec, const Image& img);

}  // namespace mdn
