#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "mdn/image.hpp"
#include "mdn/rng.hpp"

namespace mdn {

// High-dose source image in electron counts per pixel.
struct Micrograph {
  Image counts;
  std::filesystem::path source;
  double mean_counts = 0.0;

  Micrograph() = default;
  explicit Micrograph(Image img, std::filesystem::path src = {});
};

Micrograph load_micrograph(const std::filesystem::path& path);

struct LowDoseExponential {
  double beta = 75.0;
  double offset = 25.0;
};
struct OrdinaryUniform {
  double lo = 200.0;
  double hi = 2500.0;
};
struct FixedDose {
  double dose = 1000.0;
};

// Distribution over the per-crop dose (counts per pixel at value 1.0).
struct DoseModel {
  std::variant<LowDoseExponential, OrdinaryUniform, FixedDose> variant;

  static DoseModel low_dose() { return {LowDoseExponential{}}; }
  static DoseModel ordinary() { return {OrdinaryUniform{}}; }
  static DoseModel fixed(double dose) { return {FixedDose{dose}}; }
  // "low" | "ordinary" | "fixed:<dose>" | "exp:<beta>,<offset>" | "uniform:<lo>,<hi>"
  static DoseModel parse(const std::string& text);

  void validate() const;
  std::string str() const;
};

double sample_dose(const DoseModel& model, Rng& rng);

// 2x2 block means. Requires even dimensions.
Image area_downsample_2x(const Image& img);
Micrograph area_downsample_2x(const Micrograph& m);

struct CropOrigin {
  int64_t y = 0;
  int64_t x = 0;
};

// Uniform over all valid top-left corners.
CropOrigin random_crop_origin(const Image& img, int64_t size, Rng& rng);
Image random_crop(const Image& img, int64_t size, Rng& rng, CropOrigin* origin = nullptr);

// Element k of the symmetry group of the square: k & 3 quarter turns
// (counter-clockwise), preceded by a left-right mirror when k >= 4.
Image augment8(const Image& crop, int k);

// Affine map min -> 0, max -> 1. Throws DegenerateInput on constant images.
Image normalize01(const Image& img);

// Per pixel Poisson(dose * value) / dose.
Image apply_poisson(const Image& img01, double dose, Rng& rng);

struct ImagePair {
  Image noisy;
  Image ground_truth;
  double dose = 0.0;
  CropOrigin origin;
  int augment = 0;
};

struct PairOptions {
  int64_t crop = 512;
  bool downsample = true;
  // Constant or black crops are redrawn at a new origin up to this many times.
  int max_attempts = 32;
  // Skip dose and counting noise: noisy == ground_truth, dose 0.
  bool noiseless = false;
};

// downsample -> crop -> augment -> normalise -> dose -> Poisson -> mean-match truth.
ImagePair make_pair(const Micrograph& m, const DoseModel& dose, Rng& rng,
                    const PairOptions& options = {});

// Procedural stand-in for a high-dose micrograph: smooth background, particles
// and lattice fringes, with counts-level shot noise when `shot_noise` is set.
Image phantom_micrograph(int64_t size, uint64_t seed, double mean_counts = 4000.0,
                         bool shot_noise = true);

struct DatasetSplit {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> validation;
  std::vector<std::filesystem::path> test;
};

// Seeded shuffle, then 11350 : 2431 : 3486 proportions.
DatasetSplit split_dataset(std::vector<std::filesystem::path> paths, uint64_t seed);

}  // namespace mdn
