#include "mdn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mdn/errors.hpp"
#include "mdn/image_io.hpp"

namespace mdn {

Micrograph::Micrograph(Image img, std::filesystem::path src)
    : counts(std::move(img)), source(std::move(src)) {
  for (double v : counts.px) {
    if (!(v >= 0.0)) throw InvalidInput("micrograph counts must be finite and >= 0");
  }
  mean_counts = counts.mean();
}

Micrograph load_micrograph(const std::filesystem::path& path) {
  return Micrograph(read_image(path).image, path);
}

namespace {

std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("dose model: bad number '" + item + "'");
    }
  }
  return out;
}

}  // namespace

DoseModel DoseModel::parse(const std::string& text) {
  DoseModel m;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
  const auto nums = parse_numbers(args);
  if (kind == "low" && nums.empty()) {
    m = low_dose();
  } else if (kind == "ordinary" && nums.empty()) {
    m = ordinary();
  } else if (kind == "fixed" && nums.size() == 1) {
    m = fixed(nums[0]);
  } else if (kind == "exp" && nums.size() == 2) {
    m.variant = LowDoseExponential{nums[0], nums[1]};
  } else if (kind == "uniform" && nums.size() == 2) {
    m.variant = OrdinaryUniform{nums[0], nums[1]};
  } else {
    throw ConfigError("unrecognised dose model '" + text +
                      "' (expected low, ordinary, fixed:D, exp:B,O or uniform:LO,HI)");
  }
  m.validate();
  return m;
}

void DoseModel::validate() const {
  if (const auto* e = std::get_if<LowDoseExponential>(&variant)) {
    if (!(e->beta > 0.0) || !(e->offset >= 0.0)) {
      throw ConfigError("exponential dose needs beta > 0 and offset >= 0");
    }
  } else if (const auto* u = std::get_if<OrdinaryUniform>(&variant)) {
    if (!(u->lo < u->hi) || !(u->lo > 0.0)) throw ConfigError("uniform dose needs 0 < lo < hi");
  } else if (const auto* f = std::get_if<FixedDose>(&variant)) {
    if (!(f->dose > 0.0)) throw ConfigError("fixed dose must be > 0");
  }
}

std::string DoseModel::str() const {
  std::ostringstream os;
  os.precision(17);
  if (const auto* e = std::get_if<LowDoseExponential>(&variant)) {
    os << "exp:" << e->beta << "," << e->offset;
  } else if (const auto* u = std::get_if<OrdinaryUniform>(&variant)) {
    os << "uniform:" << u->lo << "," << u->hi;
  } else if (const auto* f = std::get_if<FixedDose>(&variant)) {
    os << "fixed:" << f->dose;
  }
  return os.str();
}

double sample_dose(const DoseModel& model, Rng& rng) {
  if (const auto* e = std::get_if<LowDoseExponential>(&model.variant)) {
    return e->offset + rng.exponential(e->beta);
  }
  if (const auto* u = std::get_if<OrdinaryUniform>(&model.variant)) {
    return rng.uniform(u->lo, u->hi);
  }
  return std::get<FixedDose>(model.variant).dose;
}

Image area_downsample_2x(const Image& img) {
  if (img.height % 2 != 0 || img.width % 2 != 0) {
    throw InvalidInput("area_downsample_2x: dimensions must be even, got " +
                       std::to_string(img.height) + "x" + std::to_string(img.width));
  }
  Image out(img.height / 2, img.width / 2);
  for (int64_t y = 0; y < out.height; ++y) {
    for (int64_t x = 0; x < out.width; ++x) {
      out.at(y, x) = 0.25 * (img.at(2 * y, 2 * x) + img.at(2 * y, 2 * x + 1) +
                             img.at(2 * y + 1, 2 * x) + img.at(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

Micrograph area_downsample_2x(const Micrograph& m) {
  return Micrograph(area_downsample_2x(m.counts), m.source);
}

CropOrigin random_crop_origin(const Image& img, int64_t size, Rng& rng) {
  if (size <= 0 || img.height < size || img.width < size) {
    throw InvalidInput("random_crop: image " + std::to_string(img.height) + "x" +
                       std::to_string(img.width) + " smaller than crop " + std::to_string(size));
  }
  CropOrigin o;
  o.y = rng.uniform_int(0, img.height - size);
  o.x = rng.uniform_int(0, img.width - size);
  return o;
}

Image random_crop(const Image& img, int64_t size, Rng& rng, CropOrigin* origin) {
  const CropOrigin o = random_crop_origin(img, size, rng);
  if (origin) *origin = o;
  return crop(img, o.y, o.x, size, size);
}

Image augment8(const Image& in, int k) {
  if (k < 0 || k > 7) throw InvalidInput("augment8: k must be in [0, 7], got " + std::to_string(k));
  if (in.height != in.width) throw InvalidInput("augment8: crop must be square");
  const int64_t n = in.height;
  Image cur = in;
  if (k >= 4) {
    for (int64_t y = 0; y < n; ++y) {
      for (int64_t x = 0; x < n; ++x) cur.at(y, x) = in.at(y, n - 1 - x);
    }
  }
  for (int r = 0; r < (k & 3); ++r) {
    Image next(n, n);
    for (int64_t y = 0; y < n; ++y) {
      for (int64_t x = 0; x < n; ++x) next.at(y, x) = cur.at(x, n - 1 - y);
    }
    cur = std::move(next);
  }
  return cur;
}

Image normalize01(const Image& img) {
  const double lo = img.min();
  const double hi = img.max();
  if (img.empty() || !(hi > lo)) throw DegenerateInput("normalize01: constant image");
  Image out(img.height, img.width);
  const double inv = 1.0 / (hi - lo);
  for (int64_t i = 0; i < img.size(); ++i) out.px[i] = (img.px[i] - lo) * inv;
  // Pin the extremes exactly; (max - lo) * inv can land one ulp off 1.
  for (int64_t i = 0; i < img.size(); ++i) {
    if (img.px[i] == lo) out.px[i] = 0.0;
    if (img.px[i] == hi) out.px[i] = 1.0;
  }
  return out;
}

Image apply_poisson(const Image& img01, double dose, Rng& rng) {
  if (!(dose > 0.0)) throw InvalidInput("apply_poisson: dose must be > 0");
  Image out(img01.height, img01.width);
  for (int64_t i = 0; i < img01.size(); ++i) {
    const double v = img01.px[i];
    if (v < 0.0) throw InvalidInput("apply_poisson: negative pixel value");
    out.px[i] = v == 0.0 ? 0.0 : static_cast<double>(rng.poisson(dose * v)) / dose;
  }
  return out;
}

ImagePair make_pair(const Micrograph& m, const DoseModel& dose, Rng& rng,
                    const PairOptions& options) {
  dose.validate();
  const Image source = options.downsample ? area_downsample_2x(m.counts) : m.counts;
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    ImagePair pair;
    Image c = random_crop(source, options.crop, rng, &pair.origin);
    pair.augment = static_cast<int>(rng.uniform_int(0, 7));
    c = augment8(c, pair.augment);
    Image truth;
    try {
      truth = normalize01(c);
    } catch (const DegenerateInput&) {
      continue;
    }
    if (options.noiseless) {
      pair.noisy = truth;
      pair.ground_truth = std::move(truth);
      return pair;
    }
    pair.dose = sample_dose(dose, rng);
    pair.noisy = apply_poisson(truth, pair.dose, rng);
    const double truth_mean = truth.mean();
    if (truth_mean < 1e-8) continue;
    const double factor = pair.noisy.mean() / truth_mean;
    for (auto& v : truth.px) v *= factor;
    pair.ground_truth = std::move(truth);
    return pair;
  }
  throw DegenerateInput("make_pair: no usable crop in " + std::to_string(options.max_attempts) +
                        " attempts from " + m.source.string());
}

Image phantom_micrograph(int64_t size, uint64_t seed, double mean_counts, bool shot_noise) {
  if (size < 8) throw InvalidInput("phantom_micrograph: size must be >= 8");
  Rng rng(seed, 0x5048414E544F4Dull);
  const double s = static_cast<double>(size);
  Image img(size, size);

  const double gx = rng.uniform(-0.3, 0.3);
  const double gy = rng.uniform(-0.3, 0.3);
  const double f1 = rng.uniform(0.5, 2.0), f2 = rng.uniform(0.5, 2.0);
  const double ph1 = rng.uniform(0, 2 * std::numbers::pi), ph2 = rng.uniform(0, 2 * std::numbers::pi);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double u = x / s, v = y / s;
      img.at(y, x) = 1.0 + gx * u + gy * v +
                     0.15 * std::sin(2 * std::numbers::pi * f1 * u + ph1) *
                         std::cos(2 * std::numbers::pi * f2 * v + ph2);
    }
  }

  // Lattice fringes inside a disc.
  const double cx = rng.uniform(0.2, 0.8) * s, cy = rng.uniform(0.2, 0.8) * s;
  const double radius = rng.uniform(0.15, 0.35) * s;
  const double period = rng.uniform(4.0, 10.0);
  const double angle = rng.uniform(0, std::numbers::pi);
  const double kx = std::cos(angle) * 2 * std::numbers::pi / period;
  const double ky = std::sin(angle) * 2 * std::numbers::pi / period;
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double r = std::hypot(x - cx, y - cy);
      if (r < radius) {
        const double edge = std::clamp((radius - r) / 3.0, 0.0, 1.0);
        img.at(y, x) += 0.35 * edge * std::cos(kx * x + ky * y);
      }
    }
  }

  // Particles.
  const int64_t count = std::max<int64_t>(3, size * size / 1500);
  for (int64_t p = 0; p < count; ++p) {
    const double px = rng.uniform(0, s), py = rng.uniform(0, s);
    const double sigma = rng.uniform(1.0, std::max(1.5, s / 24.0));
    const double amp = rng.uniform(-0.6, 0.8);
    const int64_t reach = static_cast<int64_t>(std::ceil(3 * sigma));
    for (int64_t y = std::max<int64_t>(0, static_cast<int64_t>(py) - reach);
         y < std::min(size, static_cast<int64_t>(py) + reach + 1); ++y) {
      for (int64_t x = std::max<int64_t>(0, static_cast<int64_t>(px) - reach);
           x < std::min(size, static_cast<int64_t>(px) + reach + 1); ++x) {
        const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
        img.at(y, x) += amp * std::exp(-d2 / (2 * sigma * sigma));
      }
    }
  }

  const double lo = img.min();
  for (auto& v : img.px) v = v - lo + 0.2;
  const double k = mean_counts / img.mean();
  for (auto& v : img.px) {
    v *= k;
    if (shot_noise) v = static_cast<double>(rng.poisson(v));
  }
  return img;
}

DatasetSplit split_dataset(std::vector<std::filesystem::path> paths, uint64_t seed) {
  Rng rng(seed, 0x53504C4954ull);
  for (size_t i = paths.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(paths[i - 1], paths[j]);
  }
  constexpr double kTrain = 11350.0, kVal = 2431.0, kTotal = 11350.0 + 2431.0 + 3486.0;
  const size_t n = paths.size();
  size_t n_train = static_cast<size_t>(std::llround(n * kTrain / kTotal));
  size_t n_val = static_cast<size_t>(std::llround(n * kVal / kTotal));
  if (n >= 2 && n_val == 0) n_val = 1;
  if (n_train + n_val > n) n_train = n - n_val;
  DatasetSplit s;
  s.train.assign(paths.begin(), paths.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(paths.begin() + static_cast<std::ptrdiff_t>(n_train),
                      paths.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(paths.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), paths.end());
  return s;
}

}  // namespace mdn
