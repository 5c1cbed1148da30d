#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdn/denoisers.hpp"
#include "mdn/kde.hpp"
#include "mdn/pipeline.hpp"

namespace mdn {

struct BenchmarkRecord {
  std::string method;
  int64_t trial = 0;
  double dose = 0;
  double mse = 0;
  double ssim = 0;
  uint64_t noise_hash = 0;  // hash of the noisy input every method saw
};

// Streaming mean and sample variance.
struct Welford {
  int64_t n = 0;
  double mean = 0;
  double m2 = 0;

  void add(double x);
  double sample_std() const;
};

struct MethodSummary {
  std::string method;
  int64_t n = 0;
  double mse_mean = 0, mse_std = 0;
  double ssim_mean = 0, ssim_std = 0;
};

struct BenchmarkOptions {
  int64_t trials = 100;
  uint64_t seed = 0;
  int threads = 1;
  PairOptions pair;
};

struct BenchmarkResult {
  std::vector<BenchmarkRecord> records;  // trial-major, methods in the given order
  std::vector<MethodSummary> summary;    // one row per method
};

uint64_t hash_image(const Image& img);

// Trial t draws its pair from corpus[t % size] with Rng(seed).split(t); every
// method denoises the same noisy realisation. Output order does not depend on
// the thread count.
BenchmarkResult run_benchmark(const std::vector<DenoiserSpec>& methods,
                              const std::vector<Micrograph>& corpus, const DoseModel& dose,
                              const BenchmarkOptions& opt);

std::vector<MethodSummary> summarize(const std::vector<BenchmarkRecord>& records,
                                     const std::vector<std::string>& methods);

void write_records_csv(const std::filesystem::path& path,
                       const std::vector<BenchmarkRecord>& records);
void write_summary_csv(const std::filesystem::path& path, const std::vector<MethodSummary>& rows,
                       const std::string& dose_label);
void write_kde_csv(const std::filesystem::path& path, const KdeResult& kde);

}  // namespace mdn
