#include "mdn/benchmark.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "mdn/errors.hpp"
#include "mdn/metrics.hpp"
#include "mdn/parallel.hpp"

namespace mdn {

void Welford::add(double x) {
  ++n;
  const double d = x - mean;
  mean += d / static_cast<double>(n);
  m2 += d * (x - mean);
}

double Welford::sample_std() const {
  return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
}

uint64_t hash_image(const Image& img) {
  uint64_t h = 1469598103934665603ull;
  for (double v : img.px) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

BenchmarkResult run_benchmark(const std::vector<DenoiserSpec>& methods,
                              const std::vector<Micrograph>& corpus, const DoseModel& dose,
                              const BenchmarkOptions& opt) {
  if (corpus.empty()) throw InvalidInput("benchmark: empty corpus");
  if (methods.empty()) throw InvalidInput("benchmark: no methods");
  if (opt.trials < 1) throw InvalidInput("benchmark: trials must be >= 1");
  for (const auto& m : methods) m.validate();
  dose.validate();

  const size_t nm = methods.size();
  BenchmarkResult r;
  r.records.resize(static_cast<size_t>(opt.trials) * nm);
  const Rng root(opt.seed);
  parallel_for(opt.trials, opt.threads, [&](int64_t t) {
    Rng rng = root.split(static_cast<uint64_t>(t));
    const Micrograph& m = corpus[static_cast<size_t>(t) % corpus.size()];
    const ImagePair pair = make_pair(m, dose, rng, opt.pair);
    const uint64_t h = hash_image(pair.noisy);
    for (size_t j = 0; j < nm; ++j) {
      const Image out = denoise(methods[j], pair.noisy);
      BenchmarkRecord& rec = r.records[static_cast<size_t>(t) * nm + j];
      rec.method = methods[j].id();
      rec.trial = t;
      rec.dose = pair.dose;
      rec.mse = mse(out, pair.ground_truth);
      rec.ssim = ssim(out, pair.ground_truth);
      rec.noise_hash = h;
    }
  });
  std::vector<std::string> ids;
  for (const auto& m : methods) ids.push_back(m.id());
  r.summary = summarize(r.records, ids);
  return r;
}

std::vector<MethodSummary> summarize(const std::vector<BenchmarkRecord>& records,
                                     const std::vector<std::string>& methods) {
  std::map<std::string, std::pair<Welford, Welford>> acc;
  for (const auto& rec : records) {
    auto& a = acc[rec.method];
    a.first.add(rec.mse);
    a.second.add(rec.ssim);
  }
  std::vector<MethodSummary> out;
  for (const auto& id : methods) {
    const auto& a = acc[id];
    out.push_back({id, a.first.n, a.first.mean, a.first.sample_std(), a.second.mean,
                   a.second.sample_std()});
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10e", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

void write_records_csv(const std::filesystem::path& path,
                       const std::vector<BenchmarkRecord>& records) {
  auto out = open_out(path);
  out << "method,trial,dose,mse,ssim\n";
  for (const auto& r : records) {
    out << r.method << ',' << r.trial << ',' << num(r.dose) << ',' << num(r.mse) << ','
        << num(r.ssim) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<MethodSummary>& rows,
                       const std::string& dose_label) {
  auto out = open_out(path);
  out << "method,dose,n,mse_mean,mse_std_sample,ssim_mean,ssim_std_sample\n";
  for (const auto& s : rows) {
    out << s.method << ',' << csv_field(dose_label) << ',' << s.n << ',' << num(s.mse_mean) << ','
        << num(s.mse_std) << ',' << num(s.ssim_mean) << ',' << num(s.ssim_std) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_kde_csv(const std::filesystem::path& path, const KdeResult& kde) {
  auto out = open_out(path);
  out << "grid,density,normalized\n";
  for (size_t i = 0; i < kde.grid.size(); ++i) {
    out << num(kde.grid[i]) << ',' << num(kde.density[i]) << ',' << num(kde.normalized[i]) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace mdn
