// microdenoise: train, denoise, benchmark, synth, gradcheck, errormap.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mdn/benchmark.hpp"
#include "mdn/checkpoint.hpp"
#include "mdn/clahe.hpp"
#include "mdn/config.hpp"
#include "mdn/denoisers.hpp"
#include "mdn/errors.hpp"
#include "mdn/gradcheck.hpp"
#include "mdn/image_io.hpp"
#include "mdn/kde.hpp"
#include "mdn/metrics.hpp"
#include "mdn/parallel.hpp"
#include "mdn/pipeline.hpp"
#include "mdn/tensor_io.hpp"
#include "mdn/tiling.hpp"
#include "mdn/trainer.hpp"

namespace fs = std::filesystem;
using namespace mdn;

namespace {

// Exit codes. Anything not listed here is a bug and exits with kInternal.
constexpr int kOk = 0;
constexpr int kCheckFailed = 1;  // gradcheck found a mismatch
constexpr int kUsage = 2;        // bad flags, bad config, unknown method
constexpr int kIo = 3;           // missing or unreadable input, unwritable output
constexpr int kNumeric = 4;      // non-finite loss or output
constexpr int kCheckpoint = 5;   // checkpoint missing, corrupt or for another architecture
constexpr int kInput = 6;        // input rejected by an operation (shape, degenerate crop)
constexpr int kInternal = 70;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  uint64_t seed = 0;
  std::string config;
  int threads = default_threads();
  std::string out_dir = ".";
};

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Fills options of `sub` (then the global ones) that were not given on the
// command line from a key=value file; keys are long flag names.
void apply_config_defaults(CLI::App& app, CLI::App& sub, const std::string& path) {
  KeyValues kv = KeyValues::load(path);
  for (const auto& [key, entry] : kv.entries()) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw ConfigError(kv.source() + ":" + std::to_string(entry.line) + ": unknown key '" + key +
                        "' for " + sub.get_name());
    }
    if (opt->count() == 0) {
      opt->add_result(entry.value);
      opt->run_callback();
    }
  }
}

// Every run echoes the settings it actually used.
void log_resolved(const CLI::App& app, const CLI::App& sub) {
  std::cerr << "# " << sub.get_name() << " resolved config\n";
  auto dump = [](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name.empty()) continue;
      const std::string value = opt->count() ? join(opt->results(), ",") : opt->get_default_str();
      std::cerr << name << "=" << value << "\n";
    }
  };
  dump(app);
  dump(sub);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::unique_ptr<TileModel> open_model(const std::string& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("checkpoint directory not found: " + dir);
  try {
    return load_model(dir);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
}

// Sample scale that maps the stored range onto [0, 1]; 1 for float data.
double full_scale(const LoadedImage& li) {
  if (li.format == ImageFormat::Pgm) return li.maxval;
  if (li.format == ImageFormat::Tiff && !li.is_float) return std::ldexp(1.0, li.bits) - 1.0;
  return 1.0;
}

Image scaled(const Image& img, double factor) {
  Image out = img;
  for (double& v : out.px) v *= factor;
  return out;
}

// Pair synthesis shared by synth and errormap. "none" keeps the noisy input
// equal to the ground truth.
ImagePair draw_pair(const Micrograph& m, const std::string& dose, Rng& rng,
                    const PairOptions& popt) {
  if (dose == "none") {
    PairOptions clean = popt;
    clean.noiseless = true;
    return make_pair(m, DoseModel::fixed(1.0), rng, clean);
  }
  return make_pair(m, DoseModel::parse(dose), rng, popt);
}

std::vector<Micrograph> corpus_or_throw(const std::string& spec) {
  size_t skipped = 0;
  auto corpus = load_corpus(spec, &skipped);
  if (skipped > 0) std::cerr << "warning: " << skipped << " corpus entries skipped\n";
  return corpus;
}

void check_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string resume;
  int64_t steps = 0;
};

int run_train(const Globals& g, const CLI::App& app, const TrainArgs& a) {
  if (g.config.empty()) throw ConfigError("train needs --config <file>");
  TrainConfig cfg = TrainConfig::load(g.config);
  if (app.get_option("--seed")->count()) cfg.seed = g.seed;
  if (a.steps > 0) cfg.steps = a.steps;
  cfg.threads = g.threads;
  cfg.validate();
  std::cerr << "# train resolved config\n";
  cfg.to_key_values().write(std::cerr);
  std::cerr << "threads=" << cfg.threads << "\nout_dir=" << g.out_dir << "\n";

  auto train = corpus_or_throw(cfg.train_corpus);
  auto val = corpus_or_throw(cfg.val_corpus);
  check_writable(g.out_dir);
  Trainer trainer(cfg, std::move(train), std::move(val));
  if (!a.resume.empty()) {
    try {
      trainer.resume(a.resume);
    } catch (const IoError& e) {
      throw CheckpointError(e.what());
    }
    std::cerr << "resumed at step " << trainer.step() << "\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  const TrainSummary s = trainer.run(g.out_dir, [](const LogRow& r) {
    std::printf("step %lld loss %.6f%s lr %.3g %s\n", static_cast<long long>(r.step), r.train_loss,
                r.val_loss ? (" val " + std::to_string(*r.val_loss)).c_str() : "", r.lr,
                r.bn_mode.c_str());
    std::fflush(stdout);
  });
  std::printf("trained %lld steps in %.1f s, final loss %.6f, checkpoint %s\n",
              static_cast<long long>(s.steps), elapsed_ms(t0) / 1000.0, s.final_train_loss,
              s.checkpoint.string().c_str());
  if (s.best_val_loss) {
    std::printf("best validation loss %.6f\n", *s.best_val_loss);
  } else {
    std::printf("best validation loss n/a\n");
  }
  return kOk;
}

// --- denoise ---------------------------------------------------------------

struct DenoiseArgs {
  std::string input;
  std::string output;
  std::string model;
  std::string method;
  bool clip = true;
  int64_t overlap = 32;
  int64_t pad = 16;
  bool rescale = true;
};

int run_denoise(const Globals& g, const DenoiseArgs& a) {
  if (a.model.empty() == a.method.empty()) {
    throw ConfigError("denoise needs exactly one of --model or --method");
  }
  if (!fs::exists(a.input)) throw IoError("input not found: " + a.input);
  std::optional<DenoiserSpec> spec;
  std::unique_ptr<TileModel> model;
  if (!a.method.empty()) {
    spec = DenoiserSpec::parse(a.method);
  } else {
    model = open_model(a.model);
  }
  const LoadedImage li = read_image(a.input);
  const double scale = a.rescale ? full_scale(li) : 1.0;

  fs::path out = a.output;
  if (out.empty()) {
    const fs::path in(a.input);
    out = fs::path(g.out_dir) / (in.stem().string() + "_denoised" + in.extension().string());
  }
  check_writable(out.has_parent_path() ? out.parent_path() : fs::path("."));

  const auto t0 = std::chrono::steady_clock::now();
  const Image img = scaled(li.image, 1.0 / scale);
  Image result;
  int64_t tiles = 0;
  if (spec) {
    result = denoise(*spec, img);
  } else {
    TileConfig tc;
    tc.tile = model->tile_size();
    tc.overlap = a.overlap;
    tc.pad = a.pad;
    tc.clip_output = a.clip;
    tc.threads = g.threads;
    TilingStats st;
    result = denoise_image(*model, img, tc, &st);
    tiles = st.forward_calls;
  }
  for (double v : result.px) {
    if (!std::isfinite(v)) throw NumericError("denoised output contains non-finite values");
  }
  const double ms = elapsed_ms(t0);
  // Unit scale keeps the samples bit-identical for the identity paths.
  write_like(out, scale == 1.0 ? result : scaled(result, scale), li);
  std::printf("%s -> %s %lldx%lld %s %.1f ms", a.input.c_str(), out.string().c_str(),
              static_cast<long long>(img.height), static_cast<long long>(img.width),
              spec ? spec->id().c_str() : "model", ms);
  if (!spec) std::printf(" tiles %lld", static_cast<long long>(tiles));
  std::printf("\n");
  return kOk;
}

// --- benchmark -------------------------------------------------------------

struct BenchmarkArgs {
  std::string corpus;
  std::string dose = "low";
  int64_t trials = 100;
  std::string methods;
  int64_t crop = 512;
  bool downsample = true;
};

int run_benchmark_verb(const Globals& g, const BenchmarkArgs& a) {
  const DoseModel dose = DoseModel::parse(a.dose);
  std::vector<DenoiserSpec> methods;
  const auto ids = a.methods.empty() ? all_method_ids() : split_list(a.methods);
  for (const auto& id : ids) methods.push_back(DenoiserSpec::parse(id));
  if (a.trials < 1) throw ConfigError("--trials must be >= 1");
  const auto corpus = corpus_or_throw(a.corpus);

  BenchmarkOptions opt;
  opt.trials = a.trials;
  opt.seed = g.seed;
  opt.threads = g.threads;
  opt.pair.crop = a.crop;
  opt.pair.downsample = a.downsample;
  const fs::path out(g.out_dir);
  check_writable(out);

  const auto t0 = std::chrono::steady_clock::now();
  const BenchmarkResult r = run_benchmark(methods, corpus, dose, opt);
  write_records_csv(out / "records.csv", r.records);
  write_summary_csv(out / "summary.csv", r.summary, a.dose);

  // Densities per metric, normalised jointly across methods.
  for (const std::string metric : {"mse", "ssim"}) {
    std::vector<KdeResult> set;
    for (const auto& m : methods) {
      std::vector<double> values;
      for (const auto& rec : r.records) {
        if (rec.method == m.id()) values.push_back(metric == "mse" ? rec.mse : rec.ssim);
      }
      if (values.size() < 2) continue;
      set.push_back(kde_pdf(values, metric == "mse" ? KdeConfig::mse() : KdeConfig::ssim()));
    }
    if (set.size() != methods.size()) continue;
    normalize_set(set);
    for (size_t i = 0; i < set.size(); ++i) {
      write_kde_csv(out / ("kde_" + metric + "_" + methods[i].id() + ".csv"), set[i]);
    }
  }

  std::printf("%-14s %6s %12s %12s %9s %9s\n", "method", "n", "mse_mean", "mse_std", "ssim",
              "ssim_std");
  for (const auto& s : r.summary) {
    std::printf("%-14s %6lld %12.4e %12.4e %9.4f %9.4f\n", s.method.c_str(),
                static_cast<long long>(s.n), s.mse_mean, s.mse_std, s.ssim_mean, s.ssim_std);
  }
  std::printf("%lld trials x %zu methods in %.1f s, wrote %s\n", static_cast<long long>(a.trials),
              methods.size(), elapsed_ms(t0) / 1000.0, out.string().c_str());
  return kOk;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  int64_t phantoms = 0;
  int64_t size = 512;
  std::string corpus;
  int64_t pairs = 0;
  std::string dose = "low";
  int64_t crop = 512;
  bool downsample = true;
  int64_t stub_checkpoint = 0;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  const fs::path out(g.out_dir);
  check_writable(out);
  if (a.phantoms == 0 && a.pairs == 0 && a.stub_checkpoint == 0) {
    throw ConfigError("synth: nothing to do (use --phantoms, --pairs or --stub-checkpoint)");
  }
  if (a.phantoms > 0) {
    const fs::path dir = out / "micrographs";
    check_writable(dir);
    std::vector<fs::path> entries;
    for (int64_t i = 0; i < a.phantoms; ++i) {
      const Image img = phantom_micrograph(a.size, combine_seed(g.seed, static_cast<uint64_t>(i)));
      char name[32];
      std::snprintf(name, sizeof name, "phantom_%04lld.pgm", static_cast<long long>(i));
      write_pgm(dir / name, clipped(img, 0, 65535), 16);
      entries.emplace_back(fs::path("micrographs") / name);
    }
    write_manifest(out / "micrographs.txt", entries);
    std::printf("wrote %lld phantoms, manifest %s\n", static_cast<long long>(a.phantoms),
                (out / "micrographs.txt").string().c_str());
  }
  if (a.pairs > 0) {
    if (a.corpus.empty()) throw ConfigError("synth --pairs needs --corpus");
    const auto corpus = corpus_or_throw(a.corpus);
    PairOptions popt;
    popt.crop = a.crop;
    popt.downsample = a.downsample;
    const fs::path dir = out / "pairs";
    check_writable(dir);
    std::ofstream index(out / "pairs.csv");
    if (!index) throw IoError("cannot write " + (out / "pairs.csv").string());
    index << "pair,noisy,truth,dose,source\n";
    const Rng root(g.seed);
    for (int64_t i = 0; i < a.pairs; ++i) {
      const Micrograph& m = corpus[static_cast<size_t>(i) % corpus.size()];
      Rng rng = root.split(static_cast<uint64_t>(i));
      const ImagePair p = draw_pair(m, a.dose, rng, popt);
      char stem[32];
      std::snprintf(stem, sizeof stem, "%04lld", static_cast<long long>(i));
      const std::string noisy = std::string("pairs/noisy_") + stem + ".tiff";
      const std::string truth = std::string("pairs/truth_") + stem + ".tiff";
      write_tiff(out / noisy, p.noisy, true);
      write_tiff(out / truth, p.ground_truth, true);
      index << i << "," << noisy << "," << truth << "," << format_double(p.dose) << ","
            << m.source.string() << "\n";
    }
    std::printf("wrote %lld pairs, index %s\n", static_cast<long long>(a.pairs),
                (out / "pairs.csv").string().c_str());
  }
  if (a.stub_checkpoint > 0) {
    const fs::path dir = out / "identity_checkpoint";
    save_identity_checkpoint(dir, a.stub_checkpoint);
    std::printf("wrote identity checkpoint %s (tile %lld)\n", dir.string().c_str(),
                static_cast<long long>(a.stub_checkpoint));
  }
  return kOk;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::string scale = "1/8";
  int64_t input = 64;
  bool skip_network = false;
  std::string corrupt;
};

double parse_scale(const std::string& s) {
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return std::stod(s);
    return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
  } catch (const std::exception&) {
    throw ConfigError("--scale: expected a number or a fraction like 1/8, got '" + s + "'");
  }
}

int run_gradcheck_verb(const Globals& g, const GradcheckArgs& a) {
  GradCheckOptions opt;
  opt.seed = g.seed;
  opt.width_multiplier = parse_scale(a.scale);
  opt.network_input = a.input;
  opt.include_network = !a.skip_network;
  opt.corrupt = a.corrupt;
  if (!(opt.width_multiplier > 0 && opt.width_multiplier <= 1)) {
    throw ConfigError("--scale must be in (0, 1]");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck(opt);
  int failed = 0;
  std::printf("%-28s %12s %10s %7s  %s\n", "check", "max_rel_err", "tolerance", "probes",
              "result");
  for (const auto& r : results) {
    std::printf("%-28s %12.3e %10.0e %7lld  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                static_cast<long long>(r.checked), r.pass ? "PASS" : "FAIL");
    failed += r.pass ? 0 : 1;
  }
  std::printf("%zu checks, %d failed, %.1f s\n", results.size(), failed, elapsed_ms(t0) / 1000.0);
  return failed ? kCheckFailed : kOk;
}

// --- errormap --------------------------------------------------------------

struct ErrormapArgs {
  std::string model;
  std::string corpus;
  int64_t trials = 20;
  std::string dose = "low";
  bool downsample = true;
  bool clip = true;
  double clahe_clip = 2.0;
};

void write_map_pgm(const fs::path& path, const Image& img01) {
  write_pgm(path, scaled(clipped(img01, 0, 1), 65535.0), 16);
}

int run_errormap(const Globals& g, const ErrormapArgs& a) {
  const auto model = open_model(a.model);
  if (a.trials < 1) throw ConfigError("--trials must be >= 1");
  const auto corpus = corpus_or_throw(a.corpus);
  const fs::path out(g.out_dir);
  check_writable(out);

  TileConfig tc;
  tc.tile = model->tile_size();
  tc.clip_output = a.clip;
  tc.threads = g.threads;
  PairOptions popt;
  popt.crop = model->tile_size();
  popt.downsample = a.downsample;

  const Rng root(g.seed);
  std::vector<Image> errors;
  errors.reserve(static_cast<size_t>(a.trials));
  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t t = 0; t < a.trials; ++t) {
    Rng rng = root.split(static_cast<uint64_t>(t));
    const ImagePair p = draw_pair(corpus[static_cast<size_t>(t) % corpus.size()], a.dose, rng, popt);
    const Image den = denoise_image(*model, p.noisy, tc);
    Image err(den.height, den.width);
    for (size_t i = 0; i < err.px.size(); ++i) err.px[i] = std::abs(den.px[i] - p.ground_truth.px[i]);
    errors.push_back(std::move(err));
  }
  const MaeMap m = mae_map(errors);
  const double peak = m.map.max();
  const Image shown = peak > 0 ? scaled(m.map, 1.0 / peak) : m.map;
  ClaheParams cp;
  cp.clip_limit = a.clahe_clip;

  write_mdtn_image(out / "mae_map.mdtn", m.map);
  write_map_pgm(out / "mae_map.pgm", shown);
  write_map_pgm(out / "mae_map_clahe.pgm", peak > 0 ? clahe(shown, cp) : shown);
  {
    std::ofstream f(out / "mae.txt");
    if (!f) throw IoError("cannot write " + (out / "mae.txt").string());
    f << "mean_absolute_error=" << format_double(m.mean) << "\n"
      << "max_pixel_error=" << format_double(peak) << "\n"
      << "trials=" << a.trials << "\n";
  }
  std::printf("mean_absolute_error=%s max=%s trials=%lld %.1f s\n", format_double(m.mean).c_str(),
              format_double(peak).c_str(), static_cast<long long>(a.trials),
              elapsed_ms(t0) / 1000.0);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Electron micrograph denoising toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random decision");
  app.add_option("--config", g.config,
                 "train: training config file; other verbs: key=value flag defaults");
  app.add_option("--threads", g.threads, "Worker threads (default $MICRODENOISE_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Directory for outputs");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the encoder-decoder network");
  train->add_option("--resume", ta.resume, "Checkpoint directory to continue from");
  train->add_option("--steps", ta.steps, "Override the configured number of steps");

  DenoiseArgs da;
  auto* den = app.add_subcommand("denoise", "Denoise one image with a checkpoint or a classical method");
  den->add_option("--input", da.input, "Image to denoise (PGM, TIFF or MDTN)")->required();
  den->add_option("--output", da.output, "Output path (default <out-dir>/<stem>_denoised<ext>)");
  auto* m_opt = den->add_option("--model", da.model, "Checkpoint directory");
  auto* c_opt = den->add_option("--method", da.method, "Classical method id");
  m_opt->excludes(c_opt);
  den->add_option("--clip", da.clip, "Clip network output to [0, 1]");
  den->add_option("--overlap", da.overlap, "Tile overlap in pixels")->check(CLI::NonNegativeNumber);
  den->add_option("--pad", da.pad, "Reflection padding in pixels")->check(CLI::NonNegativeNumber);
  den->add_option("--rescale", da.rescale,
                  "Map integer samples to [0, 1] by their full scale before denoising");

  BenchmarkArgs ba;
  auto* bench = app.add_subcommand("benchmark", "Compare classical denoisers on synthetic pairs");
  bench->add_option("--corpus", ba.corpus, "Manifest or phantom:<count>:<size>[:<seed>]")->required();
  bench->add_option("--dose", ba.dose, "low | ordinary | fixed:<dose> | exp:<b>,<o> | uniform:<lo>,<hi>");
  bench->add_option("--trials", ba.trials, "Number of pairs");
  bench->add_option("--methods", ba.methods, "Comma-separated method ids (default all)");
  bench->add_option("--crop", ba.crop, "Crop size in pixels");
  bench->add_option("--downsample", ba.downsample, "2x area downsample before cropping");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write phantom micrographs, noisy pairs or a stub checkpoint");
  synth->add_option("--phantoms", sa.phantoms, "Number of phantom micrographs to write");
  synth->add_option("--size", sa.size, "Phantom edge length");
  synth->add_option("--corpus", sa.corpus, "Corpus to draw pairs from");
  synth->add_option("--pairs", sa.pairs, "Number of noisy/clean pairs to write");
  synth->add_option("--dose", sa.dose, "Dose model, or none for noiseless pairs");
  synth->add_option("--crop", sa.crop, "Pair crop size");
  synth->add_option("--downsample", sa.downsample, "2x area downsample before cropping");
  synth->add_option("--stub-checkpoint", sa.stub_checkpoint,
                    "Write an identity checkpoint with this tile size");

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad->add_option("--scale", ga.scale, "Network width multiplier, e.g. 1/8");
  grad->add_option("--input", ga.input, "Network input size");
  grad->add_flag("--skip-network", ga.skip_network, "Only the single-op checks");
  grad->add_option("--corrupt", ga.corrupt, "Test hook: perturb the analytic gradient of this check");

  ErrormapArgs ea;
  auto* emap = app.add_subcommand("errormap", "Mean absolute error map of a model over a corpus");
  emap->add_option("--model", ea.model, "Checkpoint directory")->required();
  emap->add_option("--corpus", ea.corpus, "Manifest or phantom:<count>:<size>[:<seed>]")->required();
  emap->add_option("--trials", ea.trials, "Number of pairs");
  emap->add_option("--dose", ea.dose, "Dose model, or none for noiseless pairs");
  emap->add_option("--downsample", ea.downsample, "2x area downsample before cropping");
  emap->add_option("--clip", ea.clip, "Clip network output to [0, 1]");
  emap->add_option("--clahe-clip", ea.clahe_clip, "CLAHE clip limit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (!g.config.empty() && sub != train) {
      try {
        apply_config_defaults(app, *sub, g.config);
      } catch (const CLI::Error& e) {
        throw ConfigError(g.config + ": " + e.what());
      }
    }
    if (sub != train) log_resolved(app, *sub);
    if (sub == train) return run_train(g, app, ta);
    if (sub == den) return run_denoise(g, da);
    if (sub == bench) return run_benchmark_verb(g, ba);
    if (sub == synth) return run_synth(g, sa);
    if (sub == grad) return run_gradcheck_verb(g, ga);
    if (sub == emap) return run_errormap(g, ea);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
