#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "mdn/image_io.hpp"
#include "support.hpp"

using namespace mdn;
using mdn::test::scratch_dir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI inside `dir`, capturing stdout and stderr together.
Run cli(const std::filesystem::path& dir, const std::string& args) {
  const auto log = dir / "cli_output.txt";
  const std::string cmd =
      "cd '" + dir.string() + "' && '" MDN_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

std::vector<std::string> csv_lines(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::stringstream ss(slurp(p));
  std::string l;
  while (std::getline(ss, l)) out.push_back(l);
  return out;
}

// Corpus of small phantoms plus an identity checkpoint, shared by most cases.
std::filesystem::path fixture() {
  static const std::filesystem::path dir = [] {
    auto d = scratch_dir("cli_fixture");
    const Run r = cli(d, "synth --phantoms 3 --size 128 --stub-checkpoint 64");
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("synth writes phantoms and a manifest") {
  const auto d = fixture();
  CHECK(std::filesystem::exists(d / "micrographs" / "phantom_0002.pgm"));
  CHECK(read_manifest(d / "micrographs.txt").size() == 3);
  CHECK(std::filesystem::exists(d / "identity_checkpoint" / "manifest.txt"));

  const auto p = scratch_dir("cli_pairs");
  const Run r = cli(p, "synth --corpus '" + (d / "micrographs.txt").string() +
                           "' --pairs 2 --crop 32 --dose fixed:500");
  REQUIRE(r.code == 0);
  const Image noisy = read_image(p / "pairs" / "noisy_0001.tiff").image;
  const Image truth = read_image(p / "pairs" / "truth_0001.tiff").image;
  CHECK(noisy.height == 32);
  CHECK(noisy.mean() == doctest::Approx(truth.mean()).epsilon(1e-5));
  CHECK(csv_lines(p / "pairs.csv").size() == 3);
}

TEST_CASE("denoise") {
  const auto d = fixture();
  const std::string in = "'" + (d / "micrographs" / "phantom_0000.pgm").string() + "'";
  const Image original = read_image(d / "micrographs" / "phantom_0000.pgm").image;

  SUBCASE("unfiltered is the identity") {
    const Run r = cli(d, "denoise --input " + in + " --method unfiltered --output un.pgm");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("# denoise resolved config") != std::string::npos);
    CHECK(r.out.find(" ms") != std::string::npos);
    CHECK(read_image(d / "un.pgm").image.px == original.px);
  }
  SUBCASE("identity stub checkpoint is the identity") {
    const Run r = cli(d, "denoise --input " + in + " --model identity_checkpoint --output id.pgm");
    REQUIRE(r.code == 0);
    CHECK(read_image(d / "id.pgm").image.px == original.px);
  }
  SUBCASE("reruns are identical") {
    REQUIRE(cli(d, "--seed 4 denoise --input " + in + " --method nl_means --output a.pgm").code == 0);
    REQUIRE(cli(d, "--seed 4 --threads 2 denoise --input " + in + " --method nl_means --output b.pgm").code == 0);
    CHECK(slurp(d / "a.pgm") == slurp(d / "b.pgm"));
  }
  SUBCASE("config file supplies flag defaults") {
    std::ofstream(d / "flags.cfg") << "# defaults\nmethod = median\noutput = cfg.pgm\n";
    const Run r = cli(d, "--config flags.cfg denoise --input " + in);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("method=median") != std::string::npos);
    CHECK(std::filesystem::exists(d / "cfg.pgm"));
    std::ofstream(d / "typo.cfg") << "methd = median\n";
    const Run bad = cli(d, "--config typo.cfg denoise --input " + in);
    CHECK(bad.code == 2);
    CHECK(bad.out.find("methd") != std::string::npos);
  }
  SUBCASE("errors have distinct exit codes") {
    CHECK(cli(d, "denoise --input nowhere.pgm --method gaussian").code == 3);
    CHECK(cli(d, "denoise --input " + in + " --method sharpen").code == 2);
    CHECK(cli(d, "denoise --input " + in + " --method gaussian --model identity_checkpoint").code == 2);
    CHECK(cli(d, "denoise --input " + in + " --model micrographs").code == 5);
    CHECK(cli(d, "denoise --input " + in + " --method gaussian --bogus 1").code == 2);
    CHECK(cli(d, "").code == 2);
  }
}

TEST_CASE("benchmark") {
  const auto d = fixture();
  const std::string corpus = " --corpus micrographs.txt --crop 48";
  SUBCASE("high dose unfiltered") {
    const Run r = cli(d, "--out-dir hd benchmark" + corpus + " --methods unfiltered --dose fixed:1000000 --trials 3");
    REQUIRE(r.code == 0);
    const auto rows = csv_lines(d / "hd" / "summary.csv");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == "method,dose,n,mse_mean,mse_std_sample,ssim_mean,ssim_std_sample");
    std::stringstream fields(rows[1]);
    std::vector<std::string> f;
    for (std::string x; std::getline(fields, x, ',');) f.push_back(x);
    REQUIRE(f.size() == 7);
    CHECK(f[0] == "unfiltered");
    CHECK(std::stod(f[3]) < 1e-4);
  }
  SUBCASE("row counts and reruns") {
    const std::string args = "benchmark" + corpus + " --methods unfiltered,gaussian,median --trials 4";
    REQUIRE(cli(d, "--out-dir b1 --threads 1 " + args).code == 0);
    REQUIRE(cli(d, "--out-dir b2 --threads 3 " + args).code == 0);
    CHECK(csv_lines(d / "b1" / "summary.csv").size() == 4);
    CHECK(csv_lines(d / "b1" / "records.csv").size() == 13);
    CHECK(slurp(d / "b1" / "records.csv") == slurp(d / "b2" / "records.csv"));
    CHECK(slurp(d / "b1" / "summary.csv") == slurp(d / "b2" / "summary.csv"));
    CHECK(std::filesystem::exists(d / "b1" / "kde_mse_gaussian.csv"));
    CHECK(std::filesystem::exists(d / "b1" / "kde_ssim_median.csv"));
  }
  SUBCASE("empty corpus is an error") {
    std::ofstream(d / "empty.txt") << "# nothing\nmissing.pgm\n";
    CHECK(cli(d, "benchmark --corpus empty.txt --trials 1").code != 0);
  }
}

TEST_CASE("train") {
  const auto d = scratch_dir("cli_train");
  std::ofstream(d / "train.cfg") << "input_size = 64\nwidth_multiplier = 0.125\nsteps = 6\n"
                                    "batch_size = 1\ncheckpoint_every = 3\n"
                                    "train_corpus = phantom:2:128\nval_corpus = phantom:1:128:5\n";
  const Run r = cli(d, "--seed 2 --out-dir run train --config train.cfg");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("best validation loss") != std::string::npos);
  CHECK(csv_lines(d / "run" / "learning_curve.csv").size() == 7);

  SUBCASE("rerun is byte identical") {
    REQUIRE(cli(d, "--seed 2 --threads 2 --out-dir run2 train --config train.cfg").code == 0);
    CHECK(slurp(d / "run" / "learning_curve.csv") == slurp(d / "run2" / "learning_curve.csv"));
  }
  SUBCASE("resume continues the log") {
    const auto before = csv_lines(d / "run" / "learning_curve.csv");
    REQUIRE(cli(d, "--seed 2 --out-dir run train --config train.cfg --resume run/checkpoints/step_3").code == 0);
    CHECK(csv_lines(d / "run" / "learning_curve.csv") == before);
  }
  SUBCASE("unknown key names the key and line") {
    std::ofstream(d / "bad.cfg") << "steps = 2\n\nlearning_speed = 9\n";
    const Run bad = cli(d, "train --config bad.cfg");
    CHECK(bad.code == 2);
    CHECK(bad.out.find("learning_speed") != std::string::npos);
    CHECK(bad.out.find("3") != std::string::npos);
  }
}

TEST_CASE("gradcheck") {
  const auto d = scratch_dir("cli_gradcheck");
  const Run ok = cli(d, "gradcheck --skip-network");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("conv2d") != std::string::npos);
  const Run bad = cli(d, "gradcheck --skip-network --corrupt conv2d");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("errormap") {
  const auto d = fixture();
  const Run r = cli(d, "--out-dir em errormap --model identity_checkpoint --corpus micrographs.txt "
                       "--dose none --trials 3 --downsample false");
  REQUIRE(r.code == 0);
  const Image map = read_image(d / "em" / "mae_map.mdtn").image;
  CHECK(map.max() == 0.0);
  CHECK(r.out.find("mean_absolute_error=0") != std::string::npos);
  CHECK(std::filesystem::exists(d / "em" / "mae_map_clahe.pgm"));

  const Run noisy = cli(d, "--out-dir em2 errormap --model identity_checkpoint --corpus micrographs.txt "
                           "--dose low --trials 2 --downsample false");
  REQUIRE(noisy.code == 0);
  const double mean = read_image(d / "em2" / "mae_map.mdtn").image.mean();
  const auto at = noisy.out.find("mean_absolute_error=");
  REQUIRE(at != std::string::npos);
  CHECK(std::stod(noisy.out.substr(at + 20)) == doctest::Approx(mean).epsilon(1e-5));
}
