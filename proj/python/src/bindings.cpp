#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mdn/denoisers.hpp"
#include "mdn/errors.hpp"
#include "mdn/kde.hpp"
#include "mdn/loss.hpp"
#include "mdn/metrics.hpp"
#include "mdn/pipeline.hpp"
#include "mdn/tiling.hpp"

namespace py = pybind11;
using namespace mdn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  const auto h = static_cast<int64_t>(a.shape(0)), w = static_cast<int64_t>(a.shape(1));
  return Image(h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Image& img) {
  Array out({img.height, img.width});
  std::copy(img.px.begin(), img.px.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Micrograph denoising: classical filters, metrics, noise model, tiled inference.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<DegenerateInput>(m, "DegenerateInput", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.attr("METHODS") = all_method_ids();

  m.def(
      "denoise",
      [](const Array& img, const std::string& method) {
        const DenoiserSpec spec = DenoiserSpec::parse(method);
        const Image in = to_image(img);
        Image out;
        {
          py::gil_scoped_release release;
          out = denoise(spec, in);
        }
        return to_array(out);
      },
      py::arg("image"), py::arg("method"));

  m.def(
      "denoise_tiled",
      [](const Array& img, const std::string& checkpoint, int64_t overlap, int64_t pad, int threads) {
        const auto model = load_model(checkpoint);
        TileConfig cfg;
        cfg.tile = model->tile_size();
        cfg.overlap = overlap;
        cfg.pad = pad;
        cfg.threads = threads;
        const Image in = to_image(img);
        Image out;
        {
          py::gil_scoped_release release;
          out = denoise_image(*model, in, cfg);
        }
        return to_array(out);
      },
      py::arg("image"), py::arg("checkpoint"), py::arg("overlap") = 32, py::arg("pad") = 16,
      py::arg("threads") = 1, "Run a checkpoint over an image of any size in overlapping tiles.");

  m.def("mse", [](const Array& a, const Array& b) { return mse(to_image(a), to_image(b)); });
  m.def("mae", [](const Array& a, const Array& b) { return mae(to_image(a), to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); });

  m.def(
      "scaled_loss",
      [](double mse_value, double mse_scale, double huber_threshold) {
        LossConfig cfg;
        cfg.mse_scale = mse_scale;
        cfg.huber_threshold = huber_threshold;
        return scaled_loss(mse_value, cfg);
      },
      py::arg("mse"), py::arg("mse_scale") = 1000.0, py::arg("huber_threshold") = 1.0);

  m.def(
      "phantom",
      [](int64_t size, uint64_t seed, bool shot_noise) {
        return to_array(phantom_micrograph(size, seed, 4000.0, shot_noise));
      },
      py::arg("size"), py::arg("seed") = 0, py::arg("shot_noise") = true);

  m.def(
      "apply_poisson",
      [](const Array& img, double dose, uint64_t seed) {
        Rng rng(seed);
        return to_array(apply_poisson(to_image(img), dose, rng));
      },
      py::arg("image"), py::arg("dose"), py::arg("seed") = 0);

  m.def(
      "sample_dose",
      [](const std::string& model, int64_t n, uint64_t seed) {
        const DoseModel d = DoseModel::parse(model);
        Rng rng(seed);
        std::vector<double> out(static_cast<size_t>(n));
        for (auto& v : out) v = sample_dose(d, rng);
        return out;
      },
      py::arg("model"), py::arg("n"), py::arg("seed") = 0,
      "Draw n doses from 'low', 'ordinary' or 'fixed:<dose>'.");

  m.def(
      "kde_pdf",
      [](const std::vector<double>& values, int bins, double lo, double hi) {
        const KdeResult r = kde_pdf(values, KdeConfig{bins, lo, hi});
        py::dict d;
        d["grid"] = r.grid;
        d["density"] = r.density;
        d["normalized"] = r.normalized;
        d["bandwidth"] = r.bandwidth;
        return d;
      },
      py::arg("values"), py::arg("bins") = 200, py::arg("lo") = 0.0, py::arg("hi") = 1.0);
}
