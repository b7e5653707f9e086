#include <torch/torch.h>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dadr/config.hpp"
#include "dadr/drl.hpp"
#include "dadr/errors.hpp"
#include "dadr/experiments.hpp"
#include "dadr/folds.hpp"
#include "dadr/nn_core.hpp"
#include "dadr/seg.hpp"
#include "dadr/synthdata.hpp"

namespace py = pybind11;
using namespace dadr;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<int64_t> shape_of(const py::array& a) { return {a.shape(), a.shape() + a.ndim()}; }

torch::Tensor to_tensor(const FloatArray& a) {
  return torch::from_blob(const_cast<float*>(a.data()), shape_of(a), torch::kFloat32).clone();
}

torch::Tensor to_mask(const MaskArray& a) {
  return torch::from_blob(const_cast<uint8_t*>(a.data()), shape_of(a), torch::kUInt8).clone().ne(0).to(torch::kUInt8);
}

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
  auto c = t.contiguous();
  py::array_t<T> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<T>(), sizeof(T) * static_cast<size_t>(c.numel()));
  return out;
}

Domain domain_of(int d) {
  if (d != 1 && d != 2) throw ConfigError("domain must be 1 or 2");
  return static_cast<Domain>(d);
}

experiments::ExperimentConfig config_from(const std::string& text, const std::string& base_dir) {
  return config::to_experiment_config(config::parse(text), base_dir);
}

}  // namespace

PYBIND11_MODULE(_dadr, m) {
  m.doc() = "Disentangled-representation domain adaptation on synthetic two-domain scans";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("instance_norm", [](const FloatArray& x) { return to_numpy<float>(nn::instance_norm(to_tensor(x))); },
        py::arg("x"), "Per-sample, per-channel normalisation of an (N, C, H, W) array.");
  m.def(
      "adain",
      [](const FloatArray& x, const FloatArray& gamma, const FloatArray& beta) {
        return to_numpy<float>(nn::adain(to_tensor(x), {to_tensor(gamma), to_tensor(beta)}));
      },
      py::arg("x"), py::arg("gamma"), py::arg("beta"));

  m.def(
      "dice", [](const MaskArray& p, const MaskArray& g) { return seg::dice(to_mask(p), to_mask(g)); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "total_loss",
      [](double recon, double adv, double latent, double alpha, double beta, double gamma) {
        return total_loss(LossComponents{recon, adv, latent}, LossWeights{alpha, beta, gamma});
      },
      py::arg("recon"), py::arg("adv"), py::arg("latent"), py::arg("alpha") = 25.0, py::arg("beta") = 10.0,
      py::arg("gamma") = 0.1);

  m.def("kfold_split", &experiments::kfold_split, py::arg("scene_ids"), py::arg("k"), py::arg("seed"));

  m.def(
      "render_scene",
      [](uint64_t seed, int64_t image_size, int domain, const std::string& phase) {
        std::mt19937_64 rng(seed);
        auto scene = synth::gen_scene(rng, image_size, 0);
        auto out = synth::render(scene, synth::default_style(domain_of(domain), synth::phase_from_string(phase)), rng);
        return py::make_tuple(to_numpy<float>(out.image[0]), to_numpy<uint8_t>(out.mask));
      },
      py::arg("seed"), py::arg("image_size") = 64, py::arg("domain") = 1, py::arg("phase") = "none",
      "One synthetic scene rendered in a domain: (image in [-1, 1], organ mask).");

  m.def("known_keys", &config::known_keys);
  m.def(
      "resolve_config", [](const std::string& text, const std::string& base_dir) {
        return config::echo(config_from(text, base_dir));
      },
      py::arg("text"), py::arg("base_dir") = ".", "Validated config with every default filled in.");
  m.def("experiments", [] {
    std::vector<std::string> ids;
    for (auto id : experiments::all_experiments()) ids.emplace_back(experiments::to_string(id));
    return ids;
  });

  m.def(
      "generate_dataset",
      [](const std::string& text, const std::filesystem::path& out, const std::string& base_dir) {
        auto cfg = config_from(text, base_dir);
        py::gil_scoped_release release;
        synth::save_dataset(synth::gen_dataset(cfg.dataset), out);
      },
      py::arg("config_text"), py::arg("out_dir"), py::arg("base_dir") = ".");
  m.def(
      "run_experiment",
      [](const std::string& text, const std::string& base_dir) {
        auto cfg = config_from(text, base_dir);
        std::vector<experiments::MetricsRecord> records;
        {
          py::gil_scoped_release release;
          records = experiments::ExperimentRunner(cfg).run();
        }
        std::vector<std::string> out;
        for (const auto& r : records) out.push_back(experiments::to_json(r).dump());
        return out;
      },
      py::arg("config_text"), py::arg("base_dir") = ".",
      "Runs the configured experiment; returns its metrics records as JSON strings.");
  m.def("summarize", &experiments::summarize, py::arg("root"));
}
