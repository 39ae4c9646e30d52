// Python bindings. Tensors cross the boundary as float64 numpy arrays.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "forgrad/attribution.hpp"
#include "forgrad/cli.hpp"
#include "forgrad/dataset.hpp"
#include "forgrad/errors.hpp"
#include "forgrad/filtering.hpp"
#include "forgrad/metrics.hpp"
#include "forgrad/nn.hpp"
#include "forgrad/spectral.hpp"

#include <sstream>

namespace py = pybind11;
using namespace forgrad;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& xs) {
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (const auto& a : xs) out.push_back(to_tensor(a));
  return out;
}

MethodConfig method_config(std::size_t n_samples, double noise_std, std::size_t ig_steps,
                           std::size_t rise_samples, std::uint64_t seed) {
  MethodConfig cfg;
  cfg.n_samples = n_samples;
  cfg.noise_std = noise_std;
  cfg.ig_steps = ig_steps;
  cfg.rise_samples = rise_samples;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

MetricConfig metric_config(std::size_t pixel_step, const std::string& baseline, std::uint64_t seed) {
  MetricConfig cfg;
  cfg.pixel_step = pixel_step;
  if (baseline == "zero") cfg.baseline = BaselineMode::Zero;
  else if (baseline == "noise") cfg.baseline = BaselineMode::UniformNoise;
  else throw ConfigError("baseline must be 'zero' or 'noise', got '" + baseline + "'");
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the forgrad attribution toolkit";

  static py::exception<Error> base(m, "ForgradError");
#define FG_EXC(Name) static py::exception<Name> exc_##Name(m, #Name, base.ptr())
  FG_EXC(ShapeMismatch); FG_EXC(NonFinite); FG_EXC(FormatError); FG_EXC(VersionError);
  FG_EXC(ValidationError); FG_EXC(ConfigError); FG_EXC(NegativeSigma); FG_EXC(UnsupportedMethod);
  FG_EXC(EmptyValidationSet); FG_EXC(InsufficientBins); FG_EXC(SplitViolation);
#undef FG_EXC
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    }
#define FG_CATCH(Name) catch (const Name& e) { exc_##Name(e.what()); }
    FG_CATCH(ShapeMismatch) FG_CATCH(NonFinite) FG_CATCH(FormatError) FG_CATCH(VersionError)
    FG_CATCH(ValidationError) FG_CATCH(ConfigError) FG_CATCH(NegativeSigma) FG_CATCH(UnsupportedMethod)
    FG_CATCH(EmptyValidationSet) FG_CATCH(InsufficientBins) FG_CATCH(SplitViolation)
#undef FG_CATCH
    catch (const Error& e) { base(e.what()); }
  });

  py::class_<Network>(m, "Network")
      .def_property_readonly("input_shape", &Network::input_shape)
      .def_property_readonly("num_classes", &Network::num_classes)
      .def("hash", &Network::hash)
      .def("layer_kinds", [](const Network& n) {
        std::vector<std::string> out;
        for (const auto& l : n.layers()) out.push_back(to_string(l.kind));
        return out;
      });

  m.def("preset_names", &preset_names);
  m.def("make_preset", [](const std::string& name, std::uint64_t seed) { return make_preset(name, seed); },
        py::arg("name"), py::arg("seed") = 0);
  m.def("load_model", [](const std::string& p) { return load_model(p); });
  m.def("save_model", [](const Network& n, const std::string& p) { save_model(n, p); });

  m.def("logits", [](const Network& n, const Array& x) { return to_array(forward(n, to_tensor(x)).logits); });
  m.def("probabilities",
        [](const Network& n, const Array& x) { return to_array(forward(n, to_tensor(x)).probabilities); });
  m.def("predict", [](const Network& n, const Array& x) { return argmax_class(forward(n, to_tensor(x)).logits); });
  m.def(
      "train",
      [](const Network& n, const std::vector<Array>& xs, const std::vector<std::size_t>& ys, double lr,
         std::size_t epochs, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.learning_rate = lr;
        cfg.epochs = epochs;
        cfg.seed = seed;
        const auto images = to_tensors(xs);
        return train(n, images, ys, cfg).net;
      },
      py::arg("net"), py::arg("images"), py::arg("labels"), py::arg("lr") = 0.1, py::arg("epochs") = 30,
      py::arg("seed") = 0);

  m.def("synthetic", [](std::size_t n, std::uint64_t seed) {
    const Dataset d = gen_synthetic(n, seed);
    std::vector<Array> images;
    for (const auto& t : d.images) images.push_back(to_array(t));
    return py::make_tuple(images, d.labels);
  });

  m.def("method_names", [] {
    std::vector<std::string> out;
    for (Method k : all_methods()) out.push_back(method_name(k));
    return out;
  });
  m.def(
      "attribute",
      [](const Network& n, const Array& x, std::size_t c, const std::string& method, std::optional<double> sigma,
         const std::string& mode, std::size_t n_samples, double noise_std, std::size_t ig_steps,
         std::size_t rise_samples, std::uint64_t seed) {
        const auto cfg = method_config(n_samples, noise_std, ig_steps, rise_samples, seed);
        const Tensor t = to_tensor(x);
        const Method k = parse_method(method);
        if (!sigma) return to_array(attribute(k, GradientProvider(n), t, c, cfg).values);
        return to_array(attribute_filtered(n, t, c, k, *sigma, parse_filter_mode(mode), cfg).values);
      },
      py::arg("net"), py::arg("x"), py::arg("target"), py::arg("method") = "saliency",
      py::arg("sigma") = py::none(), py::arg("mode") = "gradient", py::arg("n_samples") = 50,
      py::arg("noise_std") = 0.1, py::arg("ig_steps") = 64, py::arg("rise_samples") = 4000, py::arg("seed") = 0);

  m.def("lowpass", [](const Array& map, double sigma) { return to_array(lowpass(to_tensor(map), sigma)); });
  m.def("radial_signature", [](const std::vector<Array>& maps) {
    const auto sig = radial_signature(to_tensors(maps));
    return py::make_tuple(sig.radii, sig.amplitude);
  });
  m.def("power_slope", [](const std::vector<Array>& maps) {
    const auto fit = power_slope(radial_signature(to_tensors(maps)));
    return py::make_tuple(fit.slope, fit.intercept, fit.r_squared);
  });

  m.def(
      "metrics",
      [](const Network& n, const Array& x, const Array& map, std::size_t c, std::size_t pixel_step,
         const std::string& baseline, std::uint64_t seed) {
        const auto cfg = metric_config(pixel_step, baseline, seed);
        const Tensor t = to_tensor(x), a = to_tensor(map);
        const double del = deletion(n, t, a, c, cfg), ins = insertion(n, t, a, c, cfg);
        py::dict out;
        out["deletion"] = del;
        out["insertion"] = ins;
        out["faithfulness"] = faithfulness_from(ins, del);
        out["mu_fidelity"] = mu_fidelity(n, t, a, c, cfg);
        return out;
      },
      py::arg("net"), py::arg("x"), py::arg("map"), py::arg("target"), py::arg("pixel_step") = 16,
      py::arg("baseline") = "zero", py::arg("seed") = 0);

  m.def(
      "sigma_search",
      [](const Network& n, const std::vector<Array>& xs, const std::vector<std::size_t>& classes,
         const std::string& method, const std::string& mode, std::optional<std::vector<double>> grid,
         std::size_t n_samples, std::size_t ig_steps, std::uint64_t seed) {
        const auto images = to_tensors(xs);
        if (images.empty()) throw EmptyValidationSet("no images");
        const std::size_t h = images.front().dim(1), w = images.front().dim(2);
        const SigmaGrid g = grid ? SigmaGrid(*grid, h, w) : SigmaGrid::default_for(h, w);
        SigmaSearchOptions opts;
        opts.method = parse_method(method);
        opts.mode = parse_filter_mode(mode);
        opts.method_cfg = method_config(n_samples, 0.1, ig_steps, 4000, seed);
        opts.metric_cfg.seed = seed;
        const auto r = sigma_search(n, images, classes, g, opts);
        return py::make_tuple(r.sigma_star, r.curve);
      },
      py::arg("net"), py::arg("images"), py::arg("classes"), py::arg("method") = "saliency",
      py::arg("mode") = "gradient", py::arg("grid") = py::none(), py::arg("n_samples") = 50,
      py::arg("ig_steps") = 64, py::arg("seed") = 0);

  m.def("cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli_dispatch(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
