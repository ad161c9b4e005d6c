#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "ecgcrnn/checkpoint.hpp"
#include "ecgcrnn/cli.hpp"
#include "ecgcrnn/dsp.hpp"
#include "ecgcrnn/error.hpp"
#include "ecgcrnn/eval.hpp"
#include "ecgcrnn/nn.hpp"
#include "ecgcrnn/pipeline.hpp"
#include "ecgcrnn/record_io.hpp"
#include "ecgcrnn/stream.hpp"

namespace py = pybind11;
using namespace ecgcrnn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a one-dimensional array");
  return std::vector<double>(a.data(), a.data() + a.size());
}

py::array_t<double> to_array(const std::vector<double>& v) {
  return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

dsp::BandPassSpec band(double fs, double low, double high, int order) { return {low, high, order, fs}; }

pipeline::WindowTensor windows_of(const Array& w) {
  if (w.ndim() != 2) throw py::value_error("windows must have shape (nw, window_len)");
  pipeline::WindowTensor t;
  t.nw = static_cast<std::size_t>(w.shape(0));
  t.window_len = static_cast<std::size_t>(w.shape(1));
  t.values.assign(w.data(), w.data() + w.size());
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ECG rhythm classification core";

  py::register_exception<ecgcrnn::Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "load_mat_record",
      [](const std::string& path, double fs) {
        const auto r = load_mat_record(path, fs);
        return py::make_tuple(r.id, r.fs, to_array(r.samples));
      },
      py::arg("path"), py::arg("fs") = 300.0, "Read a MAT-4 record; returns (id, fs, samples).");

  m.def(
      "bandpass_sos",
      [](double fs, double low, double high, int order) {
        const auto c = dsp::design_bandpass(band(fs, low, high, order));
        py::array_t<double> sos({static_cast<py::ssize_t>(c.sections.size()), py::ssize_t{6}});
        auto v = sos.mutable_unchecked<2>();
        for (std::size_t i = 0; i < c.sections.size(); ++i) {
          const auto& s = c.sections[i];
          const double g = i == 0 ? c.gain : 1.0;
          const double row[6] = {g * s.b0, g * s.b1, g * s.b2, 1.0, s.a1, s.a2};
          for (py::ssize_t j = 0; j < 6; ++j) v(static_cast<py::ssize_t>(i), j) = row[j];
        }
        return sos;
      },
      py::arg("fs") = 300.0, py::arg("low") = 0.5, py::arg("high") = 40.0, py::arg("order") = 2,
      "Band-pass design as second-order sections, gain folded into the first row.");

  m.def(
      "magnitude_response",
      [](double freq, double fs, double low, double high, int order) {
        return dsp::magnitude_response(dsp::design_bandpass(band(fs, low, high, order)), freq);
      },
      py::arg("freq"), py::arg("fs") = 300.0, py::arg("low") = 0.5, py::arg("high") = 40.0, py::arg("order") = 2);

  m.def(
      "filtfilt",
      [](const Array& x, double fs, double low, double high, int order) {
        return to_array(dsp::filtfilt(dsp::design_bandpass(band(fs, low, high, order)), to_vector(x)));
      },
      py::arg("x"), py::arg("fs") = 300.0, py::arg("low") = 0.5, py::arg("high") = 40.0, py::arg("order") = 2);

  m.def(
      "resample", [](const Array& x, double fs_in, double fs_out) { return to_array(dsp::resample(to_vector(x), fs_in, fs_out)); },
      py::arg("x"), py::arg("fs_in"), py::arg("fs_out"));

  m.def(
      "preprocess", [](const Array& x, double fs) { return to_array(dsp::preprocess(to_vector(x), fs, {})); },
      py::arg("x"), py::arg("fs") = 300.0, "Band-pass then resample to 200 Hz.");

  m.def(
      "standardize", [](const Array& x) { return to_array(dsp::standardize_per_signal(to_vector(x))); }, py::arg("x"),
      "Divide by the population standard deviation.");

  m.def("max_windows", [](std::size_t n) { return pipeline::max_windows(n); }, py::arg("n"));

  m.def(
      "extract_windows",
      [](const Array& x, std::size_t offset) {
        const auto t = pipeline::extract_windows(to_vector(x), offset);
        py::array_t<double> out({static_cast<py::ssize_t>(t.nw), static_cast<py::ssize_t>(t.window_len)});
        std::copy(t.values.begin(), t.values.end(), out.mutable_data());
        return out;
      },
      py::arg("x"), py::arg("offset") = 0);

  m.def(
      "count_params",
      [](std::size_t divisor) {
        const auto c = nn::count_params(divisor <= 1 ? nn::Architecture::full() : nn::Architecture::reduced(divisor));
        return py::dict(py::arg("conv") = c.conv, py::arg("lstm") = c.lstm, py::arg("head") = c.head,
                        py::arg("total") = c.total);
      },
      py::arg("divisor") = 1);

  py::class_<nn::ModelParams, std::shared_ptr<nn::ModelParams>>(m, "Model")
      .def(py::init([](std::size_t divisor, std::uint64_t seed) {
             return std::make_shared<nn::ModelParams>(nn::init_params(
                 divisor <= 1 ? nn::Architecture::full() : nn::Architecture::reduced(divisor), seed));
           }),
           py::arg("divisor") = 1, py::arg("seed") = 0)
      .def_static(
          "load", [](const std::string& path) { return std::make_shared<nn::ModelParams>(nn::load_checkpoint(path).params); },
          py::arg("path"))
      .def("save", [](const nn::ModelParams& p, const std::string& path) { nn::save_checkpoint(path, p, nlohmann::json::object()); },
           py::arg("path"))
      .def_property_readonly("size", &nn::ModelParams::size)
      .def(
          "predict",
          [](const nn::ModelParams& p, const Array& windows) {
            return nn::model_forward(windows_of(windows), p, nn::Mode::Eval).probs;
          },
          py::arg("windows"), "Class probabilities (N, A, O, ~) for one record's windows.");

  m.def("cinc_score", py::overload_cast<double, double, double>(&eval::cinc_score), py::arg("f1n"), py::arg("f1a"),
        py::arg("f1o"));

  m.def(
      "metrics_report",
      [](const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
        const auto cm = eval::confusion(std::span<const std::size_t>(pred), std::span<const std::size_t>(truth));
        return eval::metrics_report(cm, eval::class_metrics(cm)).dump();
      },
      py::arg("pred"), py::arg("truth"), "Metrics JSON for class indices 0..3 (N, A, O, ~).");

  m.def(
      "replay",
      [](const std::vector<std::int16_t>& samples, double fs, std::shared_ptr<nn::ModelParams> model,
         std::size_t frame_size, const std::string& session) {
        const auto frames = stream::frames_from_signal({fs, samples}, session, frame_size);
        py::gil_scoped_release release;
        return stream::replay(frames, stream::StreamConfig{}, model);
      },
      py::arg("samples"), py::arg("fs"), py::arg("model"), py::arg("frame_size") = 4096, py::arg("session") = "replay",
      "Streaming predictions as NDJSON text.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"ecgcrnn"};
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Run the command-line tool in process; returns the exit code.");
}
