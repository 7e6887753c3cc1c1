#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "afp/cli.hpp"
#include "afp/eval.hpp"
#include "afp/gradcheck.hpp"

namespace py = pybind11;
using namespace afp;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// rows×cols (gray) or rows×cols×channels.
Frame to_frame(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw UsageError("frames must be 2-D (gray) or 3-D (rows, cols, channels)");
  Frame f(int(a.shape(0)), int(a.shape(1)), a.ndim() == 3 ? int(a.shape(2)) : 1);
  std::copy(a.data(), a.data() + a.size(), f.data.begin());
  return f;
}

py::array_t<float> from_frame(const Frame& f) {
  std::vector<py::ssize_t> shape{f.rows, f.cols};
  if (f.channels != 1) shape.push_back(f.channels);
  py::array_t<float> out(shape);
  std::copy(f.data.begin(), f.data.end(), out.mutable_data());
  return out;
}

// T×rows×cols (or T×rows×cols×channels) <-> frame list.
std::vector<Frame> to_frames(const FloatArray& a) {
  if (a.ndim() != 3 && a.ndim() != 4) throw UsageError("frame stacks must be 3-D or 4-D");
  const int t = int(a.shape(0));
  std::vector<Frame> out;
  const std::size_t per = a.size() / std::max(t, 1);
  for (int i = 0; i < t; ++i) {
    Frame f(int(a.shape(1)), int(a.shape(2)), a.ndim() == 4 ? int(a.shape(3)) : 1);
    std::copy(a.data() + i * per, a.data() + (i + 1) * per, f.data.begin());
    out.push_back(std::move(f));
  }
  return out;
}

py::array_t<float> from_frames(const std::vector<Frame>& frames) {
  if (frames.empty()) return py::array_t<float>(std::vector<py::ssize_t>{0, 0, 0});
  const Frame& f0 = frames[0];
  std::vector<py::ssize_t> shape{py::ssize_t(frames.size()), f0.rows, f0.cols};
  if (f0.channels != 1) shape.push_back(f0.channels);
  py::array_t<float> out(shape);
  float* p = out.mutable_data();
  for (const auto& f : frames) p = std::copy(f.data.begin(), f.data.end(), p);
  return out;
}

AffineField to_field(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(0) != 6) throw UsageError("fields must have shape (6, n_r, n_c)");
  AffineField f(int(a.shape(1)), int(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), f.params.begin());
  return f;
}

py::array_t<float> from_field(const AffineField& f) {
  py::array_t<float> out({py::ssize_t(6), py::ssize_t(f.n_r), py::ssize_t(f.n_c)});
  std::copy(f.params.begin(), f.params.end(), out.mutable_data());
  return out;
}

PredictorConfig preset(const std::string& name) {
  if (name == "mnist") return PredictorConfig::mnist();
  if (name == "ucf") return PredictorConfig::ucf();
  throw ConfigError("unknown predictor preset '" + name + "' (known: mnist, ucf)");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Affine-field frame prediction core";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<GridSpec>(m, "Grid")
      .def(py::init([](int rows, int cols, int d_in, int d_out, int stride) {
             return make_grid(rows, cols, d_in, d_out, stride, stride);
           }),
           py::arg("rows") = 64, py::arg("cols") = 64, py::arg("d_in") = 16, py::arg("d_out") = 8, py::arg("stride") = 4)
      .def_readonly("rows", &GridSpec::rows)
      .def_readonly("cols", &GridSpec::cols)
      .def_readonly("d_in", &GridSpec::d_in)
      .def_readonly("d_out", &GridSpec::d_out)
      .def_readonly("n_r", &GridSpec::n_r)
      .def_readonly("n_c", &GridSpec::n_c)
      .def_readonly("pad", &GridSpec::pad)
      .def("__repr__", [](const GridSpec& g) {
        return "Grid(" + std::to_string(g.rows) + "x" + std::to_string(g.cols) + ", " + std::to_string(g.n_r) + "x" +
               std::to_string(g.n_c) + " cells)";
      });

  m.def("identity_field", [](const GridSpec& g) { return from_field(AffineField::identity(g.n_r, g.n_c)); });

  m.def(
      "extract_pair",
      [](const FloatArray& x, const FloatArray& y, const GridSpec& g, int max_iters) {
        ExtractorConfig cfg;
        cfg.max_iters = max_iters;
        ExtractionResult r;
        {
          const Frame fx = to_frame(x), fy = to_frame(y);
          py::gil_scoped_release nogil;
          r = extract_pair(fx, fy, g, cfg);
        }
        return py::make_tuple(from_field(r.field), r.loss, r.iterations);
      },
      py::arg("x"), py::arg("y"), py::arg("grid"), py::arg("max_iters") = 400,
      "Field warping x into y; returns (field, loss, iterations).");

  m.def(
      "apply_field",
      [](const FloatArray& frame, const FloatArray& field, const GridSpec& g) {
        return from_frame(apply_field(to_frame(frame), to_field(field), g));
      },
      py::arg("frame"), py::arg("field"), py::arg("grid"));

  m.def(
      "generate_sequences",
      [](std::uint64_t seed, int count, int length, int max_objects, int bounce_free) {
        GeneratorParams gp;
        gp.length = length;
        gp.max_objects = max_objects;
        gp.min_objects = std::min(gp.min_objects, max_objects);
        gp.bounce_free_frames = bounce_free;
        py::list out;
        for (const auto& r : generate_moving_shapes(seed, count, gp))
          out.append(py::make_tuple(from_frames(r.frames), r.motion_class ? py::cast(int(*r.motion_class)) : py::none()));
        return out;
      },
      py::arg("seed"), py::arg("count"), py::arg("length") = 20, py::arg("max_objects") = 2,
      py::arg("bounce_free") = 0, "List of (frames[T, 64, 64], direction class).");

  m.def(
      "rollout",
      [](const std::string& checkpoint, const FloatArray& seed_frames, int predicted) {
        const PredictorModel model = read_checkpoint(checkpoint);
        const auto frames = to_frames(seed_frames);
        RolloutResult r;
        {
          py::gil_scoped_release nogil;
          r = rollout(model, frames, RolloutConfig{int(frames.size()), predicted}, ExtractorConfig{});
        }
        py::list fields;
        for (const auto& f : r.fields) fields.append(from_field(f));
        return py::make_tuple(from_frames(r.frames), fields);
      },
      py::arg("checkpoint"), py::arg("seed_frames"), py::arg("predicted") = 8,
      "Generated frames and predicted fields from an AFPM checkpoint.");

  m.def("count_params", [](const std::string& name) { return count_params(preset(name)); }, py::arg("preset"));
  m.def(
      "estimate_flops",
      [](const std::string& name) {
        const auto cfg = preset(name);
        return estimate_flops(cfg, cfg.grid).total();
      },
      py::arg("preset"));

  m.def("gradcheck", [] {
    py::list out;
    for (const auto& r : run_gradcheck_suite()) {
      py::dict d;
      d["name"] = r.name;
      d["max_rel_error"] = r.max_rel_error;
      d["checked"] = r.checked;
      d["skipped"] = r.skipped;
      d["passed"] = r.passed;
      out.append(d);
    }
    return out;
  });

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release nogil;
          code = dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one afpc subcommand; returns (exit code, stdout, stderr).");
}
