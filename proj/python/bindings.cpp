#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "memno/mori_zwanzig.hpp"
#include "memno/pde.hpp"
#include "memno/spectral.hpp"
#include "memno/store.hpp"
#include "memno/training.hpp"

namespace py = pybind11;
using namespace memno;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Array trajectories(const pde::TrajectorySet& ts) {
  std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(ts.n_traj), static_cast<py::ssize_t>(ts.n_times())};
  for (auto s : ts.spatial) shape.push_back(static_cast<py::ssize_t>(s));
  Array out(shape);
  std::memcpy(out.mutable_data(), ts.data.data(), ts.data.size() * sizeof(double));
  return out;
}

pde::TrajectorySet from_array(const Array& data, const pde::SolverSpec& spec) {
  if (data.ndim() != 3 && data.ndim() != 4) throw std::invalid_argument("expected [n_traj, n_times, f] or [n_traj, n_times, f, f]");
  pde::TrajectorySet ts;
  ts.spec = spec;
  ts.n_traj = static_cast<std::size_t>(data.shape(0));
  for (py::ssize_t d = 2; d < data.ndim(); ++d) ts.spatial.push_back(static_cast<std::size_t>(data.shape(d)));
  ts.times = spec.times();
  if (ts.times.size() != static_cast<std::size_t>(data.shape(1))) {
    throw std::invalid_argument("time axis has " + std::to_string(data.shape(1)) + " states, spec implies " +
                                std::to_string(ts.times.size()));
  }
  ts.data.assign(data.data(), data.data() + data.size());
  ts.validate();
  return ts;
}

py::dict dataset_dict(const pde::TrajectorySet& ts) {
  py::dict d;
  d["data"] = trajectories(ts);
  d["times"] = ts.times;
  d["spec"] = ts.spec;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Memory neural operators: PDE data, Mori-Zwanzig checks and model evaluation";

  py::register_exception<store::StoreError>(m, "StoreError", PyExc_OSError);

  py::enum_<pde::PdeKind>(m, "PdeKind")
      .value("KS", pde::PdeKind::KS)
      .value("Burgers", pde::PdeKind::Burgers)
      .value("NS2D", pde::PdeKind::NS2D);

  py::class_<pde::SolverSpec>(m, "SolverSpec")
      .def(py::init([](const std::string& pde) {
             auto kind = pde::parse_pde_kind(pde);
             return kind == pde::PdeKind::Burgers ? pde::SolverSpec::burgers()
                    : kind == pde::PdeKind::NS2D  ? pde::SolverSpec::ns2d()
                                                  : pde::SolverSpec::ks();
           }),
           py::arg("pde") = "ks")
      .def_readwrite("kind", &pde::SolverSpec::kind)
      .def_readwrite("nu", &pde::SolverSpec::nu)
      .def_readwrite("length", &pde::SolverSpec::length)
      .def_readwrite("final_time", &pde::SolverSpec::final_time)
      .def_readwrite("n_t", &pde::SolverSpec::n_t)
      .def_readwrite("dt", &pde::SolverSpec::dt)
      .def_readwrite("resolution", &pde::SolverSpec::resolution)
      .def_readwrite("seed", &pde::SolverSpec::seed)
      .def_readwrite("nonlinear", &pde::SolverSpec::nonlinear)
      .def_readwrite("forcing", &pde::SolverSpec::forcing)
      .def("times", &pde::SolverSpec::times)
      .def("to_text", &pde::SolverSpec::to_text)
      .def_static("from_text", &pde::SolverSpec::from_text)
      .def("__repr__", [](const pde::SolverSpec& s) { return "SolverSpec(" + pde::to_string(s.kind) + ")"; });

  m.def(
      "generate",
      [](const pde::SolverSpec& spec, std::size_t n_traj, std::size_t out_resolution, std::size_t threads) {
        pde::TrajectorySet ts;
        {
          py::gil_scoped_release release;
          ts = pde::generate(spec, n_traj, out_resolution == 0 ? spec.resolution : out_resolution, threads);
        }
        return dataset_dict(ts);
      },
      py::arg("spec"), py::arg("n_traj"), py::arg("out_resolution") = 0, py::arg("threads") = 0,
      "Solve n_traj trajectories; returns {'data': [n, n_t+1, f(, f)], 'times', 'spec'}.");

  m.def("omega_f", [](const Array& u, std::size_t f) { return spectral::omega_f_samples(view(u), f); },
        py::arg("samples"), py::arg("f"), "Energy fraction beyond mode f/2 of a periodic 1D signal.");
  m.def(
      "dataset_omega",
      [](const Array& data, const pde::SolverSpec& spec, std::size_t f) {
        const auto s = pde::dataset_omega(from_array(data, spec), f);
        return py::make_tuple(s.mean, s.std);
      },
      py::arg("data"), py::arg("spec"), py::arg("f"), "Mean and population std of omega_f over all states.");

  m.def("nrmse", [](const Array& pred, const Array& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("nrmse: size mismatch");
    return train::nrmse(view(pred), view(truth));
  });

  auto mzm = m.def_submodule("mz", "Mori-Zwanzig analysis of the mixing operator");
  mzm.def("markovian_evolve",
          [](double b, mz::Coeffs2 a0, double t) { return mz::markovian_evolve(b, a0, t); });
  mzm.def(
      "memory_evolve_projection",
      [](double b, mz::Coeffs2 a0, double t, std::size_t n) { return mz::memory_evolve_projection(b, a0, t, n); },
      py::arg("b"), py::arg("a0"), py::arg("t"), py::arg("n_oracle") = 64);
  mzm.def(
      "memory_evolve_quadrature",
      [](double b, mz::Coeffs2 a0, double t, std::size_t steps, std::size_t n) {
        return mz::memory_evolve_quadrature(b, a0, t, steps, n);
      },
      py::arg("b"), py::arg("a0"), py::arg("t"), py::arg("quad_steps") = 256, py::arg("n_oracle") = 64);
  mzm.def("basis_norm", &mz::basis_norm);
  mzm.def("lemma_l1_bounds_hold", [](double b, double t) { return mz::lemma_l1_check(b, t).bounds_ok; });
  mzm.def("lemma_l2_bounds_hold", [](double b) { return mz::lemma_l2_check(b).bounds_ok; });

  m.def(
      "write_dataset",
      [](const std::filesystem::path& path, const Array& data, const pde::SolverSpec& spec) {
        store::write_dataset(from_array(data, spec), path);
      },
      py::arg("path"), py::arg("data"), py::arg("spec"));
  m.def(
      "read_dataset", [](const std::filesystem::path& path) { return dataset_dict(store::read_dataset(path)); },
      py::arg("path"));

  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& dataset, std::size_t window,
         double noise_sigma, std::uint64_t seed) {
        const auto model = store::read_checkpoint(checkpoint).model();
        const auto data = store::read_dataset(dataset);
        train::EvalConfig cfg;
        cfg.window = window;
        cfg.noise_sigma = noise_sigma;
        cfg.seed = seed;
        train::EvalReport rep;
        {
          py::gil_scoped_release release;
          rep = train::evaluate(model, data, cfg);
        }
        py::dict d;
        d["mean"] = rep.mean;
        d["per_step"] = rep.per_step;
        d["first_step"] = rep.first_step;
        d["n_traj"] = rep.n_traj;
        return d;
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("window") = 0, py::arg("noise_sigma") = 0.0,
      py::arg("seed") = 0, "Autoregressive test nRMSE of a saved model on a saved dataset.");
}
