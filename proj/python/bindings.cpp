#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fmgan/cli.hpp"
#include "fmgan/config.hpp"
#include "fmgan/error.hpp"
#include "fmgan/fmd.hpp"
#include "fmgan/ot.hpp"
#include "fmgan/textdata.hpp"

namespace py = pybind11;
using namespace fmgan;
using ndgrad::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Tensor({rows, cols}, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict solve_dict(const ot::SolveResult& r) {
  py::dict d;
  d["plan"] = to_array(r.plan.values);
  d["value"] = r.value;
  d["residual"] = r.residual;
  d["iterations"] = r.iterations;
  return d;
}

ot::SolverConfig solver(double beta, int inner_k, int outer_iters, double tol) {
  ot::SolverConfig s{beta, inner_k, outer_iters, tol};
  s.validate();
  return s;
}

std::vector<textdata::Sequence> sequences(const std::vector<std::vector<int>>& ids) {
  return {ids.begin(), ids.end()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Feature-mover's distance: optimal transport solvers, FMD and text metrics";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());

  m.def(
      "ipot",
      [](const Array& cost, double beta, int inner_k, int outer_iters, double tol) {
        return solve_dict(ot::ipot({to_tensor(cost)}, solver(beta, inner_k, outer_iters, tol)));
      },
      py::arg("cost"), py::arg("beta") = 0.5, py::arg("inner_k") = 1, py::arg("outer_iters") = 2000,
      py::arg("tol") = 1e-6, "Inexact proximal point OT with uniform marginals.");
  m.def(
      "sinkhorn",
      [](const Array& cost, double eps, int iters, double tol) {
        return solve_dict(ot::sinkhorn({to_tensor(cost)}, eps, iters, tol));
      },
      py::arg("cost"), py::arg("eps"), py::arg("iters") = 2000, py::arg("tol") = 1e-6);
  m.def(
      "exact_emd", [](const Array& cost) { return solve_dict(ot::exact_emd_oracle({to_tensor(cost)})); },
      py::arg("cost"), "Permutation enumeration, square costs up to 8 x 8.");
  m.def(
      "marginal_residual", [](const Array& plan) { return ot::marginal_residual({to_tensor(plan)}); },
      py::arg("plan"));

  m.def(
      "cosine_cost",
      [](const Array& f, const Array& g) {
        return to_array(fmd::cosine_cost_matrix({to_tensor(f)}, {to_tensor(g)}).values);
      },
      py::arg("f"), py::arg("g"), "Columns are feature vectors.");
  m.def(
      "fmd",
      [](const Array& f, const Array& g, double beta, int inner_k, int outer_iters, double tol) {
        auto r = fmd::fmd({to_tensor(f)}, {to_tensor(g)}, solver(beta, inner_k, outer_iters, tol));
        py::dict d;
        d["value"] = r.value;
        d["plan"] = to_array(r.plan.values);
        d["residual"] = r.residual;
        return d;
      },
      py::arg("f"), py::arg("g"), py::arg("beta") = 0.5, py::arg("inner_k") = 1, py::arg("outer_iters") = 2000,
      py::arg("tol") = 1e-6);
  m.def(
      "fmd_grad",
      [](const Array& f, const Array& g, double beta, int inner_k, int outer_iters, double tol) {
        auto [df, dg] = fmd::fmd_grad({to_tensor(f)}, {to_tensor(g)}, solver(beta, inner_k, outer_iters, tol));
        return py::make_tuple(to_array(df), to_array(dg));
      },
      py::arg("f"), py::arg("g"), py::arg("beta") = 0.5, py::arg("inner_k") = 1, py::arg("outer_iters") = 2000,
      py::arg("tol") = 1e-6, "Fixed-plan gradients with respect to both feature batches.");

  m.def(
      "bleu",
      [](const std::vector<std::vector<int>>& candidates, const std::vector<std::vector<int>>& references, int max_n) {
        return textdata::test_bleu(sequences(candidates), sequences(references), max_n);
      },
      py::arg("candidates"), py::arg("references"), py::arg("max_n") = 4, "Corpus BLEU over token id lists.");
  m.def(
      "self_bleu",
      [](const std::vector<std::vector<int>>& candidates, int max_n) {
        return textdata::self_bleu(sequences(candidates), max_n);
      },
      py::arg("candidates"), py::arg("max_n") = 4);

  m.def(
      "config_defaults",
      [](const std::string& command) {
        auto c = config::Config::defaults(command);
        std::map<std::string, std::string> out;
        for (const auto& k : config::keys()) out[k.name] = c.get(k.name);
        return out;
      },
      py::arg("command") = "train");
  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command line and returns (exit status, stdout, stderr).");
}
