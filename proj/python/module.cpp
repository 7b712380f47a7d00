#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "adapterlab/adapter.hpp"
#include "adapterlab/backbone.hpp"
#include "adapterlab/cli.hpp"
#include "adapterlab/errors.hpp"
#include "adapterlab/theory.hpp"

namespace py = pybind11;
using namespace adapterlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mat to_mat(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
    Mat m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

Array to_array(const Mat& m) {
    Array a({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), a.mutable_data());
    return a;
}

AdapterParams make_params(const Array& w_down, const Array& b_down, const Array& w_up, const Array& b_up,
                          double alpha) {
    AdapterParams p;
    p.w_down = to_mat(w_down);
    p.rank = p.w_down.rows;
    p.b_down = Mat::column(std::span<const double>(b_down.data(), static_cast<std::size_t>(b_down.size())));
    p.w_up = to_mat(w_up);
    p.b_up = Mat::column(std::span<const double>(b_up.data(), static_cast<std::size_t>(b_up.size())));
    p.alpha = alpha;
    p.validate();
    return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Low-rank residual adapters on a miniature ViT";

    m.def("adapter_param_count", &adapter_param_count, py::arg("rank"), py::arg("d"));

    m.def(
        "total_trainable_count",
        [](std::size_t d, std::size_t layers, std::size_t rank, std::size_t classes, std::size_t every_k,
           const std::string& regime) {
            ModelConfig c;
            c.d = d;
            c.layers = layers;
            c.rank = rank;
            c.classes = classes;
            c.every_k = every_k;
            c.regime = parse_regime(regime);
            return total_trainable_count(c);
        },
        py::arg("d"), py::arg("layers"), py::arg("rank"), py::arg("classes"), py::arg("every_k") = 1,
        py::arg("regime") = "adapter_tune");

    m.def(
        "adapter_forward",
        [](const Array& h, const Array& w_down, const Array& b_down, const Array& w_up, const Array& b_up) {
            return to_array(adapter_forward(make_params(w_down, b_down, w_up, b_up, 1.0), to_mat(h)));
        },
        py::arg("h"), py::arg("w_down"), py::arg("b_down"), py::arg("w_up"), py::arg("b_up"));

    m.def(
        "residual_apply",
        [](const Array& h, const Array& w_down, const Array& b_down, const Array& w_up, const Array& b_up,
           double alpha) {
            return to_array(residual_apply(make_params(w_down, b_down, w_up, b_up, alpha), to_mat(h)));
        },
        py::arg("h"), py::arg("w_down"), py::arg("b_down"), py::arg("w_up"), py::arg("b_up"),
        py::arg("alpha") = 1.0);

    m.def("tail_decay", &tail_decay, py::arg("rank"), py::arg("c_decay"), py::arg("p_decay"));

    m.def(
        "truncation_error",
        [](std::size_t d, double c_decay, double p_decay, std::size_t rank, std::uint64_t seed) {
            Rng rng(seed);
            const ShiftMatrix s = make_shift(d, c_decay, p_decay, rng);
            return py::make_tuple(frobenius_norm_sq(sub(s.delta, truncate(s, rank))), s.spectrum.tail_energy(rank));
        },
        py::arg("d"), py::arg("c_decay"), py::arg("p_decay"), py::arg("rank"), py::arg("seed") = 0,
        "Returns (||Delta - Delta_r||_F^2, sum of the squared tail singular values).");

    m.def(
        "elbow_check",
        [](const std::vector<std::pair<std::size_t, double>>& curve) {
            const ElbowReport e = elbow_check(curve);
            py::dict d;
            d["increments"] = e.increments;
            d["first_increment"] = e.first_increment;
            d["last_increment"] = e.last_increment;
            d["preceding_total"] = e.preceding_total;
            d["pass"] = e.pass;
            d["pass_strict"] = e.pass_strict;
            return d;
        },
        py::arg("curve"));

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "adapterlab");
            std::vector<const char*> argv;
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
}
