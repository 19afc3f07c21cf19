#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ksd/commands.hpp"
#include "ksd/config.hpp"
#include "ksd/derivative.hpp"
#include "ksd/errors.hpp"
#include "ksd/oracle.hpp"
#include "ksd/parallel.hpp"

namespace py = pybind11;
using namespace ksd;

namespace {

py::array_t<double> to_array(const GridFunction& f) {
    std::vector<py::ssize_t> shape(static_cast<std::size_t>(f.order()), static_cast<py::ssize_t>(f.grid().size()));
    py::array_t<double> out(shape);
    const auto v = f.values();
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::list to_list(const CorrelationVector& phi) {
    py::list out;
    for (int m = 1; m <= phi.m_max(); ++m) out.append(to_array(phi[m]));
    return out;
}

struct Prepared {
    RunConfig cfg;
    RegularityReport rep;
    NormConstants k;
    double z;
};

Prepared prepare(const std::string& text, bool override_gate) {
    auto cfg = parse_config(text);
    auto rep = regularity_report(cfg.u(), cfg.env(), cfg.beta, cfg.B, cfg.t0, cfg.sampling, cfg.quadrature);
    if (!rep.admissible && !override_gate) throw GateError("potential is not admissible under the envelope");
    const double z = cfg.activity(rep.z_max);
    const NormConstants k{rep.c_beta, cfg.B, cfg.beta};
    return {std::move(cfg), std::move(rep), k, z};
}

py::dict solve(const std::string& text, bool override_gate) {
    const auto p = prepare(text, override_gate);
    const Grid grid = p.cfg.grid();
    const KSOperator op(grid, p.cfg.u(), p.cfg.beta, p.cfg.ks);
    const auto sol = solve_ks(op, p.z, p.k, override_gate);
    py::dict out;
    out["z"] = p.z;
    out["z_max"] = p.rep.z_max;
    out["c_beta"] = p.rep.c_beta;
    out["rho"] = to_list(sol.rho);
    out["report"] = to_json(sol.report);
    return out;
}

py::dict derivative(const std::string& text, bool override_gate) {
    const auto p = prepare(text, override_gate);
    if (!p.cfg.perturbation) throw ConfigError("derivative needs a 'perturbation' section");
    const Perturbation& v = *p.cfg.perturbation;
    const double vnorm = vu_norm(v, p.cfg.u(), p.cfg.env(), p.cfg.sampling);
    const Grid grid = p.cfg.grid();
    const KSOperator op(grid, p.cfg.u(), p.cfg.beta, p.cfg.ks);
    const auto sol = solve_ks(op, p.z, p.k, override_gate);
    const DerivativeOperator dop(op, p.cfg.u(), v);
    const auto der = derivative_rho(dop, p.z, sol.rho, p.k, vnorm, p.cfg.t0, override_gate);
    py::dict out;
    out["z"] = p.z;
    out["perturbation_norm"] = vnorm;
    out["rho"] = to_list(sol.rho);
    out["drho"] = to_list(der.dr);
    out["norm_bound"] = der.bound;
    out["norm_bound_ok"] = der.bound_ok;
    out["report"] = to_json(der.report);
    return out;
}

py::dict oracle(const std::string& text, bool override_gate) {
    const auto p = prepare(text, override_gate);
    const GrandCanonicalOracle orc(p.cfg.grid(), p.cfg.u(), p.cfg.beta, p.z, p.cfg.B, p.cfg.oracle);
    py::list rho;
    py::list tail;
    for (int m = 1; m <= p.cfg.ks.m_max; ++m) {
        const auto b = orc.brute_rho(m);
        rho.append(to_array(b.rho));
        tail.append(b.tail);
    }
    py::dict out;
    out["z"] = p.z;
    out["xi"] = orc.xi();
    out["xi_tail"] = orc.xi_tail();
    out["rho"] = rho;
    out["tail"] = tail;
    return out;
}

py::array_t<double> grid_nodes(double L, int n_g) {
    const Grid g(Box(L), n_g);
    py::array_t<double> out({static_cast<py::ssize_t>(g.size()), py::ssize_t{3}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < g.size(); ++i)
        for (int d = 0; d < 3; ++d) w(static_cast<py::ssize_t>(i), d) = g.node(i)[static_cast<std::size_t>(d)];
    return out;
}

py::tuple run(const std::string& command, const std::filesystem::path& config, std::optional<std::filesystem::path> out,
              bool override_gate, std::uint64_t seed) {
    std::ostringstream o;
    std::ostringstream e;
    CommandOptions opt;
    opt.out = std::move(out);
    opt.override_admissibility = override_gate;
    opt.seed = seed;
    opt.out_stream = &o;
    opt.err_stream = &e;
    int code = 0;
    {
        py::gil_scoped_release release;
        code = run_command(command, config, opt);
    }
    return py::make_tuple(code, o.str(), e.str());
}

}  // namespace

PYBIND11_MODULE(_ksd, m) {
    m.doc() = "Kirkwood-Salsburg distribution functions and their potential derivatives";
    m.attr("__version__") = KSD_VERSION;

    // translators run last-registered first, so the base class goes first
    const auto base = py::register_exception<Error>(m, "KsdError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<GateError>(m, "GateError", base.ptr());
    py::register_exception<BudgetError>(m, "BudgetError", base.ptr());

    m.def("check", [](const std::string& text) {
        const auto cfg = parse_config(text);
        return regularity_json(
            regularity_report(cfg.u(), cfg.env(), cfg.beta, cfg.B, cfg.t0, cfg.sampling, cfg.quadrature));
    }, py::arg("config"), "Regularity report (JSON text) for a configuration given as JSON text.");
    m.def("solve", &solve, py::arg("config"), py::arg("override_admissibility") = false);
    m.def("derivative", &derivative, py::arg("config"), py::arg("override_admissibility") = false);
    m.def("oracle", &oracle, py::arg("config"), py::arg("override_admissibility") = false);
    m.def("grid_nodes", &grid_nodes, py::arg("L"), py::arg("n_g"));
    m.def("activity_bound", &activity_bound, py::arg("c_beta"), py::arg("B"), py::arg("beta"));
    m.def("config_hash", [](const std::string& text) { return parse_config(text).hash; }, py::arg("config"));
    m.def("set_threads", &set_thread_count, py::arg("n"));
    m.def("run", &run, py::arg("command"), py::arg("config"), py::arg("out") = py::none(),
          py::arg("override_admissibility") = false, py::arg("seed") = 12345);
}
