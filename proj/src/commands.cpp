#include "ksd/commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "ksd/derivative.hpp"
#include "ksd/errors.hpp"
#include "ksd/oracle.hpp"

namespace ksd {

using nlohmann::json;

namespace {

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::ostream& out_of(const CommandOptions& o) { return o.out_stream ? *o.out_stream : std::cout; }
std::ostream& err_of(const CommandOptions& o) { return o.err_stream ? *o.err_stream : std::cerr; }

struct Context {
    RegularityReport rep;
    NormConstants k;
    double z = 0.0;
};

Context prepare(const RunConfig& cfg, const CommandOptions& opt, bool gate_activity) {
    Context c;
    c.rep = regularity_report(cfg.u(), cfg.env(), cfg.beta, cfg.B, cfg.t0, cfg.sampling, cfg.quadrature, opt.seed);
    c.k = NormConstants{c.rep.c_beta, cfg.B, cfg.beta};
    c.z = cfg.activity(c.rep.z_max);
    if (!c.rep.admissible && !opt.override_admissibility) {
        std::string why = c.rep.diagnostics.empty() ? std::string("envelope check failed") : c.rep.diagnostics.front();
        throw GateError("potential is not admissible: " + why + " (use --override-admissibility to proceed)");
    }
    if (gate_activity && !(c.z < c.rep.z_max) && !opt.override_admissibility) {
        std::ostringstream msg;
        msg << "activity z = " << c.z << " violates the convergence bound z < " << c.rep.z_max;
        throw GateError(msg.str());
    }
    return c;
}

std::filesystem::path output_dir(const RunConfig& cfg, const CommandOptions& opt) {
    auto dir = opt.out ? *opt.out : cfg.outputs.dir;
    std::filesystem::create_directories(dir);
    return dir;
}

class Artifacts {
public:
    Artifacts(std::filesystem::path dir, const OutputSettings& fmt) : dir_(std::move(dir)), fmt_(fmt) {}

    void grid(const std::string& stem, const GridFunction& f) {
        if (fmt_.csv) {
            write_csv(f, dir_ / (stem + ".csv"));
            files_.push_back(stem + ".csv");
        }
        if (fmt_.binary) {
            write_binary(f, dir_ / stem);
            files_.push_back(stem + ".json");
            files_.push_back(stem + ".bin");
        }
    }

    void text(const std::string& name, const std::string& body) {
        std::ofstream out(dir_ / name);
        if (!out) throw ConfigError("cannot write " + (dir_ / name).string());
        out << body;
        if (body.empty() || body.back() != '\n') out << '\n';
        files_.push_back(name);
    }

    void manifest(const std::string& command, const RunConfig& cfg, const Context& ctx, json bounds) {
        std::ostringstream hash;
        hash << std::hex << std::setw(16) << std::setfill('0') << cfg.hash;
        json m;
        m["tool"] = "ksd";
        m["version"] = KSD_VERSION;
        m["command"] = command;
        m["config_hash"] = hash.str();
        m["config"] = json::parse(cfg.canonical);
        m["grid"] = {{"L", cfg.L}, {"n_g", cfg.n_g}, {"nodes", cfg.grid().size()}, {"weight", cfg.grid().weight()}};
        m["ks"] = {{"m_max", cfg.ks.m_max},
                   {"n_max", cfg.ks.n_max},
                   {"neumann_tol", cfg.ks.neumann_tol},
                   {"max_iters", cfg.ks.max_iters}};
        m["oracle"] = {{"N_max", cfg.oracle.N_max}};
        m["constants"] = {{"beta", cfg.beta},
                          {"z", ctx.z},
                          {"c_beta", ctx.rep.c_beta},
                          {"c_beta_error", ctx.rep.c_beta_error},
                          {"B", cfg.B},
                          {"t0", cfg.t0},
                          {"z_max", num(ctx.rep.z_max)},
                          {"norm_weight", ctx.k.weight()}};
        m["bounds"] = std::move(bounds);
        m["tuple_budget"] = tuple_budget();
        auto files = files_;
        std::sort(files.begin(), files.end());
        m["files"] = files;
        std::ofstream out(dir_ / "manifest.json");
        if (!out) throw ConfigError("cannot write manifest in " + dir_.string());
        out << m.dump(2) << '\n';
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    OutputSettings fmt_;
    std::vector<std::string> files_;
};

json truncation_json(const TruncationBudget& b) {
    json nodewise = json::array();
    for (double x : b.nodewise) nodewise.push_back(num(x));
    return {{"c_eff", b.c_eff},
            {"q", b.q},
            {"rho_norm", num(b.rho_norm)},
            {"m_closure", num(b.closure)},
            {"n_truncation", num(b.n_truncation)},
            {"nodewise", nodewise}};
}

json derivative_budget_json(const DerivativeBudget& b) {
    json nodewise = json::array();
    for (double x : b.nodewise) nodewise.push_back(num(x));
    return {{"a_prime", num(b.a_prime)},
            {"dprime_bound", num(b.dprime_bound)},
            {"drho_norm", num(b.drho_norm)},
            {"m_closure", num(b.closure)},
            {"n_truncation", num(b.n_truncation)},
            {"nodewise", nodewise}};
}

json fd_json(const FiniteDifferenceTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows) rows.push_back({{"eps", r.eps}, {"defect", r.defect}});
    return {{"rows", rows}, {"slope", num(t.slope)}};
}

json study_json(const RemainderStudy& s) {
    json rows = json::array();
    for (std::size_t i = 0; i < s.eps.size(); ++i) rows.push_back({{"eps", s.eps[i]}, {"remainder", s.remainder[i]}});
    return {{"rows", rows}, {"slope", num(s.slope)}};
}

/// Explicit-formula derivatives from the oracle with their N_max error bars.
struct ExplicitDerivatives {
    GridFunction d1;
    GridFunction d2;
    double dxi = 0.0;
    double dlog_xi = 0.0;
    FormulaErrors err;
};

ExplicitDerivatives explicit_derivatives(const GrandCanonicalOracle& orc, const Perturbation& v, double beta) {
    std::vector<GridFunction> rho;
    std::vector<double> sup;
    std::vector<double> err;
    for (int m = 1; m <= 4; ++m) {
        auto b = orc.brute_rho(m);
        sup.push_back(b.rho.sup_abs());
        err.push_back(b.tail);
        rho.push_back(std::move(b.rho));
    }
    ExplicitDerivatives e{deriv_rho1(v, beta, rho[0], rho[1], rho[2]), deriv_rho2(v, beta, rho[1], rho[2], rho[3]),
                          0.0, 0.0, {}};
    e.dlog_xi = deriv_log_xi(orc.grid(), v, beta, rho[1]);
    e.dxi = orc.xi() * e.dlog_xi;
    e.err = formula_error_bounds(orc.grid(), v, beta, sup, err);
    return e;
}

}  // namespace

std::string regularity_json(const RegularityReport& r) {
    json cbd = json::array();
    for (const auto& [d, c] : r.c_beta_d) cbd.push_back({{"d", d}, {"c_beta_d", c}});
    json j = {{"beta", r.beta},
              {"c_beta", r.c_beta},
              {"c_beta_error", r.c_beta_error},
              {"B", r.B},
              {"t0", r.t0},
              {"z_max", num(r.z_max)},
              {"c_beta_d", cbd},
              {"admissible", r.admissible},
              {"diagnostics", r.diagnostics},
              {"stability_probe",
               {{"max_drop_per_particle", r.stability.max_drop_per_particle},
                {"particles", r.stability.particles},
                {"trials", r.stability.trials},
                {"certifying", false}}}};
    return j.dump(2);
}

int cmd_check(const RunConfig& cfg, const CommandOptions& opt) {
    const auto rep =
        regularity_report(cfg.u(), cfg.env(), cfg.beta, cfg.B, cfg.t0, cfg.sampling, cfg.quadrature, opt.seed);
    const double z = cfg.activity(rep.z_max);
    const bool admissible = rep.admissible || opt.override_admissibility;
    const bool activity_ok = z > 0.0 && z < rep.z_max;
    json j = json::parse(regularity_json(rep));
    j["z"] = z;
    j["activity_ok"] = activity_ok;
    j["admissibility_overridden"] = opt.override_admissibility && !rep.admissible;
    j["pass"] = admissible && activity_ok;

    Artifacts art(output_dir(cfg, opt), cfg.outputs);
    art.text("check.json", j.dump(2));
    Context ctx{rep, NormConstants{rep.c_beta, cfg.B, cfg.beta}, z};
    art.manifest("check", cfg, ctx, json::object());
    out_of(opt) << j.dump(2) << '\n';
    if (!admissible) err_of(opt) << "ksd: potential is not admissible under the envelope\n";
    if (!activity_ok) err_of(opt) << "ksd: activity z = " << z << " is not below z_max = " << rep.z_max << '\n';
    return admissible && activity_ok ? kExitOk : kExitFailure;
}

int cmd_solve(const RunConfig& cfg, const CommandOptions& opt) {
    const Context ctx = prepare(cfg, opt, true);
    const Grid grid = cfg.grid();
    const KSOperator op(grid, cfg.u(), cfg.beta, cfg.ks);
    const auto sol = solve_ks(op, ctx.z, ctx.k, opt.override_admissibility);

    Artifacts art(output_dir(cfg, opt), cfg.outputs);
    for (int m = 1; m <= cfg.ks.m_max; ++m) art.grid("rho_" + std::to_string(m), sol.rho[m]);
    art.text("report.json", to_json(sol.report));
    art.manifest("solve", cfg, ctx,
                 {{"ks", truncation_json(sol.report.tails)},
                  {"contraction_bound", num(sol.report.ratio_bound)},
                  {"a_priori_norm_bound", num(sol.report.a_priori_norm_bound)}});
    for (const auto& w : sol.report.warnings) err_of(opt) << "ksd: warning: " << w << '\n';
    out_of(opt) << "solve: " << sol.report.iterations << " iterations, final residual "
                << sol.report.residuals.back() << ", contraction " << sol.report.contraction_estimate << " (bound "
                << sol.report.ratio_bound << ")\n";
    return kExitOk;
}

int cmd_derivative(const RunConfig& cfg, const CommandOptions& opt) {
    if (!cfg.perturbation) throw ConfigError("derivative needs a 'perturbation' section");
    const Context ctx = prepare(cfg, opt, true);
    const Perturbation& v = *cfg.perturbation;
    const double vnorm = vu_norm(v, cfg.u(), cfg.env(), cfg.sampling);
    if (vnorm > cfg.t0 && !opt.override_admissibility) {
        std::ostringstream msg;
        msg << "perturbation norm " << vnorm << " exceeds t0 = " << cfg.t0;
        throw GateError(msg.str());
    }
    // With the override an unbounded |v| (ideal gas) simply disables the step gates.
    const double gate_norm = opt.override_admissibility && !std::isfinite(vnorm) ? 0.0 : vnorm;

    const Grid grid = cfg.grid();
    const KSOperator op(grid, cfg.u(), cfg.beta, cfg.ks);
    const auto sol = solve_ks(op, ctx.z, ctx.k, opt.override_admissibility);
    const DerivativeOperator dop(op, cfg.u(), v);
    const auto der = derivative_rho(dop, ctx.z, sol.rho, ctx.k, vnorm, cfg.t0, opt.override_admissibility);

    const auto fd = finite_difference_defect(grid, cfg.u(), v, cfg.beta, ctx.z, cfg.ks, ctx.k, sol.rho, der.dr, cfg.eps,
                                             gate_norm, cfg.t0);
    const double r_max = cfg.env().cutoff_radius(cfg.sampling.tail_eps);
    const auto mayer = remainder_study(
        cfg.eps, [&](double e) { return mayer_l1_remainder(cfg.u(), cfg.beta, v, e, r_max); });
    const auto dm = remainder_study(cfg.eps, [&](double e) { return dm_sup_remainder(op, cfg.u(), v, e); });
    double dm_constant = 0.0;
    if (vnorm > 0.0 && std::isfinite(vnorm))
        for (std::size_t i = 0; i < dm.eps.size(); ++i)
            dm_constant = std::max(dm_constant, dm.remainder[i] / std::pow(dm.eps[i] * vnorm, 2));
    const double dm_bound = 4.0 * std::exp(2.0 * cfg.beta * cfg.B) / (cfg.t0 * cfg.t0);

    json comparison = {{"status", "skipped"}};
    bool comparison_ok = true;
    if (cfg.ks.m_max >= 2 && cfg.oracle.N_max >= 4) {
        try {
            const GrandCanonicalOracle orc(grid, cfg.u(), cfg.beta, ctx.z, cfg.B, cfg.oracle);
            const auto ex = explicit_derivatives(orc, v, cfg.beta);
            const std::vector<GridFunction> implicit{der.dr[1], der.dr[2]};
            const std::vector<GridFunction> formula{ex.d1, ex.d2};
            const std::vector<double> budget{der.budget.nodewise[0] + ex.err.rho1, der.budget.nodewise[1] + ex.err.rho2};
            const auto rep = compare(implicit, formula, budget);
            comparison = json::parse(rep.to_json());
            comparison["status"] = "done";
            comparison["dxi"] = ex.dxi;
            comparison["dlog_xi"] = ex.dlog_xi;
            comparison_ok = rep.pass();
        } catch (const BudgetError& e) {
            comparison = {{"status", "skipped"}, {"reason", e.what()}};
        }
    }

    Artifacts art(output_dir(cfg, opt), cfg.outputs);
    for (int m = 1; m <= cfg.ks.m_max; ++m) art.grid("drho_" + std::to_string(m), der.dr[m]);
    art.text("fd.csv", to_csv(fd));
    json report = {{"solve", json::parse(to_json(sol.report))},
                   {"derivative", json::parse(to_json(der.report))},
                   {"perturbation_norm", num(vnorm)},
                   {"aprime_rho_norm", der.aprime_rho_norm},
                   {"norm_bound", num(der.bound)},
                   {"norm_bound_ok", der.bound_ok},
                   {"finite_differences", fd_json(fd)},
                   {"mayer_remainder", study_json(mayer)},
                   {"dm_remainder", study_json(dm)},
                   {"dm_remainder_constant", dm_constant},
                   {"dm_remainder_constant_bound", dm_bound},
                   {"comparison", comparison}};
    art.text("derivative_report.json", report.dump(2));
    art.manifest("derivative", cfg, ctx,
                 {{"ks", truncation_json(sol.report.tails)}, {"derivative", derivative_budget_json(der.budget)}});
    for (const auto& w : der.report.warnings) err_of(opt) << "ksd: warning: " << w << '\n';
    out_of(opt) << "derivative: " << der.report.iterations << " iterations, |d rho|_X = " << der.report.solution_norm
                << ", FD slope " << fd.slope << ", comparison " << comparison.value("pass", true) << '\n';
    return der.bound_ok && comparison_ok ? kExitOk : kExitFailure;
}

int cmd_limit_sweep(const RunConfig& cfg, const CommandOptions& opt) {
    if (!cfg.sweep) throw ConfigError("limit-sweep needs a 'sweep' section");
    const Context ctx = prepare(cfg, opt, true);
    const Perturbation v = cfg.perturbation ? *cfg.perturbation : zero_perturbation();
    const double vnorm = vu_norm(v, cfg.u(), cfg.env(), cfg.sampling);
    if (vnorm > cfg.t0 && !opt.override_admissibility) {
        std::ostringstream msg;
        msg << "perturbation norm " << vnorm << " exceeds t0 = " << cfg.t0;
        throw GateError(msg.str());
    }
    const Grid inner(Box(cfg.sweep->inner_L), cfg.sweep->inner_n_g);
    const auto table =
        limit_sweep(cfg.u(), v, cfg.beta, ctx.z, inner, cfg.sweep->outer_sides, cfg.ks, ctx.k, vnorm, cfg.t0);

    Artifacts art(output_dir(cfg, opt), cfg.outputs);
    art.text("sweep.csv", to_csv(table));
    json j = {{"rho_nonincreasing", table.rho_nonincreasing},
              {"drho_nonincreasing", table.drho_nonincreasing},
              {"reference_L", table.rows.back().L},
              {"note", "differences are taken against the largest box, a proxy for the infinite-volume limit"}};
    art.text("sweep.json", j.dump(2));
    art.manifest("limit-sweep", cfg, ctx, {{"perturbation_norm", num(vnorm)}});
    out_of(opt) << to_csv(table);
    return kExitOk;
}

int cmd_oracle(const RunConfig& cfg, const CommandOptions& opt) {
    const Context ctx = prepare(cfg, opt, false);
    const Grid grid = cfg.grid();
    const GrandCanonicalOracle orc(grid, cfg.u(), cfg.beta, ctx.z, cfg.B, cfg.oracle);
    Artifacts art(output_dir(cfg, opt), cfg.outputs);

    json xi = {{"xi", orc.xi()}, {"xi_tail", orc.xi_tail()}, {"N_max", cfg.oracle.N_max}, {"z", ctx.z},
               {"volume", grid.box().volume()}};
    if (cfg.u().kind() == PotentialKind::Custom && cfg.u().label() == "zero") {
        const double x = ctx.z * grid.box().volume();
        double truncated = 0.0;
        double term = 1.0;
        for (int n = 0; n <= cfg.oracle.N_max; ++n) {
            truncated += term;
            term *= x / (n + 1);
        }
        xi["ideal_gas"] = {{"closed_form", std::exp(x)},
                           {"truncated_sum", truncated},
                           {"diff_closed_form", std::abs(orc.xi() - std::exp(x))},
                           {"diff_truncated_sum", std::abs(orc.xi() - truncated)},
                           {"within_tail", std::abs(orc.xi() - std::exp(x)) <= orc.xi_tail() * (1.0 + 1e-9)}};
    }

    std::vector<GridFunction> rho;
    json tails = json::array();
    for (int m = 1; m <= cfg.ks.m_max; ++m) {
        art.grid("oracle_Z_" + std::to_string(m), orc.numerator(m));
        auto b = orc.brute_rho(m);
        tails.push_back(b.tail);
        art.grid("oracle_rho_" + std::to_string(m), b.rho);
        rho.push_back(std::move(b.rho));
    }
    xi["rho_tails"] = tails;

    if (cfg.perturbation) {
        try {
            const auto ex = explicit_derivatives(orc, *cfg.perturbation, cfg.beta);
            art.grid("oracle_drho_1", ex.d1);
            art.grid("oracle_drho_2", ex.d2);
            xi["dxi"] = ex.dxi;
            xi["dlog_xi"] = ex.dlog_xi;
            xi["drho_error_bounds"] = {ex.err.rho1, ex.err.rho2};
        } catch (const BudgetError& e) {
            xi["derivatives_skipped"] = e.what();
        }
    }
    art.text("oracle.json", xi.dump(2));

    // Compare against solver output already present in the output directory.
    bool ok = true;
    const auto dir = art.dir();
    if (std::filesystem::exists(dir / "report.json") && std::filesystem::exists(dir / "rho_1.json")) {
        std::ifstream in(dir / "report.json");
        json rep;
        in >> rep;
        std::vector<GridFunction> solver;
        std::vector<GridFunction> oracle;
        std::vector<double> budget;
        const auto& nodewise = rep.at("tail_bounds").at("nodewise");
        for (int m = 1; m <= cfg.ks.m_max; ++m) {
            const auto stem = dir / ("rho_" + std::to_string(m));
            if (!std::filesystem::exists(stem.string() + ".json")) break;
            auto s = read_binary(stem);
            if (!(s.grid() == grid) || static_cast<std::size_t>(m) > nodewise.size()) break;
            const double kb = nodewise[m - 1].is_null() ? std::numeric_limits<double>::infinity()
                                                        : nodewise[m - 1].get<double>();
            solver.push_back(std::move(s));
            oracle.push_back(rho[m - 1]);
            budget.push_back(kb + tails[m - 1].get<double>());
        }
        if (!solver.empty()) {
            const auto cmp = compare(solver, oracle, budget);
            art.text("comparison.json", cmp.to_json());
            ok = cmp.pass();
        }
    }
    art.manifest("oracle", cfg, ctx, {{"xi_tail", orc.xi_tail()}, {"rho_tails", tails}});
    out_of(opt) << "oracle: Xi = " << std::setprecision(17) << orc.xi() << " (tail " << orc.xi_tail() << ")\n";
    return ok ? kExitOk : kExitFailure;
}

int run_command(const std::string& name, const std::filesystem::path& config, const CommandOptions& opt) {
    auto& err = err_of(opt);
    try {
        const RunConfig cfg = load_config(config);
        if (name == "check") return cmd_check(cfg, opt);
        if (name == "solve") return cmd_solve(cfg, opt);
        if (name == "derivative") return cmd_derivative(cfg, opt);
        if (name == "limit-sweep") return cmd_limit_sweep(cfg, opt);
        if (name == "oracle") return cmd_oracle(cfg, opt);
        err << "ksd: unknown command '" << name << "'\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "ksd: configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        err << "ksd: " << e.what() << '\n';
        return kExitFailure;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "ksd: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace ksd
