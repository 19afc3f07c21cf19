// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "desk.hpp"
#include "ksd/errors.hpp"

using namespace ksd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::printf("%s %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double row_sum(const Grid& g, std::size_t i, const std::function<double(double)>& fn) {
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j)
        s += g.weight() * fn(std::max(distance(g.node(i), g.node(j)), kCoincidentRadius));
    return s;
}

void ideal_gas() {
    const auto t = Clock::now();
    const Grid g(Box(2.0), 3);
    const double z = 0.1;
    const KSOperator op(g, zero_potential(), 1.0, KSConfig{});
    const auto sol = solve_ks(op, z, NormConstants{0.0, 0.0, 1.0}, true);
    double rho_err = 0.0;
    for (int m = 1; m <= 3; ++m)
        for (double x : sol.rho[m].values()) rho_err = std::max(rho_err, std::abs(x - std::pow(z, m)));

    OracleConfig cfg;
    cfg.N_max = 8;
    const GrandCanonicalOracle orc(Grid(Box(2.0), 2), zero_potential(), 1.0, z, 0.0, cfg);
    const double x = z * orc.grid().box().volume();
    double sum = 0.0;
    double term = 1.0;
    for (int n = 0; n <= cfg.N_max; ++n) {
        sum += term;
        term *= x / (n + 1);
    }
    const double xi_err = std::abs(orc.xi() - sum);
    const double secs = seconds_since(t);
    report(1, "ideal-gas closed forms", rho_err <= 1e-12 && xi_err <= 1e-12 && secs < 10.0,
           fmt("max|rho - z^m| = %.2e, |Xi - sum| = %.2e, %.2f s", rho_err, xi_err, secs));
}

void oracle_equivalence(const desk::Case& c, const SolveResult& sol) {
    const auto t = Clock::now();
    OracleConfig cfg;
    cfg.N_max = 6;
    const GrandCanonicalOracle orc(c.grid, c.u, desk::kBeta, c.z, desk::kB, cfg);
    bool ok = true;
    std::string detail = fmt("z = %.6g;", c.z);
    for (int m = 1; m <= 3; ++m) {
        const auto b = orc.brute_rho(m);
        double diff = 0.0;
        for (std::size_t i = 0; i < b.rho.size(); ++i) diff = std::max(diff, std::abs(sol.rho[m][i] - b.rho[i]));
        const double budget = sol.report.tails.nodewise[m - 1] + b.tail;
        const double sup = b.rho.sup_abs();
        ok = ok && diff <= budget && diff <= 5e-3 * sup;
        detail += fmt(" m=%d diff %.2e budget %.2e sup %.2e;", m, diff, budget, sup);
    }
    const double secs = seconds_since(t);
    report(2, "oracle equivalence", ok && secs < 300.0, detail + fmt(" %.1f s", secs));
}

bool in_band(double slope) { return slope >= 1.8 && slope <= 2.2; }

void frechet(const desk::Case& c, const KSOperator& op, const SolveResult& sol, const DerivativeResult& der) {
    const auto eps = default_eps_ladder();
    const double r_max = c.env.cutoff_radius(1e-12);
    const auto mayer = remainder_study(eps, [&](double e) { return mayer_l1_remainder(c.u, desk::kBeta, c.v, e, r_max); });
    const auto dm = remainder_study(eps, [&](double e) { return dm_sup_remainder(op, c.u, c.v, e); });
    const auto fd = finite_difference_defect(c.grid, c.u, c.v, desk::kBeta, c.z, c.cfg, c.k, sol.rho, der.dr, eps,
                                             c.vnorm, desk::kT0);
    report(3, "Frechet remainders", in_band(mayer.slope) && in_band(dm.slope) && in_band(fd.slope),
           fmt("|v| = %.4g, slopes: Mayer L1 %.4f, d_m sup %.4f, d rho X-norm %.4f", c.vnorm, mayer.slope, dm.slope,
               fd.slope));
}

void explicit_vs_implicit(const desk::Case& c, const DerivativeResult& der) {
    OracleConfig cfg;
    const GrandCanonicalOracle orc(c.grid, c.u, desk::kBeta, c.z, desk::kB, cfg);
    std::vector<GridFunction> rho;
    std::vector<double> sup;
    std::vector<double> err;
    for (int m = 1; m <= 4; ++m) {
        auto b = orc.brute_rho(m);
        sup.push_back(b.rho.sup_abs());
        err.push_back(b.tail);
        rho.push_back(std::move(b.rho));
    }
    const auto d1 = deriv_rho1(c.v, desk::kBeta, rho[0], rho[1], rho[2]);
    const auto d2 = deriv_rho2(c.v, desk::kBeta, rho[1], rho[2], rho[3]);
    const auto fe = formula_error_bounds(c.grid, c.v, desk::kBeta, sup, err);
    const std::vector<GridFunction> implicit{der.dr[1], der.dr[2]};
    const std::vector<GridFunction> formula{d1, d2};
    const std::vector<double> budget{der.budget.nodewise[0] + fe.rho1, der.budget.nodewise[1] + fe.rho2};
    const auto cmp = compare(implicit, formula, budget);

    // Ideal gas: d rho1 = -beta z^2 int v, from both the formula and the solve.
    const Grid g(Box(2.0), 3);
    const double z = 0.1;
    const auto v = exponential_perturbation(0.3, 1.0);
    std::vector<GridFunction> exact;
    for (int m = 1; m <= 3; ++m) {
        GridFunction f(g, m);
        for (auto& x : f.values()) x = std::pow(z, m);
        exact.push_back(std::move(f));
    }
    const auto f1 = deriv_rho1(v, 1.0, exact[0], exact[1], exact[2]);
    const KSOperator op(g, zero_potential(), 1.0, KSConfig{});
    const NormConstants k0{0.0, 0.0, 1.0};
    const auto sol = solve_ks(op, z, k0, true);
    const DerivativeOperator dop(op, zero_potential(), v);
    const auto d = derivative_rho(dop, z, sol.rho, k0, 0.0, desk::kT0, true);
    double cancel = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double expect = -z * z * row_sum(g, i, [&](double r) { return v(r); });
        cancel = std::max({cancel, std::abs(f1[i] - expect), std::abs(d.dr[1][i] - expect)});
    }
    std::string detail;
    for (const auto& r : cmp.rows) detail += fmt("m=%d diff %.2e budget %.2e; ", r.m, r.sup_diff, r.budget);
    report(4, "explicit vs implicit derivative", cmp.pass() && cancel <= 1e-10,
           detail + fmt("ideal-gas cancellation %.2e", cancel));
}

void norm_certificates(const desk::Case& c, const KSOperator& op, const SolveResult& sol) {
    const double w = c.k.weight();
    double tail = 0.0;
    double fact = 1.0;
    for (int n = 1; n <= 30; ++n) {
        fact *= n;
        if (n > c.cfg.n_max) tail += w / fact;
    }
    const double d_bound = std::exp(2.0 * desk::kBeta * desk::kB);
    const double k_bound = c.rep.c_beta * std::exp(1.0) + tail;
    std::mt19937_64 rng(64);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    double d_worst = 0.0;
    double k_worst = 0.0;
    for (int trial = 0; trial < 64; ++trial) {
        CorrelationVector phi(c.grid, c.cfg.m_max);
        for (int m = 1; m <= c.cfg.m_max; ++m)
            for (auto& x : phi[m].values()) x = uni(rng) * std::pow(w, -m);
        phi *= 1.0 / phi.norm(w);
        d_worst = std::max(d_worst, op.apply_D(phi).norm(w));
        k_worst = std::max(k_worst, op.apply_K(phi).norm(w));
    }
    const double q = c.k.contraction_bound(c.z);
    double ratio = 0.0;
    const auto& r = sol.report.residuals;
    for (std::size_t i = 1; i < r.size(); ++i)
        if (r[i - 1] > 0.0) ratio = std::max(ratio, r[i] / r[i - 1]);
    report(5, "operator-norm certificates", d_worst <= d_bound && k_worst <= k_bound && ratio <= q + 1e-6,
           fmt("|D| %.4f <= %.4f, |K| %.4f <= %.4f (n_max tail %.2e), contraction %.4f <= %.4f", d_worst, d_bound,
               k_worst, k_bound, tail, ratio, q));
}

void thermodynamic_limit(const desk::Case& c) {
    const auto t = Clock::now();
    KSConfig cfg = c.cfg;
    cfg.m_max = 2;
    const Grid inner(Box(1.0), 2);
    const std::vector<double> sides{2.0, 3.0, 4.0};
    const auto table = limit_sweep(c.u, c.v, desk::kBeta, c.z, inner, sides, cfg, c.k, c.vnorm, desk::kT0);
    std::string detail;
    for (const auto& row : table.rows)
        detail += fmt("L=%g rho %.2e d rho %.2e noise %.2e; ", row.L, row.diff_rho, row.diff_drho, row.noise_rho);
    const double secs = seconds_since(t);
    report(6, "thermodynamic-limit sweep", table.rho_nonincreasing && table.drho_nonincreasing && secs < 900.0,
           detail + fmt("%.1f s", secs));
}

void perturbation_gate() {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double t0 = desk::kT0;
    int passed = 0;
    int refused = 0;
    double c_worst = 0.0;
    for (int trial = 0; trial < 16; ++trial) {
        const bool lj = trial % 2 == 1;
        const PairPotential u = lj ? lennard_jones(1.0, 1.0) : hard_sphere(1.0);
        const Envelope env = lj ? desk::lj_envelope() : desk::envelope();
        const double r_lo = env.s() * (1.0 + 2.0 * uni(rng));
        Perturbation raw = combine(tail_bump(env, 1.0, r_lo, r_lo + 0.5 + 3.0 * uni(rng)), uni(rng),
                                   exponential_perturbation(1.0, 0.3 + 0.7 * uni(rng)), uni(rng));
        if (lj) raw = combine(raw, 1.0, scaled_potential(u, 1.0), uni(rng) - 0.5);
        const double target = t0 * (0.05 + 0.95 * uni(rng));
        const Perturbation v = scale(raw, target / vu_norm(raw, u, env));

        const auto p = perturbed(u, v, 1.0, t0, env);
        const auto adm = check_admissible(p, env.scaled(1.0 - t0, 1.0 + t0), 512);
        const auto cb = c_beta(p, desk::kBeta, env.scaled(1.0 - t0, 1.0 + t0), 0.0);
        const double total = cb.value + cb.tail_bound;
        c_worst = std::max(c_worst, total);
        if (adm.admissible && std::isfinite(total)) ++passed;

        try {
            (void)perturbed(u, v, (1.0 + 1e-3) * t0 / target, t0, env);
        } catch (const GateError&) {
            ++refused;
        }
    }
    report(7, "perturbation gate", passed == 16 && refused == 16,
           fmt("%d/16 admissible with finite c_beta (max %.4g), %d/16 refused above t0", passed, c_worst, refused));
}

}  // namespace

int main() {
    try {
        ideal_gas();

        const desk::Case c;
        const KSOperator op(c.grid, c.u, desk::kBeta, c.cfg);
        const auto sol = solve_ks(op, c.z, c.k);
        const DerivativeOperator dop(op, c.u, c.v);
        const auto der = derivative_rho(dop, c.z, sol.rho, c.k, c.vnorm, desk::kT0);

        oracle_equivalence(c, sol);
        frechet(c, op, sol, der);
        explicit_vs_implicit(c, der);
        norm_certificates(c, op, sol);
        thermodynamic_limit(c);
        perturbation_gate();
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 1;
    }
    return failures == 0 ? 0 : 1;
}
