#include "ksd/derivative.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "ksd/errors.hpp"

namespace ksd {

double mayer_derivative(const PairPotential& u, double beta, const Perturbation& v, double r) {
    const double ur = u(r);
    if (ur == std::numeric_limits<double>::infinity()) return 0.0;
    return -beta * std::exp(-beta * ur) * v(r);
}

double d_derivative(const PairPotential& u, double beta, const Perturbation& v, std::span<const Vec3> R) {
    if (R.empty()) throw StructuralError("d_derivative: needs at least one position");
    if (R.size() == 1) return 0.0;
    const std::size_t j = jstar(u, R);
    double d = 1.0;
    double s = 0.0;
    for (std::size_t i = 0; i < R.size(); ++i) {
        if (i == j) continue;
        const double r = distance(R[i], R[j]);
        d *= boltzmann(u, beta, r);
        s += v(r);
    }
    if (d == 0.0) return 0.0;
    return -beta * d * s;
}

double k_prime(const PairPotential& u, double beta, const Perturbation& v, const Vec3& R,
               std::span<const Vec3> Rp) {
    if (Rp.empty()) throw StructuralError("k_prime: needs n >= 1");
    std::vector<double> f(Rp.size());
    std::vector<double> df(Rp.size());
    for (std::size_t i = 0; i < Rp.size(); ++i) {
        const double r = std::max(distance(Rp[i], R), kCoincidentRadius);
        f[i] = mayer_f(u, beta, r);
        df[i] = mayer_derivative(u, beta, v, r);
    }
    CompensatedSum acc;
    for (std::size_t i = 0; i < Rp.size(); ++i) {
        double term = df[i];
        for (std::size_t j = 0; j < Rp.size(); ++j)
            if (j != i) term *= f[j];
        acc.add(term);
    }
    return acc.value();
}

// --- DerivativeOperator ---------------------------------------------------

namespace {

std::vector<double> weighted_mayer_derivative(const Grid& grid, const PairPotential& u, double beta,
                                              const Perturbation& v) {
    auto t = pair_table(grid, [&](double r) { return mayer_derivative(u, beta, v, r); });
    for (double& x : t) x *= grid.weight();
    return t;
}

}  // namespace

DerivativeOperator::DerivativeOperator(const KSOperator& base, const PairPotential& u, const Perturbation& v)
    : base_(&base), gp_(base.grid().size(), weighted_mayer_derivative(base.grid(), u, base.beta(), v)) {
    const Grid& grid = base.grid();
    const std::size_t G = grid.size();
    const int M = base.config().m_max;
    const double beta = base.beta();

    support_.resize(G);
    for (std::size_t i = 0; i < G; ++i) {
        auto a = base.mayer_kernel().nonzeros(i);
        auto b = gp_.nonzeros(i);
        std::vector<std::uint32_t> s;
        std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(s));
        support_[i] = std::move(s);
    }

    const auto vt = pair_table(grid, [&](double r) { return v(r); });
    dprime_.resize(static_cast<std::size_t>(M));
    std::vector<std::size_t> idx;
    for (int m = 1; m <= M; ++m) {
        const std::size_t count = tuple_count(G, m);
        auto& dp = dprime_[m - 1];
        dp.assign(count, 0.0);
        if (m == 1) continue;
        idx.assign(static_cast<std::size_t>(m), 0);
        for (std::size_t flat = 0; flat < count; ++flat) {
            const double d = base.d_at(m, flat);
            if (d == 0.0) continue;
            std::size_t rem = flat;
            for (std::size_t k = idx.size(); k-- > 0;) {
                idx[k] = rem % G;
                rem /= G;
            }
            const std::size_t js = base.jstar_at(m, flat);
            double s = 0.0;
            for (std::size_t i = 0; i < idx.size(); ++i)
                if (i != js) s += vt[idx[i] * G + idx[js]];
            dp[flat] = -beta * d * s;
        }
    }
}

double DerivativeOperator::dprime_sup() const {
    double s = 0.0;
    for (const auto& row : dprime_)
        for (double x : row) s = std::max(s, std::abs(x));
    return s;
}

CorrelationVector DerivativeOperator::apply_Kprime(const CorrelationVector& phi) const {
    const KSOperator& op = *base_;
    if (phi.m_max() != op.config().m_max || !(phi.grid() == op.grid()))
        throw StructuralError("apply_Kprime: vector does not match the operator's grid or m_max");
    const std::size_t G = op.grid().size();
    CorrelationVector out(op.grid(), op.config().m_max);
    for (int m = 1; m <= op.config().m_max; ++m) {
        auto dst = out[m].values();
        const int terms = op.row_terms(m);
        const auto count = static_cast<std::ptrdiff_t>(dst.size());
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t f = 0; f < count; ++f) {
            const auto flat = static_cast<std::size_t>(f);
            const std::size_t p = op.prefix_at(m, flat);
            const std::size_t c = op.center_node(m, flat);
            CompensatedSum acc;
            double factorial = 1.0;
            for (int n = 1; n <= terms; ++n) {
                factorial *= n;
                const double* slab = phi[m + n - 1].values().data() + p * tuple_count(G, n);
                acc.add(contract_kernel_derivative(op.mayer_kernel(), gp_, support_[c], c, slab, n).derived /
                        factorial);
            }
            dst[flat] = acc.value();
        }
    }
    return out;
}

CorrelationVector DerivativeOperator::apply_Dprime(const CorrelationVector& phi) const {
    const KSOperator& op = *base_;
    if (phi.m_max() != op.config().m_max || !(phi.grid() == op.grid()))
        throw StructuralError("apply_Dprime: vector does not match the operator's grid or m_max");
    CorrelationVector out(op.grid(), op.config().m_max);
    for (int m = 2; m <= op.config().m_max; ++m) {
        auto dst = out[m].values();
        auto src = phi[m].values();
        const auto& dp = dprime_[m - 1];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dp[i] * src[i];
    }
    return out;
}

CorrelationVector DerivativeOperator::apply_Aprime(const CorrelationVector& phi) const {
    CorrelationVector out = apply_Dprime(base_->apply_K(phi));
    out += base_->apply_D(apply_Kprime(phi));
    return out;
}

// --- budget and solve -----------------------------------------------------

DerivativeBudget derivative_budget(const NormConstants& k, double grid_regularity, double kprime_regularity,
                                   double grid_dprime_sup, double vnorm, double t0, double z,
                                   const KSConfig& cfg, const TruncationBudget& rho_budget) {
    DerivativeBudget b;
    const int M = cfg.m_max;
    b.nodewise.assign(static_cast<std::size_t>(M), std::numeric_limits<double>::infinity());
    const double c = std::max(k.weight(), grid_regularity);
    const double eb = std::exp(2.0 * k.beta * k.B);
    const double e = std::numbers::e;
    const double q = z * c * eb * e;
    b.dprime_bound = std::max(eb * vnorm / t0, grid_dprime_sup);
    b.a_prime = b.dprime_bound * c * e + eb * e * kprime_regularity;
    if (!(q < 1.0)) {
        b.drho_norm = b.closure = b.n_truncation = std::numeric_limits<double>::infinity();
        return b;
    }
    const double rho_norm = z * c / (1.0 - q);
    const double rho_tail = z * c * std::pow(q, M) / (1.0 - q);
    b.drho_norm = z * b.a_prime * rho_norm / (1.0 - q);
    // sup_{k > M} c^k |d rho_k|: the q-derivative of the rho tail, scaled by z a'.
    const double d_tail = z * b.a_prime * z * c *
                          (M * std::pow(q, M - 1) * (1.0 - q) + std::pow(q, M)) / ((1.0 - q) * (1.0 - q));
    b.closure = (z * eb * c * (e - 2.0) * d_tail + z * b.a_prime * rho_budget.total() + z * b.a_prime * rho_tail) /
                (1.0 - q);
    if (cfg.n_max < M) {
        double tail = 0.0;        // sum_{n > n_max} 1/n!
        double tail_shift = 0.0;  // sum_{n > n_max} 1/(n-1)!
        double f = 1.0;
        for (int n = 1; n <= cfg.n_max; ++n) f /= n;
        for (int n = cfg.n_max + 1; n < cfg.n_max + 40; ++n) {
            tail_shift += f;
            f /= n;
            tail += f;
        }
        b.n_truncation = (z * eb * c * tail * b.drho_norm +
                          z * (b.dprime_bound * c * tail + eb * kprime_regularity * tail_shift) * rho_norm) /
                         (1.0 - q);
    }
    for (int m = 1; m <= M; ++m) b.nodewise[m - 1] = b.total() / std::pow(c, m);
    return b;
}

DerivativeResult derivative_rho(const DerivativeOperator& dop, double z, const CorrelationVector& rho,
                                const NormConstants& k, double vnorm, double t0, bool override_gate) {
    const KSOperator& op = dop.base();
    if (!(z > 0.0)) throw ConfigError("activity z must be positive");
    if (k.c_beta > 0.0 && !override_gate) {
        const double z_max = activity_bound(k.c_beta, k.B, k.beta);
        if (!(z < z_max)) {
            std::ostringstream msg;
            msg << "activity z = " << z << " violates the convergence bound z < " << z_max;
            throw GateError(msg.str());
        }
    }
    if (!override_gate && vnorm > t0) {
        std::ostringstream msg;
        msg << "perturbation norm " << vnorm << " exceeds t0 = " << t0;
        throw GateError(msg.str());
    }
    CorrelationVector rhs = dop.apply_Aprime(rho);
    rhs *= z;
    const double w = k.weight();
    SolveResult sol = neumann_solve(op, z, rhs, k);

    DerivativeResult out{std::move(sol.rho), std::move(sol.report), 0.0, 0.0, false, {}};
    out.aprime_rho_norm = rhs.norm(w) / z;
    const double q = k.contraction_bound(z);
    out.bound = q < 1.0 ? z * out.aprime_rho_norm / (1.0 - q) : std::numeric_limits<double>::infinity();
    out.bound_ok = out.report.solution_norm <= out.bound + op.config().neumann_tol;
    if (!out.bound_ok) {
        std::ostringstream msg;
        msg << "|d rho|_X = " << out.report.solution_norm << " exceeds z |A' rho| / (1 - q) = " << out.bound;
        out.report.warnings.push_back(msg.str());
    }
    out.report.ratio_bound = q;
    const auto rho_budget = ks_truncation_budget(k, op.grid_regularity(), z, op.config());
    out.report.tails = rho_budget;
    out.budget = derivative_budget(k, op.grid_regularity(), dop.kprime_regularity(), dop.dprime_sup(), vnorm, t0, z,
                                   op.config(), rho_budget);
    return out;
}

// --- finite differences ---------------------------------------------------

std::vector<double> default_eps_ladder() {
    std::vector<double> eps;
    for (int k = 0; k < 5; ++k) eps.push_back(std::pow(10.0, -1.0 - 0.5 * k));
    return eps;
}

FiniteDifferenceTable finite_difference_defect(const Grid& grid, const PairPotential& u, const Perturbation& v,
                                               double beta, double z, const KSConfig& cfg, const NormConstants& k,
                                               const CorrelationVector& rho, const CorrelationVector& dr,
                                               std::span<const double> eps, double vnorm, double t0) {
    for (double e : eps)
        if (std::abs(e) * vnorm > 0.5 * t0) {
            std::ostringstream msg;
            msg << "finite difference step " << e << " gives |eps v| = " << std::abs(e) * vnorm << " > t0/2 = "
                << 0.5 * t0;
            throw GateError(msg.str());
        }
    FiniteDifferenceTable t;
    std::vector<double> xs;
    std::vector<double> ys;
    for (double e : eps) {
        const auto ue = add_perturbation(u, v, e);
        const KSOperator op(grid, ue, beta, cfg, &u);
        const auto sol = solve_ks(op, z, k, true);
        CorrelationVector d = sol.rho - rho;
        d.axpy(-e, dr);
        t.rows.push_back({e, d.norm(k.weight())});
        xs.push_back(e);
        ys.push_back(t.rows.back().defect);
    }
    t.slope = loglog_slope(xs, ys);
    return t;
}

double mayer_l1_remainder(const PairPotential& u, double beta, const Perturbation& v, double eps, double r_max,
                          std::span<const double> breakpoints) {
    auto g = [&](double r) {
        const double ur = u(r);
        if (ur == std::numeric_limits<double>::infinity()) return 0.0;
        const double x = -beta * eps * v(r);
        // e^{-beta u} (e^x - 1 - x), with the bracket summed from its series for small x.
        double bracket;
        if (std::abs(x) < 1e-3) {
            bracket = x * x * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0)));
        } else {
            bracket = std::expm1(x) - x;
        }
        return 4.0 * std::numbers::pi * r * r * std::exp(-beta * ur) * std::abs(bracket);
    };
    std::vector<double> bp(breakpoints.begin(), breakpoints.end());
    bp.insert(bp.end(), u.breakpoints().begin(), u.breakpoints().end());
    bp.insert(bp.end(), v.breakpoints().begin(), v.breakpoints().end());
    std::sort(bp.begin(), bp.end());
    // The remainder is tiny by design, so the tolerance follows a coarse first pass.
    QuadratureConfig qc;
    qc.abs_tol = 1e-3;
    qc.max_depth = 6;
    const double coarse = integrate_radial(g, 0.0, r_max, bp, qc).value;
    qc = QuadratureConfig{};
    qc.abs_tol = std::max(1e-9 * coarse, 1e-300);
    return integrate_radial(g, 0.0, r_max, bp, qc).value;
}

double dm_sup_remainder(const KSOperator& base, const PairPotential& u, const Perturbation& v, double eps) {
    const Grid& grid = base.grid();
    const std::size_t G = grid.size();
    const double beta = base.beta();
    const auto vt = pair_table(grid, [&](double r) { return v(r); });
    (void)u;
    double sup = 0.0;
    std::vector<std::size_t> idx;
    for (int m = 2; m <= base.config().m_max; ++m) {
        const std::size_t count = tuple_count(G, m);
        idx.assign(static_cast<std::size_t>(m), 0);
        for (std::size_t flat = 0; flat < count; ++flat) {
            const double d = base.d_at(m, flat);
            if (d == 0.0) continue;
            std::size_t rem = flat;
            for (std::size_t k = idx.size(); k-- > 0;) {
                idx[k] = rem % G;
                rem /= G;
            }
            const std::size_t js = base.jstar_at(m, flat);
            double s = 0.0;
            for (std::size_t i = 0; i < idx.size(); ++i)
                if (i != js) s += vt[idx[i] * G + idx[js]];
            const double x = -beta * eps * s;
            const double bracket = std::abs(x) < 1e-3
                                       ? x * x * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0)))
                                       : std::expm1(x) - x;
            sup = std::max(sup, d * std::abs(bracket));
        }
    }
    return sup;
}

double kn_sup_remainder(const PairPotential& u, double beta, const Perturbation& v, double eps, int n,
                        std::span<const std::vector<Vec3>> configs) {
    if (n < 1) throw ConfigError("kn_sup_remainder: n must be >= 1");
    const auto ue = add_perturbation(u, v, eps);
    double sup = 0.0;
    for (const auto& c : configs) {
        if (c.size() != static_cast<std::size_t>(n) + 1) throw StructuralError("kn_sup_remainder: config size != n + 1");
        std::span<const Vec3> rp(c.data() + 1, c.size() - 1);
        const double r = k_n(ue, beta, c[0], rp) - k_n(u, beta, c[0], rp) - eps * k_prime(u, beta, v, c[0], rp);
        sup = std::max(sup, std::abs(r));
    }
    return sup;
}

std::vector<std::vector<Vec3>> random_kernel_configs(int n, int count, double radius, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<std::vector<Vec3>> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int c = 0; c < count; ++c) {
        std::vector<Vec3> cfg{{0.0, 0.0, 0.0}};
        for (int i = 0; i < n; ++i) {
            Vec3 p;
            do {
                p = {unit(rng), unit(rng), unit(rng)};
            } while (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] > 1.0);
            for (double& x : p) x *= radius;
            cfg.push_back(p);
        }
        out.push_back(std::move(cfg));
    }
    return out;
}

RemainderStudy remainder_study(std::span<const double> eps, const std::function<double(double)>& remainder) {
    RemainderStudy s;
    for (double e : eps) {
        s.eps.push_back(e);
        s.remainder.push_back(remainder(e));
    }
    s.slope = loglog_slope(s.eps, s.remainder);
    return s;
}

// --- thermodynamic-limit sweep --------------------------------------------

SweepTable limit_sweep(const PairPotential& u, const Perturbation& v, double beta, double z, const Grid& inner,
                       std::span<const double> outer_sides, const KSConfig& cfg, const NormConstants& k,
                       double vnorm, double t0) {
    if (outer_sides.empty()) throw ConfigError("limit_sweep: no outer boxes");
    for (std::size_t i = 1; i < outer_sides.size(); ++i)
        if (!(outer_sides[i] >= outer_sides[i - 1])) throw ConfigError("limit_sweep: outer sides must be nondecreasing");
    const double h = inner.spacing();

    struct Run {
        double L;
        int n_g;
        std::vector<GridFunction> rho;
        std::vector<GridFunction> dr;
        double noise_rho;
        double noise_drho;
    };
    std::vector<Run> runs;
    for (double L : outer_sides) {
        const double ng_real = L / h;
        const long ng = std::lround(ng_real);
        if (std::abs(ng_real - static_cast<double>(ng)) > 1e-9 * ng_real)
            throw StructuralError("limit_sweep: box side is not a multiple of the inner grid spacing");
        Grid outer(Box(L), static_cast<int>(ng));
        ImbeddingSpec spec(outer, inner);
        KSOperator op(outer, u, beta, cfg);
        auto sol = solve_ks(op, z, k);
        DerivativeOperator dop(op, u, v);
        auto der = derivative_rho(dop, z, sol.rho, k, vnorm, t0);
        Run run{L, static_cast<int>(ng), {}, {}, 0.0, 0.0};
        for (int m = 1; m <= cfg.m_max; ++m) {
            run.rho.push_back(restrict_to(spec, sol.rho[m]));
            run.dr.push_back(restrict_to(spec, der.dr[m]));
            run.noise_rho = std::max(run.noise_rho, sol.report.tails.nodewise[m - 1]);
            run.noise_drho = std::max(run.noise_drho, der.budget.nodewise[m - 1]);
        }
        runs.push_back(std::move(run));
    }

    auto sup_diff = [](const GridFunction& a, const GridFunction& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
        return s;
    };
    const Run& ref = runs.back();
    SweepTable t;
    for (const auto& r : runs) {
        SweepRow row;
        row.L = r.L;
        row.n_g = r.n_g;
        for (int m = 0; m < cfg.m_max; ++m) {
            row.diff_rho_m.push_back(sup_diff(r.rho[m], ref.rho[m]));
            row.diff_drho_m.push_back(sup_diff(r.dr[m], ref.dr[m]));
            row.diff_rho = std::max(row.diff_rho, row.diff_rho_m.back());
            row.diff_drho = std::max(row.diff_drho, row.diff_drho_m.back());
        }
        row.noise_rho = r.noise_rho + ref.noise_rho;
        row.noise_drho = r.noise_drho + ref.noise_drho;
        t.rows.push_back(std::move(row));
    }
    t.rho_nonincreasing = true;
    t.drho_nonincreasing = true;
    for (std::size_t i = 1; i < t.rows.size(); ++i) {
        const auto& a = t.rows[i - 1];
        const auto& b = t.rows[i];
        if (b.diff_rho > a.diff_rho + b.noise_rho) t.rho_nonincreasing = false;
        if (b.diff_drho > a.diff_drho + b.noise_drho) t.drho_nonincreasing = false;
    }
    return t;
}

std::string to_csv(const FiniteDifferenceTable& t) {
    std::ostringstream out;
    out.precision(17);
    out << "eps,defect\n";
    for (const auto& r : t.rows) out << r.eps << ',' << r.defect << '\n';
    return out.str();
}

std::string to_csv(const SweepTable& t) {
    std::ostringstream out;
    out.precision(17);
    out << "L,n_g,diff_rho,diff_drho,noise_rho,noise_drho";
    const std::size_t M = t.rows.empty() ? 0 : t.rows.front().diff_rho_m.size();
    for (std::size_t m = 1; m <= M; ++m) out << ",diff_rho_" << m;
    for (std::size_t m = 1; m <= M; ++m) out << ",diff_drho_" << m;
    out << '\n';
    for (const auto& r : t.rows) {
        out << r.L << ',' << r.n_g << ',' << r.diff_rho << ',' << r.diff_drho << ',' << r.noise_rho << ','
            << r.noise_drho;
        for (double x : r.diff_rho_m) out << ',' << x;
        for (double x : r.diff_drho_m) out << ',' << x;
        out << '\n';
    }
    return out.str();
}

}  // namespace ksd
