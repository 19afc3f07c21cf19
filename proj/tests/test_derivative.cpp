#include <cmath>
#include <random>

#include "doctest.h"

#include "desk.hpp"
#include "ksd/errors.hpp"

using namespace ksd;
using doctest::Approx;

namespace {

double max_abs_diff(const CorrelationVector& a, const CorrelationVector& b) {
    double d = 0.0;
    for (int m = 1; m <= a.m_max(); ++m)
        for (std::size_t i = 0; i < a[m].size(); ++i) d = std::max(d, std::abs(a[m][i] - b[m][i]));
    return d;
}

double sup_all(const CorrelationVector& a) {
    double d = 0.0;
    for (int m = 1; m <= a.m_max(); ++m) d = std::max(d, a[m].sup_abs());
    return d;
}

}  // namespace

TEST_SUITE("derivative") {

TEST_CASE("pointwise derivatives") {
    const auto lj = lennard_jones(1.0, 1.0);
    const auto v = exponential_perturbation(0.3, 0.8);
    CHECK(mayer_derivative(lj, 1.0, zero_perturbation(), 1.2) == 0.0);
    CHECK(mayer_derivative(zero_potential(), 2.0, v, 1.2) == Approx(-2.0 * v(1.2)).epsilon(1e-15));
    CHECK(mayer_derivative(hard_sphere(1.0), 1.0, v, 0.5) == 0.0);

    const std::vector<Vec3> one{{0, 0, 0}};
    CHECK(d_derivative(lj, 1.0, v, one) == 0.0);
    const std::vector<Vec3> two{{0, 0, 0}, {1.3, 0, 0}};
    CHECK(d_derivative(lj, 1.0, zero_perturbation(), two) == 0.0);
    CHECK(d_derivative(zero_potential(), 1.5, v, two) == Approx(-1.5 * v(1.3)).epsilon(1e-15));

    const Vec3 R{0, 0, 0};
    const std::vector<Vec3> Rp{{1.1, 0, 0}, {0, 1.4, 0.2}};
    CHECK(k_prime(lj, 1.0, v, R, std::span(Rp).first(1)) == mayer_derivative(lj, 1.0, v, 1.1));
    CHECK(k_prime(lj, 1.0, zero_perturbation(), R, Rp) == 0.0);
    const double r2 = distance(R, Rp[1]);
    const double expect = mayer_derivative(lj, 1.0, v, 1.1) * mayer_f(lj, 1.0, r2) +
                          mayer_f(lj, 1.0, 1.1) * mayer_derivative(lj, 1.0, v, r2);
    CHECK(k_prime(lj, 1.0, v, R, Rp) == Approx(expect).epsilon(1e-14));
}

TEST_CASE("derivative blocks vanish for v = 0 and scale with v") {
    const desk::Case c;
    const KSOperator op(c.grid, c.u, 1.0, c.cfg);
    const auto rho = solve_ks(op, c.z, c.k).rho;
    const DerivativeOperator zero(op, c.u, zero_perturbation());
    CHECK(sup_all(zero.apply_Kprime(rho)) == 0.0);
    CHECK(sup_all(zero.apply_Aprime(rho)) == 0.0);

    const DerivativeOperator one(op, c.u, c.v);
    const DerivativeOperator three(op, c.u, scale(c.v, 3.0));
    const auto a = one.apply_Kprime(rho);
    const auto b = three.apply_Kprime(rho);
    CHECK(max_abs_diff(3.0 * a, b) <= 1e-14 * sup_all(b));
}

TEST_CASE("A' on the ideal gas") {
    const Grid g(Box(2.0), 2);
    const auto u = zero_potential();
    const KSOperator op(g, u, 1.0, KSConfig{});
    const auto v = exponential_perturbation(0.2, 1.0);
    const DerivativeOperator dop(op, u, v);
    const auto out = dop.apply_Aprime(CorrelationVector::unit(g, 3));
    // row 1 keeps the single-kernel term -beta v, rows >= 2 keep only the D' extension
    for (std::size_t i = 0; i < g.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j)
            s -= g.weight() * v(std::max(distance(g.node(i), g.node(j)), kCoincidentRadius));
        CHECK(out[1][i] == Approx(s).epsilon(1e-14));
    }
    std::vector<std::size_t> idx(2);
    for (std::size_t flat = 0; flat < out[2].size(); ++flat) {
        out[2].unflatten(flat, idx);
        const double r = std::max(distance(g.node(idx[0]), g.node(idx[1])), kCoincidentRadius);
        CHECK(out[2][flat] == Approx(-v(r)).epsilon(1e-14));
    }
}

TEST_CASE("A' agrees with an independent term-by-term assembly") {
    const desk::Case c;
    const KSOperator op(c.grid, c.u, 1.0, c.cfg);
    const auto v = combine(c.v, 1.0, exponential_perturbation(0.05, 0.7), 1.0);
    const DerivativeOperator dop(op, c.u, v);
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> uni(-1, 1);
    CorrelationVector phi(c.grid, 3);
    for (int m = 1; m <= 3; ++m)
        for (auto& x : phi[m].values()) x = uni(rng);

    const auto kphi = op.apply_K(phi);
    const auto kpphi = dop.apply_Kprime(phi);
    const auto dk = op.apply_D(kpphi);
    CorrelationVector expect(c.grid, 3);
    std::vector<Vec3> R;
    for (int m = 1; m <= 3; ++m) {
        std::vector<std::size_t> idx(static_cast<std::size_t>(m));
        for (std::size_t flat = 0; flat < phi[m].size(); ++flat) {
            phi[m].unflatten(flat, idx);
            R.clear();
            for (auto i : idx) R.push_back(c.grid.node(i));
            // j* from the tabulated operator, D' assembled directly from pair values.
            const std::size_t js = op.jstar_at(m, flat);
            double dprime = 0.0;
            if (m > 1) {
                double sum = 0.0;
                for (std::size_t i = 0; i < R.size(); ++i)
                    if (i != js) sum += v(std::max(distance(R[i], R[js]), kCoincidentRadius));
                dprime = -op.d_at(m, flat) * sum;
            }
            expect[m][flat] = dprime * kphi[m][flat] + dk[m][flat];
        }
    }
    CHECK(max_abs_diff(dop.apply_Aprime(phi), expect) <= 1e-13 * sup_all(expect));
}

TEST_CASE("derivative of rho: zero direction and linearity") {
    const desk::Case c;
    const KSOperator op(c.grid, c.u, 1.0, c.cfg);
    const auto rho = solve_ks(op, c.z, c.k).rho;

    const DerivativeOperator zero(op, c.u, zero_perturbation());
    CHECK(sup_all(derivative_rho(zero, c.z, rho, c.k, 0.0, desk::kT0).dr) == 0.0);

    const auto v1 = c.v;
    const auto v2 = tail_bump(c.env, -0.05, 1.2, 2.0);
    const double alpha = 0.6;
    const double beta = -1.3;
    auto solve = [&](const Perturbation& v) {
        const DerivativeOperator dop(op, c.u, v);
        return derivative_rho(dop, c.z, rho, c.k, vu_norm(v, c.u, c.env), desk::kT0).dr;
    };
    const auto d1 = solve(v1);
    const auto d2 = solve(v2);
    const auto d12 = solve(combine(v1, alpha, v2, beta));
    const auto lin = alpha * d1 + beta * d2;
    CHECK(max_abs_diff(d12, lin) <= 1e-9 * sup_all(lin));
}

TEST_CASE("derivative of rho on the ideal gas") {
    const Grid g(Box(2.0), 3);
    const auto u = zero_potential();
    const KSOperator op(g, u, 1.0, KSConfig{});
    const NormConstants k{0.0, 0.0, 1.0};
    const double z = 0.1;
    const auto rho = solve_ks(op, z, k, true).rho;
    const auto v = exponential_perturbation(0.1, 1.0);
    const DerivativeOperator dop(op, u, v);
    const auto der = derivative_rho(dop, z, rho, k, desk::kInf, 0.5, true);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j)
            s += g.weight() * v(std::max(distance(g.node(i), g.node(j)), kCoincidentRadius));
        CHECK(der.dr[1][i] == Approx(-z * z * s).epsilon(1e-10));
    }
    CHECK(der.bound_ok);
}

TEST_CASE("finite-difference defect on the desk case") {
    const desk::Case c;
    const KSOperator op(c.grid, c.u, 1.0, c.cfg);
    const auto rho = solve_ks(op, c.z, c.k).rho;
    const DerivativeOperator dop(op, c.u, c.v);
    const auto der = derivative_rho(dop, c.z, rho, c.k, c.vnorm, desk::kT0);
    CHECK(der.bound_ok);
    CHECK(der.report.solution_norm <= der.bound);
    const auto eps = default_eps_ladder();
    REQUIRE(eps.size() == 5);
    CHECK(eps.front() == Approx(0.1));
    CHECK(eps.back() == Approx(0.001));
    const auto fd = finite_difference_defect(c.grid, c.u, c.v, 1.0, c.z, c.cfg, c.k, rho, der.dr, eps, c.vnorm, desk::kT0);
    CHECK(fd.slope >= 1.8);
    CHECK(fd.slope <= 2.2);
    for (std::size_t i = 1; i < fd.rows.size(); ++i)
        CHECK(fd.rows[i].defect / fd.rows[i].eps < fd.rows[i - 1].defect / fd.rows[i - 1].eps);

    const DerivativeOperator zero(op, c.u, zero_perturbation());
    const auto dz = derivative_rho(zero, c.z, rho, c.k, 0.0, desk::kT0);
    const auto fz =
        finite_difference_defect(c.grid, c.u, zero_perturbation(), 1.0, c.z, c.cfg, c.k, rho, dz.dr, eps, 0.0, desk::kT0);
    for (const auto& r : fz.rows) CHECK(r.defect == 0.0);

    // eps |v| must stay below t0 / 2
    const std::vector<double> big{3.0};
    CHECK_THROWS_AS(
        finite_difference_defect(c.grid, c.u, c.v, 1.0, c.z, c.cfg, c.k, rho, der.dr, big, c.vnorm, desk::kT0),
        GateError);
}

TEST_CASE("quadratic remainders") {
    const desk::Case c;
    const auto eps = default_eps_ladder();
    const double r_max = c.env.cutoff_radius();
    const auto mayer =
        remainder_study(eps, [&](double e) { return mayer_l1_remainder(c.u, 1.0, c.v, e, r_max); });
    CHECK(mayer.slope == Approx(2.0).epsilon(0.05));

    const KSOperator op(c.grid, c.u, 1.0, c.cfg);
    const auto dm = remainder_study(eps, [&](double e) { return dm_sup_remainder(op, c.u, c.v, e); });
    CHECK(dm.slope == Approx(2.0).epsilon(0.05));
    for (std::size_t i = 0; i < eps.size(); ++i)
        CHECK(dm.remainder[i] <= 4.0 / (desk::kT0 * desk::kT0) * std::pow(eps[i] * c.vnorm, 2));

    const auto lj = lennard_jones(1.0, 1.0);
    const auto lenv = desk::lj_envelope();
    const auto vlj = tail_bump(lenv, 0.1, 1.0, 3.0);
    const auto configs = random_kernel_configs(3, 64, 2.5, 7);
    const auto kn = remainder_study(eps, [&](double e) { return kn_sup_remainder(lj, 1.0, vlj, e, 3, configs); });
    CHECK(kn.slope == Approx(2.0).epsilon(0.05));
    const auto mlj = remainder_study(
        eps, [&](double e) { return mayer_l1_remainder(lj, 1.0, vlj, e, lenv.cutoff_radius()); });
    CHECK(mlj.slope == Approx(2.0).epsilon(0.05));
}

TEST_CASE("limit sweep plumbing") {
    const desk::Case c;
    KSConfig cfg = c.cfg;
    cfg.m_max = 2;
    const Grid inner(Box(1.0), 2);
    const std::vector<double> same{2.0, 2.0};
    const auto t = limit_sweep(c.u, c.v, 1.0, c.z, inner, same, cfg, c.k, c.vnorm, desk::kT0);
    for (const auto& r : t.rows) {
        CHECK(r.diff_rho == 0.0);
        CHECK(r.diff_drho == 0.0);
    }
    const std::vector<double> bad{2.2};
    CHECK_THROWS_AS(limit_sweep(c.u, c.v, 1.0, c.z, inner, bad, cfg, c.k, c.vnorm, desk::kT0), StructuralError);
    const Grid odd(Box(1.0), 3);
    const std::vector<double> two{2.0};
    CHECK_THROWS_AS(limit_sweep(c.u, c.v, 1.0, c.z, odd, two, cfg, c.k, c.vnorm, desk::kT0), StructuralError);
}

}  // TEST_SUITE
