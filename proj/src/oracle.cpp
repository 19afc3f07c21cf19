#include "ksd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "ksd/errors.hpp"
#include "ksd/ks.hpp"

namespace ksd {

double u_total(const PairPotential& u, std::span<const Vec3> R) {
    double s = 0.0;
    for (std::size_t i = 0; i < R.size(); ++i)
        for (std::size_t j = i + 1; j < R.size(); ++j) {
            const double x = u(std::max(distance(R[i], R[j]), kCoincidentRadius));
            if (x == std::numeric_limits<double>::infinity()) return x;
            s += x;
        }
    return s;
}

double v_total(const Perturbation& v, std::span<const Vec3> R) {
    double s = 0.0;
    for (std::size_t i = 0; i < R.size(); ++i)
        for (std::size_t j = i + 1; j < R.size(); ++j) s += v(std::max(distance(R[i], R[j]), kCoincidentRadius));
    return s;
}

void OracleConfig::validate(int m_max) const {
    if (N_max < 2) throw ConfigError("oracle.N_max must be >= 2");
    if (N_max < m_max + 2) {
        std::ostringstream msg;
        msg << "oracle.N_max = " << N_max << " must be >= m_max + 2 = " << m_max + 2;
        throw ConfigError(msg.str());
    }
}

namespace {

double poisson_tail(double x, int from) {
    // sum_{k >= from} x^k / k!
    double term = 1.0;
    for (int k = 1; k <= from; ++k) term *= x / k;
    double s = 0.0;
    for (int k = from; k < from + 400; ++k) {
        s += term;
        term *= x / (k + 1);
        if (term < 1e-300 || term < 1e-18 * s) break;
    }
    return s;
}

std::size_t binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    long double r = 1.0L;
    for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<long double>(n - k + i) / static_cast<long double>(i);
    if (r > static_cast<long double>(std::numeric_limits<std::size_t>::max())) return std::numeric_limits<std::size_t>::max();
    return static_cast<std::size_t>(std::llround(r));
}

/// Number of multisets of size 0..k over G symbols.
std::size_t multisets_upto(std::size_t G, int k) {
    std::size_t total = 0;
    for (int j = 0; j <= k; ++j) {
        const std::size_t c = binomial(G + static_cast<std::size_t>(j) - 1, static_cast<std::size_t>(j));
        if (c > std::numeric_limits<std::size_t>::max() - total) return std::numeric_limits<std::size_t>::max();
        total += c;
    }
    return total;
}

/// sum_{k=0}^{kmax} x^k S_k with S_k = sum over multisets of size k of prod a[s] prod_{pairs} B / prod mult!.
class MultisetSum {
public:
    MultisetSum(const std::vector<double>& B, std::size_t G, int kmax, double x)
        : B_(B), G_(G), kmax_(kmax), x_(x), field_(static_cast<std::size_t>(kmax) + 1, std::vector<double>(G)) {}

    double operator()(std::span<const double> a) {
        level_.assign(static_cast<std::size_t>(kmax_) + 1, CompensatedSum{});
        level_[0].add(1.0);
        if (kmax_ > 0) {
            std::copy(a.begin(), a.end(), field_[0].begin());
            descend(0, 0, 1.0, 0, G_);
        }
        // Horner in x over the per-size sums.
        double r = 0.0;
        for (int k = kmax_; k >= 0; --k) r = r * x_ + level_[k].value();
        return r;
    }

private:
    void descend(int depth, std::size_t start, double weight, int run, std::size_t last) {
        const auto& f = field_[depth];
        for (std::size_t t = start; t < G_; ++t) {
            const double fac = f[t];
            if (fac == 0.0) continue;
            const int mult = t == last ? run + 1 : 1;
            const double w = weight * fac / mult;
            level_[depth + 1].add(w);
            if (depth + 1 < kmax_) {
                auto& next = field_[depth + 1];
                const double* row = &B_[t * G_];
                for (std::size_t s = t; s < G_; ++s) next[s] = f[s] * row[s];
                descend(depth + 1, t, w, mult, t);
            }
        }
    }

    const std::vector<double>& B_;
    std::size_t G_;
    int kmax_;
    double x_;
    std::vector<std::vector<double>> field_;
    std::vector<CompensatedSum> level_;
};

std::vector<double> boltzmann_table(const Grid& grid, const PairPotential& u, double beta) {
    return pair_table(grid, [&](double r) { return boltzmann(u, beta, r); });
}

}  // namespace

double xi_tail_bound(double z, double volume, double beta, double B, int N_max) {
    return poisson_tail(z * volume * std::exp(beta * B), N_max + 1);
}

double numerator_tail_bound(double z, double volume, double beta, double B, int N_max, int m) {
    const double eb = std::exp(beta * B);
    return std::pow(z * eb, m) * poisson_tail(z * volume * eb, N_max + 1 - m);
}

GrandCanonicalOracle::GrandCanonicalOracle(const Grid& grid, const PairPotential& u, double beta, double z, double B,
                                           const OracleConfig& cfg)
    : grid_(grid), beta_(beta), z_(z), B_(B), cfg_(cfg), boltz_(boltzmann_table(grid, u, beta)) {
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(z >= 0.0)) throw ConfigError("activity z must be nonnegative");
    if (cfg_.N_max < 2) throw ConfigError("oracle.N_max must be >= 2");
    const std::size_t G = grid_.size();
    require_budget(multisets_upto(G, cfg_.N_max), "partition function multisets");
    const std::vector<double> ones(G, 1.0);
    MultisetSum sum(boltz_, G, cfg_.N_max, z * grid_.weight());
    xi_ = sum(ones);
    xi_tail_ = xi_tail_bound(z, grid_.box().volume(), beta, B, cfg_.N_max);
}

std::size_t GrandCanonicalOracle::work(int m) const {
    const std::size_t G = grid_.size();
    const std::size_t sorted = binomial(G + static_cast<std::size_t>(m) - 1, static_cast<std::size_t>(m));
    const std::size_t inner = multisets_upto(G, cfg_.N_max - m);
    if (inner != 0 && sorted > std::numeric_limits<std::size_t>::max() / inner)
        return std::numeric_limits<std::size_t>::max();
    return sorted * inner;
}

GridFunction GrandCanonicalOracle::numerator(int m) const {
    if (m < 1 || m > cfg_.N_max) throw ConfigError("numerator: order must lie in [1, N_max]");
    require_budget(work(m), "oracle numerator multisets");
    const std::size_t G = grid_.size();
    GridFunction out(grid_, m);
    const int kmax = cfg_.N_max - m;
    const double zm = std::pow(z_, m);

    // Sorted representatives.
    std::vector<std::size_t> reps;
    std::vector<std::size_t> idx(static_cast<std::size_t>(m), 0);
    while (true) {
        std::size_t flat = 0;
        for (auto k : idx) flat = flat * G + k;
        reps.push_back(flat);
        std::size_t pos = idx.size();
        while (pos > 0 && idx[pos - 1] == G - 1) --pos;
        if (pos == 0) break;
        const std::size_t v = idx[pos - 1] + 1;
        for (std::size_t k = pos - 1; k < idx.size(); ++k) idx[k] = v;
    }

    const auto count = static_cast<std::ptrdiff_t>(reps.size());
#pragma omp parallel
    {
        MultisetSum sum(boltz_, G, kmax, z_ * grid_.weight());
        std::vector<double> a(G);
        std::vector<std::size_t> t(static_cast<std::size_t>(m));
#pragma omp for schedule(dynamic, 16)
        for (std::ptrdiff_t r = 0; r < count; ++r) {
            const std::size_t flat = reps[static_cast<std::size_t>(r)];
            out.unflatten(flat, t);
            double eu = 1.0;
            for (std::size_t i = 0; i < t.size() && eu != 0.0; ++i)
                for (std::size_t j = i + 1; j < t.size(); ++j) eu *= boltz_[t[i] * G + t[j]];
            if (eu == 0.0) {
                out[flat] = 0.0;
                continue;
            }
            for (std::size_t s = 0; s < G; ++s) {
                double p = 1.0;
                for (auto ti : t) p *= boltz_[ti * G + s];
                a[s] = p;
            }
            out[flat] = zm * eu * sum(a);
        }
    }

    // Fill the remaining orderings from their sorted representative.
    std::vector<std::size_t> t(static_cast<std::size_t>(m));
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        out.unflatten(flat, t);
        if (std::is_sorted(t.begin(), t.end())) continue;
        std::sort(t.begin(), t.end());
        out[flat] = out.at(t);
    }
    return out;
}

double GrandCanonicalOracle::numerator_tail(int m) const {
    return numerator_tail_bound(z_, grid_.box().volume(), beta_, B_, cfg_.N_max, m);
}

BruteRho GrandCanonicalOracle::brute_rho(int m) const {
    GridFunction z = numerator(m);
    for (double& x : z.values()) x /= xi_;
    const double sup = z.sup_abs();
    const double tail = (numerator_tail(m) + sup * xi_tail_) / xi_;
    return {std::move(z), tail};
}

// --- explicit derivative formulas -----------------------------------------

namespace {

std::vector<double> v_table(const Grid& grid, const Perturbation& v) {
    return pair_table(grid, [&](double r) { return v(r); });
}

void require_order(const GridFunction& f, int m, const char* name) {
    if (f.order() != m) throw StructuralError(std::string(name) + " has the wrong order");
}

}  // namespace

double deriv_xi(const Grid& grid, const Perturbation& v, double beta, const GridFunction& z2) {
    return deriv_log_xi(grid, v, beta, z2);
}

double deriv_log_xi(const Grid& grid, const Perturbation& v, double beta, const GridFunction& rho2) {
    require_order(rho2, 2, "rho2");
    const auto vt = v_table(grid, v);
    CompensatedSum s;
    for (std::size_t k = 0; k < vt.size(); ++k) s.add(vt[k] * rho2[k]);
    const double w = grid.weight();
    return -0.5 * beta * w * w * s.value();
}

GridFunction deriv_rho1(const Perturbation& v, double beta, const GridFunction& rho1, const GridFunction& rho2,
                        const GridFunction& rho3) {
    require_order(rho1, 1, "rho1");
    require_order(rho2, 2, "rho2");
    require_order(rho3, 3, "rho3");
    const Grid& grid = rho1.grid();
    const std::size_t G = grid.size();
    const double w = grid.weight();
    const auto vt = v_table(grid, v);
    const double dlog = deriv_log_xi(grid, v, beta, rho2);
    GridFunction out(grid, 1);
    for (std::size_t r1 = 0; r1 < G; ++r1) {
        CompensatedSum t1;
        for (std::size_t rp = 0; rp < G; ++rp) t1.add(vt[r1 * G + rp] * rho2[r1 * G + rp]);
        CompensatedSum t2;
        const double* slab = rho3.values().data() + r1 * G * G;
        for (std::size_t k = 0; k < G * G; ++k) t2.add(vt[k] * slab[k]);
        out[r1] = -beta * w * t1.value() - 0.5 * beta * w * w * t2.value() - rho1[r1] * dlog;
    }
    return out;
}

GridFunction deriv_rho2(const Perturbation& v, double beta, const GridFunction& rho2, const GridFunction& rho3,
                        const GridFunction& rho4) {
    require_order(rho2, 2, "rho2");
    require_order(rho3, 3, "rho3");
    require_order(rho4, 4, "rho4");
    const Grid& grid = rho2.grid();
    const std::size_t G = grid.size();
    const double w = grid.weight();
    const auto vt = v_table(grid, v);
    const double dlog = deriv_log_xi(grid, v, beta, rho2);
    GridFunction out(grid, 2);
    const auto count = static_cast<std::ptrdiff_t>(G * G);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t f = 0; f < count; ++f) {
        const auto flat = static_cast<std::size_t>(f);
        const std::size_t r1 = flat / G;
        const std::size_t r2 = flat % G;
        const double* s3 = rho3.values().data() + flat * G;
        CompensatedSum a;
        CompensatedSum b;
        for (std::size_t rp = 0; rp < G; ++rp) {
            a.add(vt[r1 * G + rp] * s3[rp]);
            b.add(vt[r2 * G + rp] * s3[rp]);
        }
        CompensatedSum c;
        const double* s4 = rho4.values().data() + flat * G * G;
        for (std::size_t k = 0; k < G * G; ++k) c.add(vt[k] * s4[k]);
        out[flat] = -beta * vt[flat] * rho2[flat] - beta * w * (a.value() + b.value()) -
                    0.5 * beta * w * w * c.value() - rho2[flat] * dlog;
    }
    return out;
}

FormulaErrors formula_error_bounds(const Grid& grid, const Perturbation& v, double beta,
                                   std::span<const double> sup_rho, std::span<const double> err) {
    if (sup_rho.size() < 4 || err.size() < 4) throw StructuralError("formula_error_bounds: needs orders 1..4");
    const std::size_t G = grid.size();
    const double w = grid.weight();
    const auto vt = v_table(grid, v);
    double v1 = 0.0;  // max_R sum_R' w |v|
    double v2 = 0.0;  // sum w^2 |v|
    double v0 = 0.0;  // max |v|
    for (std::size_t i = 0; i < G; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < G; ++j) {
            const double a = std::abs(vt[i * G + j]);
            row += a;
            v0 = std::max(v0, a);
        }
        v1 = std::max(v1, w * row);
        v2 += w * w * row;
    }
    const double e1 = err[0], e2 = err[1], e3 = err[2], e4 = err[3];
    const double p1 = sup_rho[0], p2 = sup_rho[1];
    FormulaErrors fe;
    fe.rho1 = beta * v1 * e2 + 0.5 * beta * v2 * e3 + 0.5 * beta * v2 * (e1 * p2 + p1 * e2 + e1 * e2);
    fe.rho2 = beta * v0 * e2 + 2.0 * beta * v1 * e3 + 0.5 * beta * v2 * e4 + 0.5 * beta * v2 * (2.0 * p2 * e2 + e2 * e2);
    return fe;
}

std::vector<GridFunction> fd_brute(const Grid& grid, const PairPotential& u, const Perturbation& v, double beta,
                                   double z, double B, const OracleConfig& cfg, double eps, double vnorm, double t0) {
    if (std::abs(eps) * vnorm > 0.5 * t0) {
        std::ostringstream msg;
        msg << "finite difference step " << eps << " gives |eps v| = " << std::abs(eps) * vnorm << " > t0/2";
        throw GateError(msg.str());
    }
    const GrandCanonicalOracle base(grid, u, beta, z, B, cfg);
    const GrandCanonicalOracle pert(grid, add_perturbation(u, v, eps), beta, z, B, cfg);
    std::vector<GridFunction> out;
    for (int m = 1; m <= 2; ++m) {
        auto a = pert.brute_rho(m).rho;
        const auto b = base.brute_rho(m).rho;
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = (a[i] - b[i]) / eps;
        out.push_back(std::move(a));
    }
    return out;
}

double mean_particle_number(const Grid& grid, const PairPotential& u, double beta, double z, double B,
                            const OracleConfig& cfg, double dz) {
    if (!(dz > 0.0) || !(dz < z)) throw ConfigError("mean_particle_number: need 0 < dz < z");
    const double hi = std::log(GrandCanonicalOracle(grid, u, beta, z + dz, B, cfg).xi());
    const double lo = std::log(GrandCanonicalOracle(grid, u, beta, z - dz, B, cfg).xi());
    return z * (hi - lo) / (2.0 * dz);
}

bool ComparisonReport::pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const ComparisonRow& r) { return r.pass; });
}

std::string ComparisonReport::to_json() const {
    nlohmann::json j;
    j["pass"] = pass();
    j["orders"] = nlohmann::json::array();
    for (const auto& r : rows)
        j["orders"].push_back({{"m", r.m},
                               {"sup_diff", r.sup_diff},
                               {"sup_reference", r.sup_ref},
                               {"budget", std::isfinite(r.budget) ? nlohmann::json(r.budget) : nlohmann::json(nullptr)},
                               {"pass", r.pass}});
    return j.dump(2);
}

ComparisonReport compare(std::span<const GridFunction> a, std::span<const GridFunction> b,
                         std::span<const double> budget) {
    if (a.size() != b.size() || a.size() != budget.size()) throw StructuralError("compare: size mismatch");
    ComparisonReport rep;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].order() != b[k].order() || a[k].size() != b[k].size())
            throw StructuralError("compare: grid functions differ in shape");
        ComparisonRow row;
        row.m = a[k].order();
        for (std::size_t i = 0; i < a[k].size(); ++i) row.sup_diff = std::max(row.sup_diff, std::abs(a[k][i] - b[k][i]));
        row.sup_ref = b[k].sup_abs();
        row.budget = budget[k];
        row.pass = row.sup_diff <= budget[k];
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace ksd
