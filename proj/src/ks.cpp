#include "ksd/ks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "ksd/errors.hpp"

namespace ksd {

void KSConfig::validate() const {
    if (m_max < 2 || m_max > 32) throw ConfigError("ks.m_max must lie in [2, 32]");
    if (n_max < 1) throw ConfigError("ks.n_max must be >= 1");
    if (!(neumann_tol > 0.0)) throw ConfigError("ks.neumann_tol must be positive");
    if (max_iters < 1) throw ConfigError("ks.max_iters must be >= 1");
}

// --- CorrelationVector ----------------------------------------------------

CorrelationVector::CorrelationVector(const Grid& grid, int m_max) {
    if (m_max < 1) throw StructuralError("correlation vector needs m_max >= 1");
    rows_.reserve(static_cast<std::size_t>(m_max));
    for (int m = 1; m <= m_max; ++m) rows_.emplace_back(grid, m);
}

CorrelationVector::CorrelationVector(std::vector<GridFunction> rows) : rows_(std::move(rows)) {
    if (rows_.empty()) throw StructuralError("correlation vector needs at least one order");
    for (std::size_t k = 0; k < rows_.size(); ++k) {
        if (rows_[k].order() != static_cast<int>(k + 1)) throw StructuralError("correlation vector rows out of order");
        if (!(rows_[k].grid() == rows_.front().grid()))
            throw StructuralError("correlation vector rows live on different grids");
    }
}

CorrelationVector CorrelationVector::unit(const Grid& grid, int m_max, double z) {
    CorrelationVector e(grid, m_max);
    for (double& x : e[1].values()) x = z;
    return e;
}

double CorrelationVector::min_value() const {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& r : rows_)
        for (double x : r.values()) lo = std::min(lo, x);
    return lo;
}

void CorrelationVector::require_compatible(const CorrelationVector& other) const {
    if (other.m_max() != m_max() || !(other.grid() == grid()))
        throw StructuralError("correlation vectors differ in grid or m_max");
}

CorrelationVector& CorrelationVector::operator+=(const CorrelationVector& other) { return axpy(1.0, other); }
CorrelationVector& CorrelationVector::operator-=(const CorrelationVector& other) { return axpy(-1.0, other); }

CorrelationVector& CorrelationVector::operator*=(double a) {
    for (auto& r : rows_)
        for (double& x : r.values()) x *= a;
    return *this;
}

CorrelationVector& CorrelationVector::axpy(double a, const CorrelationVector& x) {
    require_compatible(x);
    for (std::size_t k = 0; k < rows_.size(); ++k) {
        auto dst = rows_[k].values();
        auto src = x.rows_[k].values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
    }
    return *this;
}

CorrelationVector operator+(CorrelationVector a, const CorrelationVector& b) { return a += b; }
CorrelationVector operator-(CorrelationVector a, const CorrelationVector& b) { return a -= b; }
CorrelationVector operator*(double s, CorrelationVector a) { return a *= s; }

// --- pointwise ------------------------------------------------------------

std::size_t jstar(const PairPotential& u, std::span<const Vec3> R) {
    if (R.size() < 2) return 0;
    for (std::size_t i = 0; i < R.size(); ++i)
        for (std::size_t j = i + 1; j < R.size(); ++j)
            if (R[i] == R[j]) {
                std::ostringstream msg;
                msg << "jstar: particles " << i << " and " << j << " coincide";
                throw DegenerateConfiguration(msg.str());
            }
    std::size_t best = 0;
    double best_sum = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < R.size(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < R.size(); ++i)
            if (i != j) s += u(distance(R[i], R[j]));
        if (s > best_sum) {
            best_sum = s;
            best = j;
        }
    }
    return best;
}

std::vector<Vec3> project_pi(std::span<const Vec3> R, std::size_t j) {
    if (R.size() < 2) throw StructuralError("project_pi: needs at least two positions");
    if (j >= R.size()) throw StructuralError("project_pi: index out of range");
    std::vector<Vec3> out;
    out.reserve(R.size() - 1);
    for (std::size_t i = 0; i < R.size(); ++i)
        if (i != j) out.push_back(R[i]);
    return out;
}

double d_m(const PairPotential& u, double beta, std::span<const Vec3> R) {
    if (R.empty()) throw StructuralError("d_m: needs at least one position");
    if (R.size() == 1) return 1.0;
    const std::size_t j = jstar(u, R);
    double d = 1.0;
    for (std::size_t i = 0; i < R.size(); ++i)
        if (i != j) d *= boltzmann(u, beta, distance(R[i], R[j]));
    return d;
}

double k_n(const PairPotential& u, double beta, const Vec3& R, std::span<const Vec3> Rp) {
    if (Rp.empty()) throw StructuralError("k_n: needs n >= 1");
    double k = 1.0;
    for (const Vec3& p : Rp) k *= mayer_f(u, beta, std::max(distance(p, R), kCoincidentRadius));
    return k;
}

// --- kernels --------------------------------------------------------------

WeightedKernel::WeightedKernel(std::size_t G, std::vector<double> values) : G_(G), values_(std::move(values)) {
    if (values_.size() != G * G) throw StructuralError("weighted kernel must be G x G");
    nz_.resize(G);
    for (std::size_t i = 0; i < G; ++i)
        for (std::size_t j = 0; j < G; ++j)
            if (values_[i * G + j] != 0.0) nz_[i].push_back(static_cast<std::uint32_t>(j));
}

double WeightedKernel::max_row_l1() const {
    double best = 0.0;
    for (std::size_t i = 0; i < G_; ++i) {
        CompensatedSum s;
        for (auto j : nz_[i]) s.add(std::abs(values_[i * G_ + j]));
        best = std::max(best, s.value());
    }
    return best;
}

namespace {

double contract_rec(const WeightedKernel& g, std::size_t center, const double* slab, int n, std::size_t stride) {
    if (n == 0) return slab[0];
    const std::size_t G = g.size();
    CompensatedSum acc;
    for (auto r : g.nonzeros(center))
        acc.add(g(center, r) * contract_rec(g, center, slab + r * stride, n - 1, stride / G));
    return acc.value();
}

ContractPair contract_pair_rec(const WeightedKernel& g, const WeightedKernel& gp, std::span<const std::uint32_t> support,
                               std::size_t center, const double* slab, int n, std::size_t stride) {
    if (n == 0) return {slab[0], 0.0};
    const std::size_t G = g.size();
    CompensatedSum plain;
    CompensatedSum derived;
    for (auto r : support) {
        const double gv = g(center, r);
        const double gpv = gp(center, r);
        const auto sub = contract_pair_rec(g, gp, support, center, slab + r * stride, n - 1, stride / G);
        plain.add(gv * sub.plain);
        derived.add(gv * sub.derived);
        derived.add(gpv * sub.plain);
    }
    return {plain.value(), derived.value()};
}

}  // namespace

double contract_kernel(const WeightedKernel& g, std::size_t center, const double* slab, int n) {
    return contract_rec(g, center, slab, n, tuple_count(g.size(), n - 1));
}

ContractPair contract_kernel_derivative(const WeightedKernel& g, const WeightedKernel& gp,
                                        std::span<const std::uint32_t> support, std::size_t center,
                                        const double* slab, int n) {
    return contract_pair_rec(g, gp, support, center, slab, n, tuple_count(g.size(), n - 1));
}

std::vector<double> pair_table(const Grid& grid, const std::function<double(double)>& fn) {
    const auto dist = grid.pair_distances();
    std::vector<double> out(dist.size());
    for (std::size_t k = 0; k < dist.size(); ++k) out[k] = fn(std::max(dist[k], kCoincidentRadius));
    return out;
}

double NormConstants::contraction_bound(double z) const {
    return z * weight() * std::exp(2.0 * beta * B + 1.0);
}

// --- KSOperator -----------------------------------------------------------

namespace {

std::vector<double> weighted_mayer(const Grid& grid, const PairPotential& u, double beta) {
    auto t = pair_table(grid, [&](double r) { return mayer_f(u, beta, r); });
    for (double& x : t) x *= grid.weight();
    return t;
}

}  // namespace

KSOperator::KSOperator(const Grid& grid, const PairPotential& u, double beta, const KSConfig& cfg,
                       const PairPotential* jstar_reference)
    : grid_(grid),
      cfg_(cfg),
      beta_(beta),
      ref_u_(pair_table(grid, [&](double r) { return (jstar_reference ? *jstar_reference : u)(r); })),
      boltz_(pair_table(grid, [&](double r) { return boltzmann(u, beta, r); })),
      wf_(grid.size(), weighted_mayer(grid, u, beta)) {
    cfg_.validate();
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    const std::size_t G = grid_.size();
    const int M = cfg_.m_max;
    require_budget(tuple_count(G, M), "KS operator tuple tables");

    jstar_.resize(static_cast<std::size_t>(M));
    prefix_.resize(static_cast<std::size_t>(M));
    d_.resize(static_cast<std::size_t>(M));
    std::vector<std::size_t> idx;
    for (int m = 1; m <= M; ++m) {
        const std::size_t count = tuple_count(G, m);
        auto& js = jstar_[m - 1];
        auto& px = prefix_[m - 1];
        auto& dd = d_[m - 1];
        js.assign(count, 0);
        px.assign(count, 0);
        dd.assign(count, 1.0);
        if (m == 1) continue;
        idx.assign(static_cast<std::size_t>(m), 0);
        for (std::size_t flat = 0; flat < count; ++flat) {
            std::size_t rem = flat;
            for (std::size_t k = idx.size(); k-- > 0;) {
                idx[k] = rem % G;
                rem /= G;
            }
            std::size_t best = 0;
            double best_sum = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < idx.size(); ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < idx.size(); ++i)
                    if (i != j) s += ref_u_[idx[i] * G + idx[j]];
                if (s > best_sum) {
                    best_sum = s;
                    best = j;
                }
            }
            js[flat] = static_cast<std::uint8_t>(best);
            std::size_t p = 0;
            double d = 1.0;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (i == best) continue;
                p = p * G + idx[i];
                d *= boltz_[idx[i] * G + idx[best]];
            }
            px[flat] = p;
            dd[flat] = d;
        }
    }
}

std::size_t KSOperator::center_node(int m, std::size_t flat) const {
    const std::size_t G = grid_.size();
    const std::size_t j = jstar_[m - 1][flat];
    const std::size_t shift = tuple_count(G, m - 1 - static_cast<int>(j));
    return (flat / shift) % G;
}

int KSOperator::row_terms(int m) const { return std::min(cfg_.n_max, cfg_.m_max - m + 1); }

CorrelationVector KSOperator::apply_K(const CorrelationVector& phi) const {
    if (phi.m_max() != cfg_.m_max || !(phi.grid() == grid_))
        throw StructuralError("apply_K: vector does not match the operator's grid or m_max");
    const std::size_t G = grid_.size();
    CorrelationVector out(grid_, cfg_.m_max);
    for (int m = 1; m <= cfg_.m_max; ++m) {
        auto dst = out[m].values();
        const int terms = row_terms(m);
        const auto count = static_cast<std::ptrdiff_t>(dst.size());
        const double* lower = m >= 2 ? phi[m - 1].values().data() : nullptr;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t f = 0; f < count; ++f) {
            const auto flat = static_cast<std::size_t>(f);
            const std::size_t p = prefix_[m - 1][flat];
            const std::size_t c = center_node(m, flat);
            CompensatedSum acc;
            if (lower) acc.add(lower[p]);
            double factorial = 1.0;
            for (int n = 1; n <= terms; ++n) {
                factorial *= n;
                const double* slab = phi[m + n - 1].values().data() + p * tuple_count(G, n);
                acc.add(contract_kernel(wf_, c, slab, n) / factorial);
            }
            dst[flat] = acc.value();
        }
    }
    return out;
}

CorrelationVector KSOperator::apply_D(const CorrelationVector& phi) const {
    if (phi.m_max() != cfg_.m_max || !(phi.grid() == grid_))
        throw StructuralError("apply_D: vector does not match the operator's grid or m_max");
    CorrelationVector out = phi;
    for (int m = 2; m <= cfg_.m_max; ++m) {
        auto dst = out[m].values();
        const auto& d = d_[m - 1];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= d[i];
    }
    return out;
}

// --- budgets and solver ---------------------------------------------------

TruncationBudget ks_truncation_budget(const NormConstants& k, double grid_regularity, double z, const KSConfig& cfg) {
    TruncationBudget b;
    b.c_eff = std::max(k.weight(), grid_regularity);
    const double eb = std::exp(2.0 * k.beta * k.B);
    b.q = z * b.c_eff * eb * std::numbers::e;
    const int M = cfg.m_max;
    b.nodewise.assign(static_cast<std::size_t>(M), std::numeric_limits<double>::infinity());
    if (!(b.q < 1.0)) {
        b.rho_norm = b.closure = b.n_truncation = std::numeric_limits<double>::infinity();
        return b;
    }
    const double c = b.c_eff;
    b.rho_norm = z * c / (1.0 - b.q);
    // sup_{k > M} c^k |rho_k| <= z c q^M / (1 - q): order k needs k - 1 applications of zA.
    const double tail = z * c * std::pow(b.q, M) / (1.0 - b.q);
    // Dropped columns enter row m through n >= M - m + 2 >= 2.
    const double closure_factor = std::numbers::e - 2.0;
    b.closure = z * eb * c * closure_factor * tail / (1.0 - b.q);
    double n_tail = 0.0;
    double inv_fact = 1.0;
    for (int n = 1; n <= cfg.n_max; ++n) inv_fact /= n;
    for (int n = cfg.n_max + 1; n < cfg.n_max + 40; ++n) {
        inv_fact /= n;
        n_tail += inv_fact;
    }
    // Kernel terms with n > n_max only exist when they reach an order <= M.
    if (cfg.n_max >= M) n_tail = 0.0;
    b.n_truncation = z * eb * c * n_tail * b.rho_norm / (1.0 - b.q);
    for (int m = 1; m <= M; ++m) b.nodewise[m - 1] = b.total() / std::pow(c, m);
    return b;
}

SolveResult neumann_solve(const KSOperator& op, double z, const CorrelationVector& rhs, const NormConstants& k) {
    const auto& cfg = op.config();
    const double w = k.weight();
    SolveReport rep;
    rep.norm_weight = w;
    rep.ratio_bound = k.contraction_bound(z);

    CorrelationVector x(op.grid(), cfg.m_max);
    bool converged = false;
    for (int it = 0; it < cfg.max_iters; ++it) {
        CorrelationVector next = rhs;
        next.axpy(z, op.apply_A(x));
        const double r = (next - x).norm(w);
        rep.residuals.push_back(r);
        x = std::move(next);
        rep.iterations = it + 1;
        if (r <= cfg.neumann_tol) {
            converged = true;
            break;
        }
    }
    for (std::size_t i = 1; i < rep.residuals.size(); ++i)
        if (rep.residuals[i - 1] > 0.0)
            rep.contraction_estimate = std::max(rep.contraction_estimate, rep.residuals[i] / rep.residuals[i - 1]);
    if (!converged) {
        std::ostringstream msg;
        msg << "Neumann iteration did not reach tolerance " << cfg.neumann_tol << " within " << cfg.max_iters
            << " iterations (last residual " << rep.residuals.back() << ")";
        throw ConvergenceError(msg.str());
    }
    rep.solution_norm = x.norm(w);
    return {std::move(x), std::move(rep)};
}

SolveResult solve_ks(const KSOperator& op, double z, const NormConstants& k, bool override_gate) {
    if (!(z > 0.0)) throw ConfigError("activity z must be positive");
    if (k.c_beta > 0.0) {
        const double z_max = activity_bound(k.c_beta, k.B, k.beta);
        if (!(z < z_max) && !override_gate) {
            std::ostringstream msg;
            msg << "activity z = " << z << " violates the convergence bound z < " << z_max;
            throw GateError(msg.str());
        }
    }
    const auto rhs = CorrelationVector::unit(op.grid(), op.config().m_max, z);
    SolveResult res = neumann_solve(op, z, rhs, k);
    auto& rep = res.report;

    const double q = rep.ratio_bound;
    rep.a_priori_norm_bound = q < 1.0 ? z * k.weight() / (1.0 - q) : std::numeric_limits<double>::infinity();
    rep.tails = ks_truncation_budget(k, op.grid_regularity(), z, op.config());

    const double tol = op.config().neumann_tol;
    if (res.rho.min_value() < -tol) {
        std::ostringstream msg;
        msg << "solution has negative entries down to " << res.rho.min_value();
        rep.warnings.push_back(msg.str());
    }
    if (rep.contraction_estimate > q + 1e-6) {
        std::ostringstream msg;
        msg << "observed contraction " << rep.contraction_estimate << " exceeds a-priori bound " << q;
        rep.warnings.push_back(msg.str());
    }
    if (rep.solution_norm > rep.a_priori_norm_bound + tol) {
        std::ostringstream msg;
        msg << "weighted norm " << rep.solution_norm << " exceeds a-priori bound " << rep.a_priori_norm_bound;
        rep.warnings.push_back(msg.str());
    }
    return res;
}

std::string to_json(const SolveReport& r) {
    auto finite_or_null = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["iterations"] = r.iterations;
    j["residuals"] = r.residuals;
    j["contraction_estimate"] = r.contraction_estimate;
    j["contraction_bound"] = finite_or_null(r.ratio_bound);
    j["norm_weight"] = r.norm_weight;
    j["solution_norm"] = r.solution_norm;
    j["a_priori_norm_bound"] = finite_or_null(r.a_priori_norm_bound);
    j["tail_bounds"] = {{"m_closure", finite_or_null(r.tails.closure)},
                        {"n_truncation", finite_or_null(r.tails.n_truncation)},
                        {"c_eff", r.tails.c_eff},
                        {"q", r.tails.q}};
    nlohmann::json nodewise = nlohmann::json::array();
    for (double x : r.tails.nodewise) nodewise.push_back(finite_or_null(x));
    j["tail_bounds"]["nodewise"] = nodewise;
    j["warnings"] = r.warnings;
    return j.dump(2);
}

}  // namespace ksd
