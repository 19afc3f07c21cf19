#pragma once

#include <span>
#include <string>
#include <vector>

#include "ksd/grid.hpp"
#include "ksd/potentials.hpp"

namespace ksd {

/// sum_{i<j} u(|R_i - R_j|); +inf as soon as one pair is inside a hard core.
double u_total(const PairPotential& u, std::span<const Vec3> R);
double v_total(const Perturbation& v, std::span<const Vec3> R);

struct OracleConfig {
    int N_max = 6;
    /// N_max >= m_max + 2, N_max >= 2.
    void validate(int m_max) const;
};

/// sum_{N > N_max} (z |Lambda|)^N e^{beta B N} / N!
double xi_tail_bound(double z, double volume, double beta, double B, int N_max);
/// sum_{N > N_max} z^N |Lambda|^{N-m} e^{beta B N} / (N-m)!
double numerator_tail_bound(double z, double volume, double beta, double B, int N_max, int m);

struct BruteRho {
    GridFunction rho;
    double tail = 0.0;  // nodewise bound on the N_max truncation error
};

/// Truncated grand-canonical sums on the lattice gas defined by a grid: every
/// particle sits on a node with weight w. Configurations are enumerated as
/// multisets, so each unordered placement is visited once.
class GrandCanonicalOracle {
public:
    GrandCanonicalOracle(const Grid& grid, const PairPotential& u, double beta, double z, double B,
                         const OracleConfig& cfg);

    const Grid& grid() const { return grid_; }
    double z() const { return z_; }
    double beta() const { return beta_; }
    int N_max() const { return cfg_.N_max; }

    double xi() const { return xi_; }
    double xi_tail() const { return xi_tail_; }

    /// Z^(m) at every node tuple (symmetrised from sorted tuples).
    GridFunction numerator(int m) const;
    double numerator_tail(int m) const;
    /// rho^(m) = Z^(m) / Xi with the combined N_max bound (tail_Z + sup rho tail_Xi) / Xi.
    BruteRho brute_rho(int m) const;

    /// Multiset count that `numerator(m)` would visit.
    std::size_t work(int m) const;

private:
    Grid grid_;
    double beta_;
    double z_;
    double B_;
    OracleConfig cfg_;
    std::vector<double> boltz_;
    double xi_ = 0.0;
    double xi_tail_ = 0.0;
};

/// d Xi in direction v: -(beta/2) sum w^2 v Z^(2).
double deriv_xi(const Grid& grid, const Perturbation& v, double beta, const GridFunction& z2);
/// d log Xi = d Xi / Xi = -(beta/2) sum w^2 v rho^(2).
double deriv_log_xi(const Grid& grid, const Perturbation& v, double beta, const GridFunction& rho2);

/// Singlet derivative from rho^(1..3) (three-term quotient-rule formula).
GridFunction deriv_rho1(const Perturbation& v, double beta, const GridFunction& rho1, const GridFunction& rho2,
                        const GridFunction& rho3);
/// Pair derivative from rho^(2..4) (contact, two rho^(3) terms, half-weighted rho^(4) term, compensation).
GridFunction deriv_rho2(const Perturbation& v, double beta, const GridFunction& rho2, const GridFunction& rho3,
                        const GridFunction& rho4);

/// Propagation of nodewise input errors e_m through the two formulas.
struct FormulaErrors {
    double rho1 = 0.0;
    double rho2 = 0.0;
};
FormulaErrors formula_error_bounds(const Grid& grid, const Perturbation& v, double beta,
                                   std::span<const double> sup_rho, std::span<const double> err);

/// (rho(u + eps v) - rho(u)) / eps for m = 1, 2 from the brute sums. Refuses eps |v| > t0 / 2.
std::vector<GridFunction> fd_brute(const Grid& grid, const PairPotential& u, const Perturbation& v, double beta,
                                   double z, double B, const OracleConfig& cfg, double eps, double vnorm, double t0);

/// <N> = z d/dz log Xi by central differences.
double mean_particle_number(const Grid& grid, const PairPotential& u, double beta, double z, double B,
                            const OracleConfig& cfg, double dz);

struct ComparisonRow {
    int m = 0;
    double sup_diff = 0.0;
    double sup_ref = 0.0;
    double budget = 0.0;
    bool pass = false;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    bool pass() const;
    std::string to_json() const;
};

/// Nodewise sup |a_m - b_m| against budget[m-1] for each pair of rows.
ComparisonReport compare(std::span<const GridFunction> a, std::span<const GridFunction> b,
                         std::span<const double> budget);

}  // namespace ksd
