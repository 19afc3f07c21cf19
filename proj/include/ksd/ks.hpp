#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ksd/grid.hpp"
#include "ksd/potentials.hpp"

namespace ksd {

/// Truncation of the semi-infinite Kirkwood-Salsburg system.
struct KSConfig {
    int m_max = 3;              // orders above m_max are closed to zero
    int n_max = 4;              // kernel-sum truncation per block row
    double neumann_tol = 1e-12; // stop when successive iterates differ by this in the weighted norm
    int max_iters = 1000;

    void validate() const;
};

/// Truncated sequence (phi_1, ..., phi_M) on one shared grid.
class CorrelationVector {
public:
    CorrelationVector(const Grid& grid, int m_max);
    explicit CorrelationVector(std::vector<GridFunction> rows);

    /// z * e_1: phi_1 == z, all higher orders zero.
    static CorrelationVector unit(const Grid& grid, int m_max, double z = 1.0);

    int m_max() const { return static_cast<int>(rows_.size()); }
    const Grid& grid() const { return rows_.front().grid(); }
    /// Order m, 1-based.
    GridFunction& operator[](int m) { return rows_.at(static_cast<std::size_t>(m - 1)); }
    const GridFunction& operator[](int m) const { return rows_.at(static_cast<std::size_t>(m - 1)); }
    std::span<const GridFunction> rows() const { return rows_; }

    /// Weighted sup norm max_m c^m |phi_m|_inf.
    double norm(double c) const { return xnorm(rows_, c); }
    double min_value() const;

    CorrelationVector& operator+=(const CorrelationVector& other);
    CorrelationVector& operator-=(const CorrelationVector& other);
    CorrelationVector& operator*=(double a);
    /// this += a * x
    CorrelationVector& axpy(double a, const CorrelationVector& x);

private:
    void require_compatible(const CorrelationVector& other) const;
    std::vector<GridFunction> rows_;
};

CorrelationVector operator+(CorrelationVector a, const CorrelationVector& b);
CorrelationVector operator-(CorrelationVector a, const CorrelationVector& b);
CorrelationVector operator*(double s, CorrelationVector a);

// --- pointwise building blocks -------------------------------------------

/// Index (0-based) of the particle with the largest total interaction
/// S_j = sum_{i != j} u(|R_i - R_j|); ties go to the lowest index.
/// Throws DegenerateConfiguration on coincident positions.
std::size_t jstar(const PairPotential& u, std::span<const Vec3> R);

/// R with coordinate j removed, order of the rest preserved.
std::vector<Vec3> project_pi(std::span<const Vec3> R, std::size_t j);

/// prod_{i != j*} e^{-beta u(|R_i - R_j*|)}; 1 for a single particle.
double d_m(const PairPotential& u, double beta, std::span<const Vec3> R);

/// prod_i f(|R'_i - R|).
double k_n(const PairPotential& u, double beta, const Vec3& R, std::span<const Vec3> Rp);

// --- discretised operators -----------------------------------------------

/// w * kernel(node_i, node_j) for every node pair, with the nonzero columns of each row.
class WeightedKernel {
public:
    WeightedKernel(std::size_t G, std::vector<double> values);

    std::size_t size() const { return G_; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * G_ + j]; }
    std::span<const std::uint32_t> nonzeros(std::size_t i) const { return nz_[i]; }
    /// max_i sum_j |values(i, j)|
    double max_row_l1() const;

private:
    std::size_t G_;
    std::vector<double> values_;
    std::vector<std::vector<std::uint32_t>> nz_;
};

/// sum over r_1..r_n of prod_k g(center, r_k) * slab[r_1..r_n] (slab is G^n, row-major).
double contract_kernel(const WeightedKernel& g, std::size_t center, const double* slab, int n);

/// Returns {plain, derived}: plain as in contract_kernel, derived with one
/// factor g replaced by gp in every possible slot (product rule).
struct ContractPair {
    double plain;
    double derived;
};
ContractPair contract_kernel_derivative(const WeightedKernel& g, const WeightedKernel& gp,
                                        std::span<const std::uint32_t> support, std::size_t center,
                                        const double* slab, int n);

/// Radius substituted for r = 0 when two tuple entries share a node.
inline constexpr double kCoincidentRadius = 1e-12;

/// Table of a radial function at all node-pair distances (r = 0 clamped).
std::vector<double> pair_table(const Grid& grid, const std::function<double(double)>& fn);

/// Weighting of the sequence-space norm and the constants entering the bounds.
struct NormConstants {
    double c_beta = 0.0;
    double B = 0.0;
    double beta = 1.0;

    /// c_beta, or 1 when the potential has no Mayer mass (ideal gas).
    double weight() const { return c_beta > 0.0 ? c_beta : 1.0; }
    /// z c e^{2 beta B + 1}: the a-priori contraction factor of z A.
    double contraction_bound(double z) const;
};

/// D_Lambda and K_Lambda on a grid. j* is taken from `jstar_reference` when
/// given (the unperturbed potential), otherwise from u.
class KSOperator {
public:
    KSOperator(const Grid& grid, const PairPotential& u, double beta, const KSConfig& cfg,
               const PairPotential* jstar_reference = nullptr);

    const Grid& grid() const { return grid_; }
    const KSConfig& config() const { return cfg_; }
    double beta() const { return beta_; }

    CorrelationVector apply_K(const CorrelationVector& phi) const;
    CorrelationVector apply_D(const CorrelationVector& phi) const;
    CorrelationVector apply_A(const CorrelationVector& phi) const { return apply_D(apply_K(phi)); }

    /// Per-tuple data for order m (1-based), flat tuple index.
    std::size_t jstar_at(int m, std::size_t flat) const { return jstar_[m - 1][flat]; }
    std::size_t prefix_at(int m, std::size_t flat) const { return prefix_[m - 1][flat]; }
    double d_at(int m, std::size_t flat) const { return d_[m - 1][flat]; }
    /// Node index of particle j* of tuple `flat` in order m.
    std::size_t center_node(int m, std::size_t flat) const;

    const WeightedKernel& mayer_kernel() const { return wf_; }
    const std::vector<double>& reference_u() const { return ref_u_; }
    /// sup_R sum_R' w |f(R' - R)|: the grid analogue of c_beta.
    double grid_regularity() const { return wf_.max_row_l1(); }

    /// Largest n used in row m (n_max and closure combined).
    int row_terms(int m) const;

private:
    Grid grid_;
    KSConfig cfg_;
    double beta_;
    std::vector<double> ref_u_;
    std::vector<double> boltz_;
    WeightedKernel wf_;
    std::vector<std::vector<std::uint8_t>> jstar_;
    std::vector<std::vector<std::size_t>> prefix_;
    std::vector<std::vector<double>> d_;
};

/// A-priori truncation bounds for the m_max closure and the n_max cut.
struct TruncationBudget {
    double c_eff = 0.0;        // weight used: max(c_beta, grid regularity)
    double q = 0.0;            // z c_eff e^{2 beta B + 1}
    double rho_norm = 0.0;     // bound on |rho|_X
    double closure = 0.0;      // m_max closure error in X(c_eff)
    double n_truncation = 0.0; // n_max cut error in X(c_eff)
    std::vector<double> nodewise;  // (closure + n_truncation) / c_eff^m, m = 1..m_max

    double total() const { return closure + n_truncation; }
};

TruncationBudget ks_truncation_budget(const NormConstants& k, double grid_regularity, double z,
                                      const KSConfig& cfg);

struct SolveReport {
    int iterations = 0;
    std::vector<double> residuals;
    double contraction_estimate = 0.0;  // largest observed r_{k+1} / r_k
    double ratio_bound = 0.0;           // z c_beta e^{2 beta B + 1}
    double norm_weight = 0.0;
    double a_priori_norm_bound = 0.0;
    double solution_norm = 0.0;
    TruncationBudget tails;
    std::vector<std::string> warnings;
};

struct SolveResult {
    CorrelationVector rho;
    SolveReport report;
};

/// Fixed-point iteration x <- rhs + z A x from x = 0 until successive iterates
/// differ by at most neumann_tol. Shared by the distribution-function and
/// derivative solves.
SolveResult neumann_solve(const KSOperator& op, double z, const CorrelationVector& rhs, const NormConstants& k);

/// Solves (I - z A) rho = z e_1. Refuses z >= z_max unless override_gate.
SolveResult solve_ks(const KSOperator& op, double z, const NormConstants& k, bool override_gate = false);

/// Report as JSON text.
std::string to_json(const SolveReport& report);

}  // namespace ksd
