#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ksd/ks.hpp"

namespace ksd {

/// (d f / d u) v = -beta e^{-beta u(r)} v(r); 0 inside a hard core.
double mayer_derivative(const PairPotential& u, double beta, const Perturbation& v, double r);

/// -beta d_m(R) sum_{i != j*} v(|R_i - R_j*|), j* taken from u. 0 for m = 1.
double d_derivative(const PairPotential& u, double beta, const Perturbation& v, std::span<const Vec3> R);

/// sum_i (df v)(|R'_i - R|) prod_{j != i} f(|R'_j - R|).
double k_prime(const PairPotential& u, double beta, const Perturbation& v, const Vec3& R,
               std::span<const Vec3> Rp);

/// Derivative blocks of D and K in direction v, on the grid of a base KSOperator.
/// The base operator must outlive this object.
class DerivativeOperator {
public:
    DerivativeOperator(const KSOperator& base, const PairPotential& u, const Perturbation& v);

    const KSOperator& base() const { return *base_; }

    /// Rows use k_n' in place of k_n; no extension blocks.
    CorrelationVector apply_Kprime(const CorrelationVector& phi) const;
    /// Row m times -beta d_m sum_{i != j*} v.
    CorrelationVector apply_Dprime(const CorrelationVector& phi) const;
    /// (dD v)(K phi) + D (K' phi).
    CorrelationVector apply_Aprime(const CorrelationVector& phi) const;

    /// sup_R sum_R' w |(df v)(R' - R)| on the grid.
    double kprime_regularity() const { return gp_.max_row_l1(); }
    /// sup over stored tuples of |dD v| (orders 2..m_max).
    double dprime_sup() const;

private:
    const KSOperator* base_;
    WeightedKernel gp_;
    std::vector<std::vector<std::uint32_t>> support_;
    std::vector<std::vector<double>> dprime_;
};

/// Error bounds for the truncated derivative solve, in X(c_eff).
struct DerivativeBudget {
    double a_prime = 0.0;      // bound on |A'| in X(c_eff)
    double dprime_bound = 0.0; // bound on |dD v|
    double drho_norm = 0.0;    // bound on |d rho|_X
    double closure = 0.0;
    double n_truncation = 0.0;
    std::vector<double> nodewise;

    double total() const { return closure + n_truncation; }
};

/// `vnorm` is |v|_{V_u}; the |dD v| bound is max(e^{2 beta B} vnorm / t0, grid_dprime_sup).
DerivativeBudget derivative_budget(const NormConstants& k, double grid_regularity, double kprime_regularity,
                                   double grid_dprime_sup, double vnorm, double t0, double z,
                                   const KSConfig& cfg, const TruncationBudget& rho_budget);

struct DerivativeResult {
    CorrelationVector dr;
    SolveReport report;
    double aprime_rho_norm = 0.0;  // |A' rho|_X
    double bound = 0.0;            // z |A' rho|_X / (1 - q)
    bool bound_ok = false;
    DerivativeBudget budget;
};

/// Solves (I - z A) dr = z (A' rho) rho with the KS Neumann loop.
DerivativeResult derivative_rho(const DerivativeOperator& dop, double z, const CorrelationVector& rho,
                                const NormConstants& k, double vnorm, double t0, bool override_gate = false);

struct FiniteDifferenceRow {
    double eps = 0.0;
    double defect = 0.0;  // |rho(u + eps v) - rho(u) - eps dr|_X
};

struct FiniteDifferenceTable {
    std::vector<FiniteDifferenceRow> rows;
    double slope = 0.0;
};

/// Geometric ladder 10^{-1}, 10^{-1.5}, ..., 10^{-3}.
std::vector<double> default_eps_ladder();

/// Refuses any eps with eps * vnorm > t0 / 2. j* stays pinned to u.
FiniteDifferenceTable finite_difference_defect(const Grid& grid, const PairPotential& u, const Perturbation& v,
                                               double beta, double z, const KSConfig& cfg, const NormConstants& k,
                                               const CorrelationVector& rho, const CorrelationVector& dr,
                                               std::span<const double> eps, double vnorm, double t0);

/// 4 pi int |f(u + eps v) - f(u) - eps (df v)| r^2 dr over (0, r_max].
double mayer_l1_remainder(const PairPotential& u, double beta, const Perturbation& v, double eps, double r_max,
                          std::span<const double> breakpoints = {});

/// sup over all grid tuples of orders 2..m_max of |d_m(u + eps v) - d_m(u) - eps (dd_m v)|, j* from the base operator.
double dm_sup_remainder(const KSOperator& base, const PairPotential& u, const Perturbation& v, double eps);

/// sup over `configs` (each: R followed by n positions) of |k_n(u + eps v) - k_n(u) - eps k_n'|.
double kn_sup_remainder(const PairPotential& u, double beta, const Perturbation& v, double eps, int n,
                        std::span<const std::vector<Vec3>> configs);

/// Random configurations for kn_sup_remainder: R at the origin, n points uniform in a ball of radius `radius`.
std::vector<std::vector<Vec3>> random_kernel_configs(int n, int count, double radius, std::uint64_t seed);

struct RemainderStudy {
    std::vector<double> eps;
    std::vector<double> remainder;
    double slope = 0.0;
};

RemainderStudy remainder_study(std::span<const double> eps, const std::function<double(double)>& remainder);

struct SweepRow {
    double L = 0.0;
    int n_g = 0;
    double diff_rho = 0.0;   // sup over orders and inner tuples against the largest box
    double diff_drho = 0.0;
    double noise_rho = 0.0;  // truncation budget of this box plus the reference box
    double noise_drho = 0.0;
    std::vector<double> diff_rho_m;
    std::vector<double> diff_drho_m;
};

struct SweepTable {
    std::vector<SweepRow> rows;
    bool rho_nonincreasing = false;
    bool drho_nonincreasing = false;
};

/// Solves rho and d rho on each outer box (same spacing as `inner`), restricts to
/// the inner grid and compares against the largest box.
SweepTable limit_sweep(const PairPotential& u, const Perturbation& v, double beta, double z, const Grid& inner,
                       std::span<const double> outer_sides, const KSConfig& cfg, const NormConstants& k,
                       double vnorm, double t0);

std::string to_csv(const FiniteDifferenceTable& t);
std::string to_csv(const SweepTable& t);

}  // namespace ksd
