#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ksd/radial.hpp"

namespace ksd {

enum class PotentialKind { HardSphere, LennardJones, TruncatedLennardJones, Tabulated, Custom };

std::string to_string(PotentialKind kind);

/// Spherically symmetric pair potential u(r). +infinity is a legal value and
/// encodes a hard core.
class PairPotential {
public:
    using Fn = std::function<double(double)>;

    PairPotential(PotentialKind kind, std::string label, std::map<std::string, double> params, Fn fn,
                  std::vector<double> breakpoints = {});

    double operator()(double r) const { return fn_(r); }
    double evaluate(double r) const { return fn_(r); }

    PotentialKind kind() const { return kind_; }
    const std::string& label() const { return label_; }
    const std::map<std::string, double>& params() const { return params_; }
    double param(const std::string& name) const;
    /// Radii where u jumps or has a kink; quadrature panels are cut there.
    const std::vector<double>& breakpoints() const { return breakpoints_; }
    /// Radius beyond which u vanishes identically (+infinity when unknown).
    double range() const { return range_; }
    PairPotential& set_range(double r) {
        range_ = r;
        return *this;
    }

private:
    PotentialKind kind_;
    std::string label_;
    std::map<std::string, double> params_;
    Fn fn_;
    std::vector<double> breakpoints_;
    double range_ = std::numeric_limits<double>::infinity();
};

PairPotential hard_sphere(double diameter);
PairPotential lennard_jones(double epsilon, double sigma);
/// Lennard-Jones cut at rc; shifted so that u(rc) = 0 when `shifted`.
PairPotential truncated_lennard_jones(double epsilon, double sigma, double rc, bool shifted = true);
/// u == 0 (ideal gas). Not admissible under any envelope.
PairPotential zero_potential();
/// u(r) = epsilon (sigma/r)^n.
PairPotential soft_sphere(double epsilon, double sigma, double n);

/// Behaviour of a tabulated potential outside its abscissae.
struct TableTail {
    enum class Form { Zero, Power } form = Form::Zero;
    double exponent = 6.0;  // Power: u(r) = u(r_last) (r_last / r)^exponent
};
struct TableCore {
    enum class Form { Infinite, Constant } form = Form::Infinite;
};

/// Piecewise-linear interpolation between strictly increasing nodes.
PairPotential tabulated(std::vector<double> r, std::vector<double> u, TableTail tail = {},
                        TableCore core = {});
/// Two-column CSV (r, u); '#' comment lines and one non-numeric header row are skipped.
PairPotential load_tabulated_csv(const std::filesystem::path& path, TableTail tail = {},
                                 TableCore core = {});

/// Positive decreasing radial profile used by the admissibility envelope.
struct RadialForm {
    enum class Shape { Power, Exponential };
    Shape shape = Shape::Power;
    double coef = 1.0;
    double scale = 1.0;     // sigma for Power, decay length for Exponential
    double exponent = 6.0;  // Power only

    double operator()(double r) const;
    /// 4 pi int_d^inf f(r) r^2 dr, +infinity if the integral diverges.
    double moment_tail(double d) const;
    /// True iff int_0^s f(r) r^2 dr diverges.
    bool moment_diverges_at_origin() const;
};

/// Split radius s with a lower profile u_* on (0, s] and an upper profile u^* on [s, inf).
class Envelope {
public:
    Envelope(double s, RadialForm lower, RadialForm upper);

    double s() const { return s_; }
    double lower(double r) const { return lower_(r); }
    double upper(double r) const { return upper_(r); }
    const RadialForm& lower_form() const { return lower_; }
    const RadialForm& upper_form() const { return upper_; }
    double tail_integral(double d) const { return upper_.moment_tail(d); }
    /// Smallest radius of the doubling ladder s, 2s, 4s, ... (refined by
    /// bisection) with tail_integral below eps.
    double cutoff_radius(double eps = 1e-12) const;
    Envelope scaled(double lower_factor, double upper_factor) const;

private:
    double s_;
    RadialForm lower_;
    RadialForm upper_;
};

/// A perturbation v(r) of the pair potential; always finite.
class Perturbation {
public:
    using Fn = std::function<double(double)>;
    Perturbation(std::string tag, Fn fn, std::vector<double> breakpoints = {});

    double operator()(double r) const { return fn_(r); }
    const std::string& tag() const { return tag_; }
    const std::vector<double>& breakpoints() const { return breakpoints_; }

private:
    std::string tag_;
    Fn fn_;
    std::vector<double> breakpoints_;
};

Perturbation zero_perturbation();
/// amplitude * u^*(r) on [r_lo, r_hi), zero elsewhere.
Perturbation tail_bump(const Envelope& env, double amplitude, double r_lo, double r_hi);
Perturbation exponential_perturbation(double amplitude, double length);
Perturbation power_perturbation(double amplitude, double sigma, double exponent);
/// factor * u(r); infinite u values map to 0 so the result stays finite.
Perturbation scaled_potential(const PairPotential& u, double factor);
Perturbation scale(const Perturbation& v, double alpha);
Perturbation combine(const Perturbation& a, double alpha, const Perturbation& b, double beta);

struct ThermoParams {
    double beta = 1.0;
    double z = 0.0;
    void validate() const;
};

/// Density of the sampled sup-norm certificates.
struct SamplingConfig {
    int per_decade = 512;
    double lower_fraction = 1e-4;  // sampling starts at lower_fraction * s
    double tail_eps = 1e-12;       // sampling stops where the envelope tail integral drops below this
};

struct AdmissibilityViolation {
    double r;
    double u;
    double bound;
    bool core_side;  // true: u >= u_* failed on (0, s); false: |u| <= u^* failed on [s, r_max]
};

struct AdmissibilityResult {
    bool admissible = false;
    double r_max = 0.0;
    std::size_t samples = 0;
    std::vector<AdmissibilityViolation> violations;
};

/// Sampled certificate of u >= u_* on (0, s) and |u| <= u^* on [s, r_max].
AdmissibilityResult check_admissible(const PairPotential& u, const Envelope& env, int per_decade);

/// max(sup |v/u| on (0, s), sup |v/u^*| on [s, inf)), sampled. +inf when v is not in V_u.
double vu_norm(const Perturbation& v, const PairPotential& u, const Envelope& env,
               const SamplingConfig& sampling = {});

/// e^{-beta u(r)} - 1, exactly -1 for u(r) = +inf.
double mayer_f(const PairPotential& u, double beta, double r);
/// e^{-beta u(r)} with e^{-inf} = 0.
double boltzmann(const PairPotential& u, double beta, double r);

/// 4 pi int_0^inf |e^{-beta u} - 1| r^2 dr; the part beyond r_max is carried as tail_bound.
RadialIntegral c_beta(const PairPotential& u, double beta, const Envelope& env, double B,
                      const QuadratureConfig& cfg = {});
/// 4 pi int_d^inf |e^{-beta u} - 1| r^2 dr.
RadialIntegral c_beta_tail(const PairPotential& u, double beta, const Envelope& env, double B, double d,
                           const QuadratureConfig& cfg = {});

/// 1 / (c_beta e^{2 beta B + 1}).
double activity_bound(double c_beta, double B, double beta);

/// u + t v, refused when vu_norm(t v) > t0.
PairPotential perturbed(const PairPotential& u, const Perturbation& v, double t, double t0,
                        const Envelope& env, const SamplingConfig& sampling = {});
/// u + t v without the gate (for callers that already checked it).
PairPotential add_perturbation(const PairPotential& u, const Perturbation& v, double t);

/// Largest -U_N/N seen over random configurations in a cube. This is a
/// lower bound on the true stability constant, never a certificate.
struct StabilityProbe {
    double max_drop_per_particle = 0.0;
    int particles = 0;
    int trials = 0;
};
StabilityProbe probe_stability(const PairPotential& u, int particles, int trials, double side,
                               std::uint64_t seed);

struct RegularityReport {
    double beta = 0.0;
    double c_beta = 0.0;
    double c_beta_error = 0.0;
    double B = 0.0;
    double t0 = 0.5;
    double z_max = 0.0;
    std::vector<std::pair<double, double>> c_beta_d;  // (d, c_{beta,d})
    bool admissible = false;
    std::vector<std::string> diagnostics;
    StabilityProbe stability;

    bool activity_ok(double z) const { return z > 0.0 && z < z_max; }
};

RegularityReport regularity_report(const PairPotential& u, const Envelope& env, double beta, double B,
                                   double t0, const SamplingConfig& sampling = {},
                                   const QuadratureConfig& quad = {}, std::uint64_t probe_seed = 12345);

}  // namespace ksd
