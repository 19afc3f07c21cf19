#include "ksd/potentials.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "ksd/errors.hpp"

namespace ksd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFourPi = 4.0 * std::numbers::pi;

void require_positive(double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        std::ostringstream msg;
        msg << what << " must be positive and finite, got " << x;
        throw ConfigError(msg.str());
    }
}

double lj_value(double epsilon, double sigma, double r) {
    const double x6 = std::pow(sigma / r, 6);
    return 4.0 * epsilon * (x6 * x6 - x6);
}

}  // namespace

std::string to_string(PotentialKind kind) {
    switch (kind) {
        case PotentialKind::HardSphere: return "hard-sphere";
        case PotentialKind::LennardJones: return "lennard-jones";
        case PotentialKind::TruncatedLennardJones: return "truncated-lennard-jones";
        case PotentialKind::Tabulated: return "tabulated";
        case PotentialKind::Custom: return "custom";
    }
    return "custom";
}

PairPotential::PairPotential(PotentialKind kind, std::string label, std::map<std::string, double> params,
                             Fn fn, std::vector<double> breakpoints)
    : kind_(kind),
      label_(std::move(label)),
      params_(std::move(params)),
      fn_(std::move(fn)),
      breakpoints_(std::move(breakpoints)) {
    if (!fn_) throw ConfigError("PairPotential: empty evaluation function");
    std::sort(breakpoints_.begin(), breakpoints_.end());
}

double PairPotential::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("potential '" + label_ + "' has no parameter '" + name + "'");
    return it->second;
}

PairPotential hard_sphere(double diameter) {
    require_positive(diameter, "hard-sphere diameter");
    return PairPotential(
        PotentialKind::HardSphere, "hard-sphere", {{"a", diameter}},
        [diameter](double r) { return r < diameter ? kInf : 0.0; }, {diameter})
        .set_range(diameter);
}

PairPotential lennard_jones(double epsilon, double sigma) {
    require_positive(epsilon, "epsilon");
    require_positive(sigma, "sigma");
    return PairPotential(PotentialKind::LennardJones, "lennard-jones", {{"epsilon", epsilon}, {"sigma", sigma}},
                         [epsilon, sigma](double r) { return lj_value(epsilon, sigma, r); },
                         {sigma, std::pow(2.0, 1.0 / 6.0) * sigma});
}

PairPotential truncated_lennard_jones(double epsilon, double sigma, double rc, bool shifted) {
    require_positive(epsilon, "epsilon");
    require_positive(sigma, "sigma");
    require_positive(rc, "cutoff");
    const double shift = shifted ? lj_value(epsilon, sigma, rc) : 0.0;
    return PairPotential(
        PotentialKind::TruncatedLennardJones, "truncated-lennard-jones",
        {{"epsilon", epsilon}, {"sigma", sigma}, {"rc", rc}, {"shifted", shifted ? 1.0 : 0.0}},
        [=](double r) { return r < rc ? lj_value(epsilon, sigma, r) - shift : 0.0; },
        {sigma, std::pow(2.0, 1.0 / 6.0) * sigma, rc})
        .set_range(rc);
}

PairPotential zero_potential() {
    return PairPotential(PotentialKind::Custom, "zero", {}, [](double) { return 0.0; }).set_range(0.0);
}

PairPotential soft_sphere(double epsilon, double sigma, double n) {
    require_positive(epsilon, "epsilon");
    require_positive(sigma, "sigma");
    require_positive(n, "exponent");
    return PairPotential(PotentialKind::Custom, "soft-sphere", {{"epsilon", epsilon}, {"sigma", sigma}, {"n", n}},
                         [=](double r) { return epsilon * std::pow(sigma / r, n); });
}

PairPotential tabulated(std::vector<double> r, std::vector<double> u, TableTail tail, TableCore core) {
    if (r.size() != u.size() || r.size() < 2) throw ConfigError("tabulated potential needs >= 2 (r, u) pairs");
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (!(r[i] > 0.0)) throw ConfigError("tabulated potential: abscissae must be positive");
        if (i > 0 && !(r[i] > r[i - 1])) throw ConfigError("tabulated potential: abscissae must be strictly increasing");
        if (std::isnan(u[i])) throw ConfigError("tabulated potential: NaN value");
    }
    const double r_first = r.front();
    const double r_last = r.back();
    const double u_first = u.front();
    const double u_last = u.back();
    auto fn = [r = std::move(r), u = std::move(u), tail, core, r_first, r_last, u_first, u_last](double x) {
        if (x < r_first) return core.form == TableCore::Form::Infinite ? kInf : u_first;
        if (x > r_last) {
            if (tail.form == TableTail::Form::Zero) return 0.0;
            return u_last * std::pow(r_last / x, tail.exponent);
        }
        const auto it = std::upper_bound(r.begin(), r.end(), x);
        if (it == r.end()) return u_last;
        const auto hi = static_cast<std::size_t>(it - r.begin());
        const std::size_t lo = hi - 1;
        if (std::isinf(u[lo]) || std::isinf(u[hi])) return std::isinf(u[lo]) ? u[lo] : u[hi];
        const double t = (x - r[lo]) / (r[hi] - r[lo]);
        return u[lo] + t * (u[hi] - u[lo]);
    };
    std::map<std::string, double> params{{"r_min", r_first}, {"r_max", r_last}};
    if (tail.form == TableTail::Form::Power) params["tail_exponent"] = tail.exponent;
    PairPotential out(PotentialKind::Tabulated, "tabulated", std::move(params), std::move(fn), {r_first, r_last});
    if (tail.form == TableTail::Form::Zero) out.set_range(r_last);
    return out;
}

PairPotential load_tabulated_csv(const std::filesystem::path& path, TableTail tail, TableCore core) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open tabulated potential file " + path.string());
    std::vector<double> r;
    std::vector<double> u;
    std::string line;
    bool header_allowed = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        std::string a, b;
        if (!(row >> a >> b)) throw ConfigError("malformed row in " + path.string() + ": " + line);
        try {
            const double ra = std::stod(a);
            const double ub = (b == "inf" || b == "+inf") ? kInf : std::stod(b);
            r.push_back(ra);
            u.push_back(ub);
        } catch (const std::exception&) {
            if (!header_allowed) throw ConfigError("non-numeric row in " + path.string() + ": " + line);
        }
        header_allowed = false;
    }
    return tabulated(std::move(r), std::move(u), tail, core);
}

double RadialForm::operator()(double r) const {
    if (shape == Shape::Power) return coef * std::pow(scale / r, exponent);
    return coef * std::exp(-r / scale);
}

double RadialForm::moment_tail(double d) const {
    if (shape == Shape::Power) {
        if (exponent <= 3.0) return kInf;
        if (d <= 0.0) return kInf;
        return kFourPi * coef * std::pow(scale, exponent) * std::pow(d, 3.0 - exponent) / (exponent - 3.0);
    }
    const double l = scale;
    const double dd = std::max(d, 0.0);
    return kFourPi * coef * l * std::exp(-dd / l) * (dd * dd + 2.0 * dd * l + 2.0 * l * l);
}

bool RadialForm::moment_diverges_at_origin() const {
    return shape == Shape::Power && exponent >= 3.0;
}

Envelope::Envelope(double s, RadialForm lower, RadialForm upper) : s_(s), lower_(lower), upper_(upper) {
    require_positive(s, "envelope split radius s");
    for (const RadialForm* f : {&lower_, &upper_}) {
        require_positive(f->coef, "envelope coefficient");
        require_positive(f->scale, "envelope scale");
    }
    if (!lower_.moment_diverges_at_origin())
        throw ConfigError("envelope lower profile must have a divergent r^2 moment at the origin "
                          "(use a power form with exponent >= 3)");
    if (!std::isfinite(upper_.moment_tail(s_)))
        throw ConfigError("envelope upper profile must have a finite r^2 moment on [s, inf)");
    // Both profiles must be nonincreasing; check on a sample ladder.
    const auto lo = geometric_samples(1e-4 * s_, s_, 64, true);
    for (std::size_t i = 1; i < lo.size(); ++i)
        if (lower_(lo[i]) > lower_(lo[i - 1])) throw ConfigError("envelope lower profile is not decreasing");
    const auto hi = geometric_samples(s_, 1e3 * s_, 64, true);
    for (std::size_t i = 1; i < hi.size(); ++i)
        if (upper_(hi[i]) > upper_(hi[i - 1])) throw ConfigError("envelope upper profile is not decreasing");
}

double Envelope::cutoff_radius(double eps) const {
    double hi = s_;
    int guard = 0;
    while (tail_integral(hi) >= eps) {
        hi *= 2.0;
        if (++guard > 200) throw ConvergenceError("envelope tail integral never falls below threshold");
    }
    if (hi == s_) return s_;
    double lo = hi / 2.0;
    for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (tail_integral(mid) < eps ? hi : lo) = mid;
    }
    return hi;
}

Envelope Envelope::scaled(double lower_factor, double upper_factor) const {
    RadialForm lo = lower_;
    RadialForm up = upper_;
    lo.coef *= lower_factor;
    up.coef *= upper_factor;
    return Envelope(s_, lo, up);
}

Perturbation::Perturbation(std::string tag, Fn fn, std::vector<double> breakpoints)
    : tag_(std::move(tag)), fn_(std::move(fn)), breakpoints_(std::move(breakpoints)) {
    if (!fn_) throw ConfigError("Perturbation: empty evaluation function");
    std::sort(breakpoints_.begin(), breakpoints_.end());
}

Perturbation zero_perturbation() {
    return Perturbation("zero", [](double) { return 0.0; });
}

Perturbation tail_bump(const Envelope& env, double amplitude, double r_lo, double r_hi) {
    if (!(r_hi > r_lo)) throw ConfigError("tail_bump: need r_hi > r_lo");
    const RadialForm up = env.upper_form();
    std::vector<double> bp{r_lo};
    if (std::isfinite(r_hi)) bp.push_back(r_hi);
    return Perturbation(
        "tail-bump", [=](double r) { return (r >= r_lo && r < r_hi) ? amplitude * up(r) : 0.0; }, bp);
}

Perturbation exponential_perturbation(double amplitude, double length) {
    require_positive(length, "perturbation length");
    return Perturbation("exponential", [=](double r) { return amplitude * std::exp(-r / length); });
}

Perturbation power_perturbation(double amplitude, double sigma, double exponent) {
    require_positive(sigma, "perturbation sigma");
    return Perturbation("power", [=](double r) { return amplitude * std::pow(sigma / r, exponent); });
}

Perturbation scaled_potential(const PairPotential& u, double factor) {
    return Perturbation(
        "scaled-potential",
        [u, factor](double r) {
            const double x = u(r);
            return std::isinf(x) ? 0.0 : factor * x;
        },
        u.breakpoints());
}

Perturbation scale(const Perturbation& v, double alpha) {
    return Perturbation(v.tag(), [v, alpha](double r) { return alpha * v(r); }, v.breakpoints());
}

Perturbation combine(const Perturbation& a, double alpha, const Perturbation& b, double beta) {
    std::vector<double> bp = a.breakpoints();
    bp.insert(bp.end(), b.breakpoints().begin(), b.breakpoints().end());
    return Perturbation(
        a.tag() + "+" + b.tag(), [=](double r) { return alpha * a(r) + beta * b(r); }, std::move(bp));
}

void ThermoParams::validate() const {
    require_positive(beta, "beta");
    require_positive(z, "activity z");
}

AdmissibilityResult check_admissible(const PairPotential& u, const Envelope& env, int per_decade) {
    if (per_decade < 16) throw ConfigError("check_admissible: need at least 16 samples per decade");
    AdmissibilityResult res;
    res.r_max = std::max(env.cutoff_radius(1e-12), 2.0 * env.s());

    // (0, s): the split radius itself belongs to the tail side.
    for (double r : geometric_samples(1e-4 * env.s(), env.s(), per_decade, false)) {
        const double ur = u(r);
        const double lo = env.lower(r);
        ++res.samples;
        if (!(ur >= lo)) res.violations.push_back({r, ur, lo, true});
    }
    for (double r : geometric_samples(env.s(), res.r_max, per_decade, true)) {
        const double ur = u(r);
        const double hi = env.upper(r);
        ++res.samples;
        if (!(std::abs(ur) <= hi)) res.violations.push_back({r, ur, hi, false});
    }
    res.admissible = res.violations.empty();
    return res;
}

double vu_norm(const Perturbation& v, const PairPotential& u, const Envelope& env, const SamplingConfig& sampling) {
    double core_sup = 0.0;
    for (double r : geometric_samples(sampling.lower_fraction * env.s(), env.s(), sampling.per_decade, false)) {
        const double vr = std::abs(v(r));
        if (vr == 0.0) continue;
        const double ur = u(r);
        if (std::isinf(ur) && ur > 0) continue;  // |v| / inf = 0
        if (!(ur > 0.0)) return kInf;
        core_sup = std::max(core_sup, vr / ur);
    }
    double tail_sup = 0.0;
    const double r_max = std::max(env.cutoff_radius(sampling.tail_eps), 2.0 * env.s());
    for (double r : geometric_samples(env.s(), r_max, sampling.per_decade, true)) {
        const double vr = std::abs(v(r));
        if (vr == 0.0) continue;
        tail_sup = std::max(tail_sup, vr / env.upper(r));
    }
    return std::max(core_sup, tail_sup);
}

double mayer_f(const PairPotential& u, double beta, double r) {
    const double x = u(r);
    if (std::isinf(x) && x > 0) return -1.0;
    return std::expm1(-beta * x);
}

double boltzmann(const PairPotential& u, double beta, double r) {
    const double x = u(r);
    if (std::isinf(x) && x > 0) return 0.0;
    return std::exp(-beta * x);
}

namespace {

// Breakpoints plus the sign changes of u on [lo, hi]: |f| has a kink at every zero of u.
std::vector<double> kink_points(const PairPotential& u, double lo, double hi) {
    std::vector<double> bp = u.breakpoints();
    if (!(hi > lo) || !(lo > 0.0)) return bp;
    const auto r = geometric_samples(lo, hi, 128, true);
    for (std::size_t i = 1; i < r.size(); ++i) {
        double a = r[i - 1];
        double b = r[i];
        double ua = u(a);
        const double ub = u(b);
        if (!std::isfinite(ua) || !std::isfinite(ub) || ua == 0.0 || ub == 0.0 || (ua > 0.0) == (ub > 0.0)) continue;
        for (int it = 0; it < 80 && b - a > 1e-15 * b; ++it) {
            const double m = 0.5 * (a + b);
            const double um = u(m);
            if ((um > 0.0) == (ua > 0.0)) {
                a = m;
                ua = um;
            } else {
                b = m;
            }
        }
        bp.push_back(0.5 * (a + b));
    }
    return bp;
}

RadialIntegral mayer_moment(const PairPotential& u, double beta, const Envelope& env, double B, double d,
                            const QuadratureConfig& cfg) {
    require_positive(beta, "beta");
    if (B < 0.0) throw ConfigError("stability constant B must be >= 0");
    // Beyond r_max the integrand is dominated by beta e^{2 beta B} u^*(r).
    const double prefactor = beta * std::exp(2.0 * beta * B);
    const double tail_target = cfg.abs_tol;
    double r_max = std::max({env.s(), d, u.breakpoints().empty() ? 0.0 : u.breakpoints().back()});
    auto integrand = [&](double r) { return kFourPi * std::abs(mayer_f(u, beta, r)) * r * r; };
    if (std::isfinite(u.range())) {
        // f vanishes beyond the range, so there is no tail to bound.
        if (u.range() <= d) return RadialIntegral{0.0, 0.0, 0.0, d};
        return integrate_radial(integrand, d, u.range(), kink_points(u, 1e-3 * env.s(), u.range()), cfg);
    }
    int guard = 0;
    while (prefactor * env.tail_integral(r_max) >= tail_target) {
        r_max *= 1.25;
        if (++guard > 400) throw ConvergenceError("c_beta: envelope tail bound never falls below tolerance");
    }
    std::vector<double> bp = kink_points(u, 1e-3 * env.s(), r_max);
    bp.push_back(env.s());
    RadialIntegral out = integrate_radial(integrand, d, std::max(r_max, d), bp, cfg);
    out.tail_bound = prefactor * env.tail_integral(std::max(r_max, d));
    return out;
}

}  // namespace

RadialIntegral c_beta(const PairPotential& u, double beta, const Envelope& env, double B, const QuadratureConfig& cfg) {
    return mayer_moment(u, beta, env, B, 0.0, cfg);
}

RadialIntegral c_beta_tail(const PairPotential& u, double beta, const Envelope& env, double B, double d,
                           const QuadratureConfig& cfg) {
    if (d < 0.0) throw ConfigError("c_beta_tail: d must be >= 0");
    return mayer_moment(u, beta, env, B, d, cfg);
}

double activity_bound(double c_beta_value, double B, double beta) {
    if (!(c_beta_value > 0.0)) throw ConfigError("activity_bound: c_beta must be positive");
    if (B < 0.0) throw ConfigError("activity_bound: B must be >= 0");
    return 1.0 / (c_beta_value * std::exp(2.0 * beta * B + 1.0));
}

PairPotential add_perturbation(const PairPotential& u, const Perturbation& v, double t) {
    if (t == 0.0) return u;
    std::vector<double> bp = u.breakpoints();
    bp.insert(bp.end(), v.breakpoints().begin(), v.breakpoints().end());
    auto params = u.params();
    params["t"] = t;
    return PairPotential(
        PotentialKind::Custom, u.label() + "+t*" + v.tag(), std::move(params),
        [u, v, t](double r) {
            const double x = u(r);
            if (std::isinf(x)) return x;
            return x + t * v(r);
        },
        std::move(bp));
}

PairPotential perturbed(const PairPotential& u, const Perturbation& v, double t, double t0, const Envelope& env,
                        const SamplingConfig& sampling) {
    if (!(t0 > 0.0 && t0 < 1.0)) throw ConfigError("t0 must lie in (0, 1)");
    if (t == 0.0) return u;
    const double norm = std::abs(t) * vu_norm(v, u, env, sampling);
    if (!(norm <= t0)) {
        std::ostringstream msg;
        msg << "perturbation rejected: ||t v||_Vu = " << norm << " exceeds t0 = " << t0;
        throw GateError(msg.str());
    }
    return add_perturbation(u, v, t);
}

StabilityProbe probe_stability(const PairPotential& u, int particles, int trials, double side, std::uint64_t seed) {
    StabilityProbe probe;
    probe.particles = particles;
    probe.trials = trials;
    probe.max_drop_per_particle = -kInf;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coord(-0.5 * side, 0.5 * side);
    std::vector<std::array<double, 3>> pos(static_cast<std::size_t>(particles));
    for (int t = 0; t < trials; ++t) {
        for (auto& p : pos)
            for (double& c : p) c = coord(rng);
        double energy = 0.0;
        for (std::size_t i = 0; i < pos.size(); ++i)
            for (std::size_t j = i + 1; j < pos.size(); ++j) {
                const double dx = pos[i][0] - pos[j][0];
                const double dy = pos[i][1] - pos[j][1];
                const double dz = pos[i][2] - pos[j][2];
                energy += u(std::max(std::sqrt(dx * dx + dy * dy + dz * dz), 1e-12));
            }
        probe.max_drop_per_particle = std::max(probe.max_drop_per_particle, -energy / particles);
    }
    return probe;
}

RegularityReport regularity_report(const PairPotential& u, const Envelope& env, double beta, double B, double t0,
                                   const SamplingConfig& sampling, const QuadratureConfig& quad,
                                   std::uint64_t probe_seed) {
    require_positive(beta, "beta");
    if (B < 0.0) throw ConfigError("stability constant B must be >= 0");
    if (!(t0 > 0.0 && t0 < 1.0)) throw ConfigError("t0 must lie in (0, 1)");

    RegularityReport rep;
    rep.beta = beta;
    rep.B = B;
    rep.t0 = t0;

    const auto adm = check_admissible(u, env, std::max(16, sampling.per_decade));
    rep.admissible = adm.admissible;
    if (!adm.admissible) {
        std::ostringstream msg;
        msg << adm.violations.size() << " of " << adm.samples << " envelope samples violated";
        const auto& v = adm.violations.front();
        msg << " (first at r=" << v.r << ": u=" << v.u << (v.core_side ? " < u_*=" : " exceeds u^*=") << v.bound
            << ")";
        rep.diagnostics.push_back(msg.str());
    }

    const auto cb = c_beta(u, beta, env, B, quad);
    rep.c_beta = cb.value + cb.tail_bound;
    rep.c_beta_error = cb.error + cb.tail_bound;
    if (rep.c_beta > 0.0) {
        rep.z_max = activity_bound(rep.c_beta, B, beta);
    } else {
        rep.diagnostics.push_back("c_beta vanishes: the potential is identically zero");
        rep.z_max = kInf;
    }
    for (double f : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0}) {
        const double d = f * env.s();
        const auto tail = c_beta_tail(u, beta, env, B, d, quad);
        rep.c_beta_d.emplace_back(d, tail.value + tail.tail_bound);
    }

    // About one particle per (2s)^3, so attractive wells are actually visited.
    const int particles = 8;
    const double side = 2.0 * env.s() * std::cbrt(static_cast<double>(particles));
    rep.stability = probe_stability(u, particles, 2000, side, probe_seed);
    if (rep.stability.max_drop_per_particle > B + 1e-12) {
        std::ostringstream msg;
        msg << "random-configuration probe found -U_N/N = " << rep.stability.max_drop_per_particle
            << " > B = " << B << " (B is not a valid stability constant)";
        rep.diagnostics.push_back(msg.str());
    }
    return rep;
}

}  // namespace ksd
