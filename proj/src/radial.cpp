#include "ksd/radial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ksd/errors.hpp"

namespace ksd {

namespace {

std::vector<double> panel_edges(double a, double b, std::span<const double> breakpoints) {
    std::vector<double> cuts{a, b};
    for (double p : breakpoints)
        if (p > a && p < b) cuts.push_back(p);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    std::vector<double> edges{cuts.front()};
    for (std::size_t i = 1; i < cuts.size(); ++i) {
        double lo = cuts[i - 1];
        const double hi = cuts[i];
        if (lo > 0.0) {
            while (hi / lo > 2.0) {
                lo *= 2.0;
                edges.push_back(lo);
            }
        }
        edges.push_back(hi);
    }
    return edges;
}

}  // namespace

RadialIntegral integrate_radial(const std::function<double(double)>& g, double a, double b,
                                std::span<const double> breakpoints, const QuadratureConfig& cfg) {
    if (!(b >= a) || !std::isfinite(b) || a < 0.0)
        throw ConfigError("integrate_radial: invalid range");
    RadialIntegral out;
    out.r_max = b;
    if (a == b) return out;

    const auto edges = panel_edges(a, b, breakpoints);
    const double panel_tol = cfg.abs_tol / static_cast<double>(edges.size());
    for (std::size_t i = 1; i < edges.size(); ++i) {
        double err = 0.0;
        double l1 = 0.0;
        const double lo = edges[i - 1];
        const double hi = edges[i];
        // Boost takes a relative tolerance; scale it by the panel's L1 mass
        // estimate so the absolute target is respected.
        boost::math::quadrature::gauss_kronrod<double, 15>::integrate(g, lo, hi, 0, 0.0, &err, &l1);
        const double rel = l1 > 0.0 ? std::max(panel_tol / l1, 1e-15) : 1e-15;
        const double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
            g, lo, hi, cfg.max_depth, rel, &err, &l1);
        out.value += v;
        out.error += err;
    }
    if (!std::isfinite(out.value) || out.error > cfg.abs_tol + 1e-12 * std::abs(out.value)) {
        std::ostringstream msg;
        msg << "radial quadrature did not converge on [" << a << ", " << b << "]: error estimate "
            << out.error << " exceeds tolerance " << cfg.abs_tol;
        throw ConvergenceError(msg.str());
    }
    return out;
}

std::vector<double> geometric_samples(double lo, double hi, int per_decade, bool include_hi) {
    if (!(lo > 0.0) || !(hi > lo) || per_decade < 1)
        throw ConfigError("geometric_samples: need 0 < lo < hi and per_decade >= 1");
    const double decades = std::log10(hi / lo);
    const auto count = static_cast<std::size_t>(std::ceil(decades * per_decade));
    std::vector<double> r;
    r.reserve(count + 1);
    for (std::size_t k = 0; k < count; ++k)
        r.push_back(lo * std::pow(10.0, static_cast<double>(k) / per_decade));
    if (include_hi) r.push_back(hi);
    return r;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const double denom = n * sxx - sx * sx;
    return (n * sxy - sx * sy) / denom;
}

}  // namespace ksd
