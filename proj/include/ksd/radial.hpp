#pragma once

#include <functional>
#include <span>
#include <vector>

namespace ksd {

/// Settings for one-dimensional radial quadrature.
struct QuadratureConfig {
    double abs_tol = 1e-10;
    unsigned max_depth = 18;  // bisection levels per panel
};

struct RadialIntegral {
    double value = 0.0;
    double error = 0.0;       // quadrature error estimate
    double tail_bound = 0.0;  // bound on the part beyond r_max (0 when the range is finite)
    double r_max = 0.0;
};

/// Integrates g over [a, b] with adaptive Gauss-Kronrod panels. Panels are
/// cut at every breakpoint inside (a, b) and, away from the origin, at
/// doubling radii so decaying tails keep a bounded relative scale.
/// Throws ConvergenceError when the summed error estimate exceeds abs_tol
/// by more than the relative floor.
RadialIntegral integrate_radial(const std::function<double(double)>& g, double a, double b,
                                std::span<const double> breakpoints, const QuadratureConfig& cfg = {});

/// Log-spaced sample points on [lo, hi) (or [lo, hi] when include_hi) with the
/// given number of points per decade.
std::vector<double> geometric_samples(double lo, double hi, int per_decade, bool include_hi);

/// Least-squares slope of log(y) against log(x); pairs with y <= 0 are skipped.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace ksd
