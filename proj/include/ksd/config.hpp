#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ksd/ks.hpp"
#include "ksd/oracle.hpp"
#include "ksd/potentials.hpp"

namespace ksd {

struct SweepSettings {
    double inner_L = 1.0;
    int inner_n_g = 2;
    std::vector<double> outer_sides;
};

struct OutputSettings {
    std::filesystem::path dir = "ksd-out";
    bool csv = true;
    bool binary = true;
};

/// Parsed run configuration. Every field is validated on load; cross-field
/// gates that need computed constants (z against z_max, |v| against t0) are
/// re-checked by the commands.
struct RunConfig {
    std::optional<PairPotential> potential;
    std::optional<Envelope> envelope;
    double beta = 1.0;
    std::optional<double> z;           // absolute activity
    std::optional<double> z_fraction;  // or a fraction of z_max
    double B = 0.0;
    double t0 = 0.5;
    double L = 2.0;
    int n_g = 3;
    KSConfig ks;
    OracleConfig oracle;
    std::optional<Perturbation> perturbation;
    std::vector<double> eps;  // finite-difference ladder
    std::optional<SweepSettings> sweep;
    OutputSettings outputs;
    SamplingConfig sampling;
    QuadratureConfig quadrature;

    std::string canonical;  // normalised JSON text of the input document
    std::uint64_t hash = 0;

    const PairPotential& u() const { return *potential; }
    const Envelope& env() const { return *envelope; }
    Grid grid() const { return Grid(Box(L), n_g); }
    /// Absolute z, resolving z_fraction against z_max.
    double activity(double z_max) const;
};

/// Throws ConfigError on malformed JSON, unknown keys or out-of-range values.
/// Relative file paths (tabulated potentials) are resolved against base_dir.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data);

}  // namespace ksd
