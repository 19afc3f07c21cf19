#include "ksd/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "ksd/errors.hpp"

namespace ksd {

double distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Box::Box(double L) : side(L) {
    if (!(L > 0.0) || !std::isfinite(L)) throw ConfigError("box side must be positive");
}

Grid::Grid(Box box, int nodes_per_axis) : box_(box), n_(nodes_per_axis) {
    if (nodes_per_axis < 2) throw ConfigError("grid needs at least 2 nodes per axis");
    const double h = box_.side / n_;
    weight_ = h * h * h;
    nodes_.reserve(static_cast<std::size_t>(n_) * n_ * n_);
    auto coord = [&](int i) { return h * (static_cast<double>(2 * i + 1 - n_) / 2.0); };
    for (int ix = 0; ix < n_; ++ix)
        for (int iy = 0; iy < n_; ++iy)
            for (int iz = 0; iz < n_; ++iz) nodes_.push_back({coord(ix), coord(iy), coord(iz)});
}

std::vector<double> Grid::pair_distances() const {
    const std::size_t G = size();
    std::vector<double> d(G * G);
    for (std::size_t i = 0; i < G; ++i)
        for (std::size_t j = 0; j < G; ++j) d[i * G + j] = distance(nodes_[i], nodes_[j]);
    return d;
}

Grid build_grid(Box box, int nodes_per_axis) { return Grid(box, nodes_per_axis); }

std::size_t tuple_count(std::size_t G, int m) {
    std::size_t c = 1;
    for (int k = 0; k < m; ++k) {
        if (c > std::numeric_limits<std::size_t>::max() / std::max<std::size_t>(G, 1))
            throw BudgetError("tuple count G^m overflows size_t");
        c *= G;
    }
    return c;
}

std::size_t tuple_budget() {
    if (const char* env = std::getenv("KS_MAX_TUPLES")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::size_t{1} << 24;
}

void require_budget(std::size_t count, const char* what) {
    const std::size_t budget = tuple_budget();
    if (count > budget) {
        std::ostringstream msg;
        msg << what << ": " << count << " tuples exceed the budget of " << budget
            << " (raise KS_MAX_TUPLES to override)";
        throw BudgetError(msg.str());
    }
}

GridFunction::GridFunction(Grid grid, int order) : grid_(std::move(grid)), order_(order) {
    if (order < 1) throw StructuralError("grid function order must be >= 1");
    const std::size_t count = tuple_count(grid_.size(), order);
    require_budget(count, "grid function storage");
    values_.assign(count, 0.0);
}

GridFunction::GridFunction(Grid grid, int order, std::vector<double> values)
    : grid_(std::move(grid)), order_(order), values_(std::move(values)) {
    if (order < 1) throw StructuralError("grid function order must be >= 1");
    if (values_.size() != tuple_count(grid_.size(), order))
        throw StructuralError("grid function value count does not match G^m");
}

std::size_t GridFunction::index(std::span<const std::size_t> nodes) const {
    if (nodes.size() != static_cast<std::size_t>(order_)) throw StructuralError("tuple length != order");
    std::size_t flat = 0;
    for (std::size_t k : nodes) flat = flat * grid_.size() + k;
    return flat;
}

void GridFunction::unflatten(std::size_t flat, std::span<std::size_t> out) const {
    const std::size_t G = grid_.size();
    for (std::size_t k = out.size(); k-- > 0;) {
        out[k] = flat % G;
        flat /= G;
    }
}

double GridFunction::sup_abs() const {
    double s = 0.0;
    for (double v : values_) s = std::max(s, std::abs(v));
    return s;
}

double integrate_n(const Grid& grid, int n, const std::function<double(std::span<const std::size_t>)>& f) {
    if (n < 1) throw ConfigError("integrate_n: n must be >= 1");
    const std::size_t G = grid.size();
    const std::size_t count = tuple_count(G, n);
    require_budget(count, "integrate_n");
    std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
    CompensatedSum acc;
    for (std::size_t t = 0; t < count; ++t) {
        acc.add(f(idx));
        for (std::size_t k = idx.size(); k-- > 0;) {
            if (++idx[k] < G) break;
            idx[k] = 0;
        }
    }
    return acc.value() * std::pow(grid.weight(), n);
}

double xnorm(std::span<const GridFunction> phi, double c) {
    if (!(c > 0.0)) throw ConfigError("xnorm: weight c must be positive");
    double norm = 0.0;
    for (const auto& f : phi) norm = std::max(norm, std::pow(c, f.order()) * f.sup_abs());
    return norm;
}

ImbeddingSpec::ImbeddingSpec(Grid outer, Grid inner) : outer_(std::move(outer)), inner_(std::move(inner)) {
    const double h_out = outer_.spacing();
    const double h_in = inner_.spacing();
    if (std::abs(h_out - h_in) > 1e-12 * h_out)
        throw StructuralError("imbedding: inner and outer grids have different spacings");
    if (inner_.box().side > outer_.box().side * (1.0 + 1e-12))
        throw StructuralError("imbedding: inner box is larger than outer box");
    const double shift = (outer_.nodes_per_axis() - inner_.nodes_per_axis()) / 2.0;
    if (std::abs(shift - std::round(shift)) > 1e-12)
        throw StructuralError("imbedding: inner nodes do not coincide with outer nodes (node-count parity differs)");
    const auto off = static_cast<std::size_t>(std::llround(shift));
    const auto no = static_cast<std::size_t>(outer_.nodes_per_axis());
    const auto ni = static_cast<std::size_t>(inner_.nodes_per_axis());
    map_.resize(inner_.size());
    for (std::size_t ix = 0; ix < ni; ++ix)
        for (std::size_t iy = 0; iy < ni; ++iy)
            for (std::size_t iz = 0; iz < ni; ++iz) {
                const std::size_t in = (ix * ni + iy) * ni + iz;
                const std::size_t out = ((ix + off) * no + (iy + off)) * no + (iz + off);
                if (distance(inner_.node(in), outer_.node(out)) > 1e-12 * outer_.box().side)
                    throw StructuralError("imbedding: node coordinate mismatch");
                map_[in] = out;
            }
}

GridFunction restrict_to(const ImbeddingSpec& spec, const GridFunction& f) {
    if (!(f.grid() == spec.outer())) throw StructuralError("restrict: function does not live on the outer grid");
    GridFunction out(spec.inner(), f.order());
    const int m = f.order();
    std::vector<std::size_t> in(static_cast<std::size_t>(m));
    std::vector<std::size_t> outer_idx(static_cast<std::size_t>(m));
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        out.unflatten(flat, in);
        for (std::size_t k = 0; k < in.size(); ++k) outer_idx[k] = spec.outer_index(in[k]);
        out[flat] = f.at(outer_idx);
    }
    return out;
}

void write_csv(const GridFunction& f, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << std::setprecision(17);
    for (int k = 1; k <= f.order(); ++k) out << "x" << k << ",y" << k << ",z" << k << ",";
    out << "value\n";
    std::vector<std::size_t> idx(static_cast<std::size_t>(f.order()));
    for (std::size_t flat = 0; flat < f.size(); ++flat) {
        f.unflatten(flat, idx);
        for (std::size_t k : idx) {
            const Vec3& p = f.grid().node(k);
            out << p[0] << ',' << p[1] << ',' << p[2] << ',';
        }
        out << f[flat] << '\n';
    }
}

void write_binary(const GridFunction& f, const std::filesystem::path& stem) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    nlohmann::json header = {{"format", "ksd-gridfunction"},
                             {"version", 1},
                             {"order", f.order()},
                             {"L", f.grid().box().side},
                             {"n_g", f.grid().nodes_per_axis()},
                             {"count", f.size()},
                             {"dtype", "<f8"},
                             {"payload", stem.filename().string() + ".bin"}};
    {
        std::ofstream h(stem.string() + ".json");
        if (!h) throw ConfigError("cannot write " + stem.string() + ".json");
        h << header.dump(2) << '\n';
    }
    std::ofstream b(stem.string() + ".bin", std::ios::binary);
    if (!b) throw ConfigError("cannot write " + stem.string() + ".bin");
    for (double v : f.values()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        char bytes[8];
        std::memcpy(bytes, &bits, 8);
        b.write(bytes, 8);
    }
}

GridFunction read_binary(const std::filesystem::path& stem) {
    std::ifstream h(stem.string() + ".json");
    if (!h) throw ConfigError("cannot read " + stem.string() + ".json");
    nlohmann::json header;
    try {
        h >> header;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed grid-function header: ") + e.what());
    }
    if (header.value("dtype", "") != "<f8") throw ConfigError("unsupported grid-function dtype");
    Grid grid(Box(header.at("L").get<double>()), header.at("n_g").get<int>());
    const int order = header.at("order").get<int>();
    const auto count = header.at("count").get<std::size_t>();
    std::ifstream b(stem.string() + ".bin", std::ios::binary);
    if (!b) throw ConfigError("cannot read " + stem.string() + ".bin");
    std::vector<double> values(count);
    for (double& v : values) {
        char bytes[8];
        if (!b.read(bytes, 8)) throw ConfigError("truncated grid-function payload");
        std::uint64_t bits;
        std::memcpy(&bits, bytes, 8);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        v = std::bit_cast<double>(bits);
    }
    return GridFunction(std::move(grid), order, std::move(values));
}

}  // namespace ksd
