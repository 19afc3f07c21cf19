#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace ksd {

using Vec3 = std::array<double, 3>;

double distance(const Vec3& a, const Vec3& b);

/// Cube of side L centered at the origin.
struct Box {
    double side = 1.0;

    explicit Box(double L);
    double volume() const { return side * side * side; }
};

/// Midpoint tensor grid over a Box. Nodes are enumerated row-major in (x, y, z).
class Grid {
public:
    Grid(Box box, int nodes_per_axis);

    const Box& box() const { return box_; }
    int nodes_per_axis() const { return n_; }
    std::size_t size() const { return nodes_.size(); }
    double spacing() const { return box_.side / n_; }
    double weight() const { return weight_; }
    const Vec3& node(std::size_t i) const { return nodes_[i]; }
    const std::vector<Vec3>& nodes() const { return nodes_; }
    /// Pairwise node distances, row-major G x G.
    std::vector<double> pair_distances() const;

    bool operator==(const Grid& other) const {
        return box_.side == other.box_.side && n_ == other.n_;
    }

private:
    Box box_;
    int n_;
    double weight_;
    std::vector<Vec3> nodes_;
};

Grid build_grid(Box box, int nodes_per_axis);

/// Integer power G^m with overflow detection.
std::size_t tuple_count(std::size_t G, int m);

/// Tuple budget: 2^24 unless the KS_MAX_TUPLES environment variable overrides it.
std::size_t tuple_budget();
/// Throws BudgetError naming `what` when `count` exceeds the budget.
void require_budget(std::size_t count, const char* what);

/// Values of a function on Lambda^m sampled at all node tuples.
class GridFunction {
public:
    GridFunction(Grid grid, int order);
    GridFunction(Grid grid, int order, std::vector<double> values);

    const Grid& grid() const { return grid_; }
    int order() const { return order_; }
    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    double& operator[](std::size_t flat) { return values_[flat]; }
    double operator[](std::size_t flat) const { return values_[flat]; }

    /// Flat index of a node tuple.
    std::size_t index(std::span<const std::size_t> nodes) const;
    double at(std::span<const std::size_t> nodes) const { return values_[index(nodes)]; }
    /// Decodes a flat index into m node indices.
    void unflatten(std::size_t flat, std::span<std::size_t> out) const;

    double sup_abs() const;

private:
    Grid grid_;
    int order_;
    std::vector<double> values_;
};

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Product-weight quadrature of f over Lambda^n. f receives the n node indices.
double integrate_n(const Grid& grid, int n, const std::function<double(std::span<const std::size_t>)>& f);

/// max_m c^m max |phi_m|, m = 1, 2, ... over the given sequence.
double xnorm(std::span<const GridFunction> phi, double c);

/// Node correspondence between a grid over Lambda' and a grid over Lambda sharing its lattice.
class ImbeddingSpec {
public:
    ImbeddingSpec(Grid outer, Grid inner);

    const Grid& outer() const { return outer_; }
    const Grid& inner() const { return inner_; }
    /// Outer index of inner node i.
    std::size_t outer_index(std::size_t inner_node) const { return map_[inner_node]; }

private:
    Grid outer_;
    Grid inner_;
    std::vector<std::size_t> map_;
};

/// Restriction of f (on spec.outer()) to the inner node tuples; no interpolation.
GridFunction restrict_to(const ImbeddingSpec& spec, const GridFunction& f);

/// One row per node tuple: x1,y1,z1,...,value with 17 significant digits.
void write_csv(const GridFunction& f, const std::filesystem::path& path);
/// JSON header (path.json) plus little-endian float64 payload (path.bin).
void write_binary(const GridFunction& f, const std::filesystem::path& stem);
GridFunction read_binary(const std::filesystem::path& stem);

}  // namespace ksd
