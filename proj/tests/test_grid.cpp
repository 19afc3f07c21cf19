#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"

#include "ksd/errors.hpp"
#include "ksd/grid.hpp"

using namespace ksd;
using doctest::Approx;

TEST_SUITE("grid") {

TEST_CASE("midpoint grid layout") {
    const Grid g(Box(2.0), 2);
    CHECK(g.size() == 8);
    CHECK(g.weight() == 1.0);
    for (const auto& p : g.nodes())
        for (double x : p) CHECK(std::abs(x) == 0.5);

    const Grid h(Box(3.0), 3);
    CHECK(h.size() == 27);
    CHECK(h.weight() == 1.0);
    std::set<double> coords;
    for (const auto& p : h.nodes())
        for (double x : p) coords.insert(x);
    CHECK(coords == std::set<double>{-1.0, 0.0, 1.0});
    // row-major in (x, y, z)
    CHECK(h.node(1)[2] == 0.0);
    CHECK(h.node(3)[1] == 0.0);
    CHECK(h.node(9)[0] == 0.0);
    CHECK_THROWS_AS(Grid(Box(2.0), 0), ConfigError);
    CHECK_THROWS_AS(Box(-1.0), ConfigError);
}

TEST_CASE("product quadrature") {
    const Grid g(Box(2.0), 2);
    CHECK(integrate_n(g, 2, [](auto) { return 1.0; }) == Approx(64.0));
    CHECK(integrate_n(g, 1, [&](auto idx) { return g.node(idx[0])[0] > 0.0 ? 1.0 : 0.0; }) == Approx(4.0));

    const Grid f(Box(2.0), 4);
    const double s = integrate_n(f, 1, [&](auto idx) {
        const auto& p = f.node(idx[0]);
        return p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    });
    // midpoint sum: 3 * (sum_i x_i^2 h) * L^2 with x_i in {+-0.25, +-0.75}, h = 0.5
    CHECK(s == Approx(3.0 * (2.0 * (0.0625 + 0.5625) * 0.5) * 4.0).epsilon(1e-14));
    CHECK(s == Approx(7.5));
}

TEST_CASE("tuple counts and budget") {
    CHECK(tuple_count(27, 3) == 19683);
    CHECK_THROWS_AS(tuple_count(std::size_t{1} << 40, 3), BudgetError);
    CHECK(tuple_budget() == (std::size_t{1} << 24));
    ::setenv("KS_MAX_TUPLES", "100", 1);
    CHECK(tuple_budget() == 100);
    try {
        require_budget(101, "probe");
        FAIL("budget not enforced");
    } catch (const BudgetError& e) {
        CHECK(std::string(e.what()).find("101") != std::string::npos);
    }
    ::unsetenv("KS_MAX_TUPLES");
    CHECK_NOTHROW(require_budget(101, "probe"));
}

TEST_CASE("weighted sup norm") {
    const Grid g(Box(2.0), 2);
    std::vector<GridFunction> phi{GridFunction(g, 1), GridFunction(g, 2)};
    for (auto& x : phi[0].values()) x = 1.0;
    CHECK(xnorm(phi, 2.0) == 2.0);

    const double c = 3.0;
    for (auto& x : phi[0].values()) x = 1.0 / c;
    for (auto& x : phi[1].values()) x = 1.0 / (c * c);
    CHECK(xnorm(phi, c) == Approx(1.0).epsilon(1e-15));

    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 8; ++trial) {
        double brute = 0.0;
        for (int m = 1; m <= 2; ++m)
            for (auto& x : phi[m - 1].values()) {
                x = nd(rng);
                brute = std::max(brute, std::pow(c, m) * std::abs(x));
            }
        CHECK(xnorm(phi, c) == brute);
    }
}

TEST_CASE("restriction to an inner box") {
    const Grid outer(Box(4.0), 4);
    const Grid inner(Box(2.0), 2);
    const ImbeddingSpec spec(outer, inner);
    GridFunction f(outer, 1);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i);
    const auto r = restrict_to(spec, f);
    REQUIRE(r.size() == 8);
    std::size_t k = 0;
    for (std::size_t ix : {1, 2})
        for (std::size_t iy : {1, 2})
            for (std::size_t iz : {1, 2}) CHECK(r[k++] == static_cast<double>(ix * 16 + iy * 4 + iz));

    GridFunction ones(outer, 2);
    for (auto& x : ones.values()) x = 1.0;
    const auto r1 = restrict_to(spec, ones);
    for (double x : r1.values()) CHECK(x == 1.0);

    const ImbeddingSpec self(inner, inner);
    GridFunction g(inner, 2);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::sin(static_cast<double>(i));
    const auto same = restrict_to(self, g);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(same[i] == g[i]);

    CHECK_THROWS_AS(ImbeddingSpec(Grid(Box(4.0), 8), inner), StructuralError);
    CHECK_THROWS_AS(ImbeddingSpec(Grid(Box(3.0), 3), Grid(Box(2.0), 2)), StructuralError);
}

TEST_CASE("grid function files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "ksd-test-grid-io";
    std::filesystem::create_directories(dir);
    const Grid g(Box(2.0), 2);
    GridFunction f(g, 2);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = 1.0 / (3.0 + static_cast<double>(i));
    write_binary(f, dir / "f");
    const auto back = read_binary(dir / "f");
    CHECK(back.order() == 2);
    CHECK(back.grid() == g);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(back[i] == f[i]);

    write_csv(f, dir / "f.csv");
    std::ifstream in(dir / "f.csv");
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "x1,y1,z1,x2,y2,z2,value");
    std::getline(in, row);
    const double v = std::stod(row.substr(row.rfind(',') + 1));
    CHECK(v == f[0]);
    std::filesystem::remove_all(dir);
}

TEST_CASE("compensated summation") {
    CompensatedSum s;
    s.add(1.0);
    for (int i = 0; i < 1000; ++i) s.add(1e-17);
    s.add(-1.0);
    CHECK(s.value() == Approx(1e-14).epsilon(1e-10));
}

}  // TEST_SUITE
