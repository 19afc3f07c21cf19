#include "ksd/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ksd/derivative.hpp"
#include "ksd/errors.hpp"

namespace ksd {

using nlohmann::json;

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, _] : obj.items())
        if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

double number(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw ConfigError(where + "." + key + " is required");
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(where + "." + key + " must be finite");
    return x;
}

double number_or(const json& obj, const char* key, double fallback, const std::string& where) {
    return obj.contains(key) ? number(obj, key, where) : fallback;
}

int integer_or(const json& obj, const char* key, int fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) throw ConfigError(where + "." + key + " must be an integer");
    return v.get<int>();
}

std::string text(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj.at(key).is_string()) throw ConfigError(where + "." + key + " must be a string");
    return obj.at(key).get<std::string>();
}

double positive(double x, const std::string& what) {
    if (!(x > 0.0)) throw ConfigError(what + " must be positive");
    return x;
}

RadialForm parse_form(const json& j, const std::string& where) {
    check_keys(j, {"shape", "coef", "scale", "exponent"}, where);
    RadialForm f;
    const auto shape = text(j, "shape", where);
    if (shape == "power")
        f.shape = RadialForm::Shape::Power;
    else if (shape == "exponential")
        f.shape = RadialForm::Shape::Exponential;
    else
        throw ConfigError(where + ".shape must be 'power' or 'exponential'");
    f.coef = positive(number_or(j, "coef", 1.0, where), where + ".coef");
    f.scale = positive(number_or(j, "scale", 1.0, where), where + ".scale");
    f.exponent = number_or(j, "exponent", 6.0, where);
    return f;
}

PairPotential parse_potential(const json& j, const std::filesystem::path& base) {
    const std::string w = "potential";
    check_keys(j, {"kind", "params", "name", "file", "tail", "core", "shifted"}, w);
    const auto kind = text(j, "kind", w);
    const json params = j.value("params", json::object());
    const std::string pw = w + ".params";
    if (kind == "hard-sphere") {
        check_keys(params, {"a"}, pw);
        return hard_sphere(positive(number(params, "a", pw), "potential.params.a"));
    }
    if (kind == "lennard-jones") {
        check_keys(params, {"epsilon", "sigma"}, pw);
        return lennard_jones(positive(number(params, "epsilon", pw), "epsilon"),
                             positive(number(params, "sigma", pw), "sigma"));
    }
    if (kind == "truncated-lennard-jones") {
        check_keys(params, {"epsilon", "sigma", "rc"}, pw);
        const bool shifted = j.value("shifted", true);
        return truncated_lennard_jones(positive(number(params, "epsilon", pw), "epsilon"),
                                       positive(number(params, "sigma", pw), "sigma"),
                                       positive(number(params, "rc", pw), "rc"), shifted);
    }
    if (kind == "tabulated") {
        auto file = std::filesystem::path(text(j, "file", w));
        if (file.is_relative() && !base.empty()) file = base / file;
        TableTail tail;
        if (j.contains("tail")) {
            const auto& t = j.at("tail");
            check_keys(t, {"form", "exponent"}, "potential.tail");
            const auto form = text(t, "form", "potential.tail");
            if (form == "zero")
                tail.form = TableTail::Form::Zero;
            else if (form == "power")
                tail.form = TableTail::Form::Power;
            else
                throw ConfigError("potential.tail.form must be 'zero' or 'power'");
            tail.exponent = number_or(t, "exponent", tail.exponent, "potential.tail");
        }
        TableCore core;
        if (j.contains("core")) {
            const auto c = text(j, "core", w);
            if (c == "infinite")
                core.form = TableCore::Form::Infinite;
            else if (c == "constant")
                core.form = TableCore::Form::Constant;
            else
                throw ConfigError("potential.core must be 'infinite' or 'constant'");
        }
        return load_tabulated_csv(file, tail, core);
    }
    if (kind == "custom") {
        const auto name = text(j, "name", w);
        if (name == "zero") {
            check_keys(params, {}, pw);
            return zero_potential();
        }
        if (name == "soft-sphere") {
            check_keys(params, {"epsilon", "sigma", "n"}, pw);
            return soft_sphere(positive(number(params, "epsilon", pw), "epsilon"),
                               positive(number(params, "sigma", pw), "sigma"),
                               positive(number(params, "n", pw), "n"));
        }
        throw ConfigError("potential.name must be 'zero' or 'soft-sphere' for kind 'custom'");
    }
    throw ConfigError("unknown potential kind '" + kind + "'");
}

Perturbation parse_perturbation(const json& j, const Envelope& env, const std::optional<PairPotential>& u) {
    const std::string w = "perturbation";
    check_keys(j, {"kind", "amplitude", "r_lo", "r_hi", "length", "sigma", "exponent", "factor"}, w);
    const auto kind = text(j, "kind", w);
    if (kind == "zero") return zero_perturbation();
    if (kind == "tail-bump") {
        const double r_lo = number_or(j, "r_lo", env.s(), w);
        double r_hi = std::numeric_limits<double>::infinity();
        if (j.contains("r_hi") && !j.at("r_hi").is_null()) r_hi = number(j, "r_hi", w);
        return tail_bump(env, number(j, "amplitude", w), r_lo, r_hi);
    }
    if (kind == "exponential")
        return exponential_perturbation(number(j, "amplitude", w), positive(number(j, "length", w), "length"));
    if (kind == "power")
        return power_perturbation(number(j, "amplitude", w), positive(number(j, "sigma", w), "sigma"),
                                  number(j, "exponent", w));
    if (kind == "scaled-potential") {
        if (!u) throw ConfigError("perturbation 'scaled-potential' needs a potential");
        return scaled_potential(*u, number(j, "factor", w));
    }
    throw ConfigError("unknown perturbation kind '" + kind + "'");
}

}  // namespace

std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double RunConfig::activity(double z_max) const {
    if (z) return *z;
    if (!std::isfinite(z_max)) throw ConfigError("thermo.z_fraction needs a finite z_max; give thermo.z instead");
    return *z_fraction * z_max;
}

RunConfig parse_config(std::string_view raw, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
    try {
        check_keys(j, {"potential", "envelope", "thermo", "stability_B", "t0", "grid", "ks", "oracle", "perturbation",
                       "derivative", "sweep", "outputs", "sampling", "quadrature"},
                   "config");
        RunConfig c;
        c.canonical = j.dump();
        c.hash = fnv1a(c.canonical);

        if (!j.contains("potential")) throw ConfigError("config.potential is required");
        c.potential = parse_potential(j.at("potential"), base_dir);

        if (!j.contains("envelope")) throw ConfigError("config.envelope is required");
        const auto& e = j.at("envelope");
        check_keys(e, {"s", "lower", "upper"}, "envelope");
        if (!e.contains("lower") || !e.contains("upper")) throw ConfigError("envelope.lower and envelope.upper are required");
        c.envelope = Envelope(number(e, "s", "envelope"), parse_form(e.at("lower"), "envelope.lower"),
                              parse_form(e.at("upper"), "envelope.upper"));

        if (!j.contains("thermo")) throw ConfigError("config.thermo is required");
        const auto& t = j.at("thermo");
        check_keys(t, {"beta", "z", "z_fraction"}, "thermo");
        c.beta = positive(number(t, "beta", "thermo"), "thermo.beta");
        if (t.contains("z") == t.contains("z_fraction"))
            throw ConfigError("thermo needs exactly one of 'z' and 'z_fraction'");
        if (t.contains("z")) c.z = positive(number(t, "z", "thermo"), "thermo.z");
        if (t.contains("z_fraction")) c.z_fraction = positive(number(t, "z_fraction", "thermo"), "thermo.z_fraction");

        c.B = number_or(j, "stability_B", 0.0, "config");
        if (c.B < 0.0) throw ConfigError("stability_B must be >= 0");
        c.t0 = number_or(j, "t0", 0.5, "config");
        if (!(c.t0 > 0.0 && c.t0 < 1.0)) throw ConfigError("t0 must lie in (0, 1)");

        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            check_keys(g, {"L", "n_g"}, "grid");
            c.L = positive(number_or(g, "L", c.L, "grid"), "grid.L");
            c.n_g = integer_or(g, "n_g", c.n_g, "grid");
            if (c.n_g < 2) throw ConfigError("grid.n_g must be >= 2");
        }

        if (j.contains("ks")) {
            const auto& k = j.at("ks");
            check_keys(k, {"m_max", "n_max", "neumann_tol", "max_iters"}, "ks");
            c.ks.m_max = integer_or(k, "m_max", c.ks.m_max, "ks");
            c.ks.n_max = integer_or(k, "n_max", c.ks.n_max, "ks");
            c.ks.neumann_tol = number_or(k, "neumann_tol", c.ks.neumann_tol, "ks");
            c.ks.max_iters = integer_or(k, "max_iters", c.ks.max_iters, "ks");
        }
        c.ks.validate();

        c.oracle.N_max = std::max(6, c.ks.m_max + 2);
        if (j.contains("oracle")) {
            const auto& o = j.at("oracle");
            check_keys(o, {"N_max"}, "oracle");
            c.oracle.N_max = integer_or(o, "N_max", c.oracle.N_max, "oracle");
        }
        c.oracle.validate(c.ks.m_max);

        if (j.contains("perturbation")) c.perturbation = parse_perturbation(j.at("perturbation"), *c.envelope, c.potential);

        c.eps = default_eps_ladder();
        if (j.contains("derivative")) {
            const auto& d = j.at("derivative");
            check_keys(d, {"eps"}, "derivative");
            if (d.contains("eps")) {
                if (!d.at("eps").is_array() || d.at("eps").empty())
                    throw ConfigError("derivative.eps must be a non-empty array");
                c.eps.clear();
                for (const auto& x : d.at("eps")) {
                    if (!x.is_number() || !(x.get<double>() > 0.0))
                        throw ConfigError("derivative.eps entries must be positive numbers");
                    c.eps.push_back(x.get<double>());
                }
            }
        }

        if (j.contains("sweep")) {
            const auto& s = j.at("sweep");
            check_keys(s, {"inner", "outer_sides"}, "sweep");
            SweepSettings sw;
            if (s.contains("inner")) {
                const auto& in = s.at("inner");
                check_keys(in, {"L", "n_g"}, "sweep.inner");
                sw.inner_L = positive(number_or(in, "L", sw.inner_L, "sweep.inner"), "sweep.inner.L");
                sw.inner_n_g = integer_or(in, "n_g", sw.inner_n_g, "sweep.inner");
                if (sw.inner_n_g < 2) throw ConfigError("sweep.inner.n_g must be >= 2");
            }
            if (!s.contains("outer_sides") || !s.at("outer_sides").is_array() || s.at("outer_sides").empty())
                throw ConfigError("sweep.outer_sides must be a non-empty array");
            for (const auto& x : s.at("outer_sides")) {
                if (!x.is_number() || !(x.get<double>() > 0.0))
                    throw ConfigError("sweep.outer_sides entries must be positive numbers");
                sw.outer_sides.push_back(x.get<double>());
            }
            for (std::size_t i = 1; i < sw.outer_sides.size(); ++i)
                if (!(sw.outer_sides[i] >= sw.outer_sides[i - 1]))
                    throw ConfigError("sweep.outer_sides must be nondecreasing");
            c.sweep = sw;
        }

        if (j.contains("outputs")) {
            const auto& o = j.at("outputs");
            check_keys(o, {"dir", "formats"}, "outputs");
            if (o.contains("dir")) c.outputs.dir = text(o, "dir", "outputs");
            if (o.contains("formats")) {
                if (!o.at("formats").is_array()) throw ConfigError("outputs.formats must be an array");
                c.outputs.csv = c.outputs.binary = false;
                for (const auto& f : o.at("formats")) {
                    const auto s = f.is_string() ? f.get<std::string>() : std::string();
                    if (s == "csv")
                        c.outputs.csv = true;
                    else if (s == "binary")
                        c.outputs.binary = true;
                    else
                        throw ConfigError("outputs.formats entries must be 'csv' or 'binary'");
                }
            }
        }

        if (j.contains("sampling")) {
            const auto& s = j.at("sampling");
            check_keys(s, {"per_decade", "lower_fraction", "tail_eps"}, "sampling");
            c.sampling.per_decade = integer_or(s, "per_decade", c.sampling.per_decade, "sampling");
            if (c.sampling.per_decade < 16) throw ConfigError("sampling.per_decade must be >= 16");
            c.sampling.lower_fraction = positive(number_or(s, "lower_fraction", c.sampling.lower_fraction, "sampling"),
                                                 "sampling.lower_fraction");
            c.sampling.tail_eps = positive(number_or(s, "tail_eps", c.sampling.tail_eps, "sampling"), "sampling.tail_eps");
        }
        if (j.contains("quadrature")) {
            const auto& q = j.at("quadrature");
            check_keys(q, {"abs_tol", "max_depth"}, "quadrature");
            c.quadrature.abs_tol = positive(number_or(q, "abs_tol", c.quadrature.abs_tol, "quadrature"), "quadrature.abs_tol");
            const int depth = integer_or(q, "max_depth", static_cast<int>(c.quadrature.max_depth), "quadrature");
            if (depth < 1) throw ConfigError("quadrature.max_depth must be >= 1");
            c.quadrature.max_depth = static_cast<unsigned>(depth);
        }
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read configuration " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

}  // namespace ksd
