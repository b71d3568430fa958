// config.hpp - run configuration: flat key = value text, overrides, validation and a stable hash

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pfflow/error.hpp"
#include "pfflow/hash.hpp"
#include "pfflow/massshell.hpp"

namespace pfflow {

/// Keys (all optional, defaults below):
///   kappa, e (comma list), p_max, n_points, j_max, n_radial, n_angular, n_max_total,
///   n_max_per_mode, spinor_dim, cluster_tol, fd_step, fd_hess_step, quadrature_mode
///   (deterministic | monte-carlo), seed, output_dir, cache_dir, worker_count, allow_deep.
/// Lines are `key = value`; `#` starts a comment.
struct RunConfig {
    double kappa = 1.0;
    std::vector<double> e = {0.05};
    double p_max = 1.0;
    int n_points = 6;
    int j_max = 5;
    int n_radial = 1;
    int n_angular = 2;
    int n_max_total = 3;
    int n_max_per_mode = 2;
    int spinor_dim = 4;
    double cluster_tol = 1e-8;
    double fd_step = 1e-4;
    double fd_hess_step = 1e-3;
    QuadratureMode quadrature_mode = QuadratureMode::deterministic;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    std::string cache_dir;
    int worker_count = 1;
    bool allow_deep = false;

    static constexpr int kDeepGuard = 12;
};

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key_in, const std::string& value_in) {
    using namespace detail;
    const std::string key = trim(key_in), v = trim(value_in);
    auto as_int = [&] { return static_cast<int>(parse_int(key, v)); };
    if (key == "kappa") c.kappa = parse_double(key, v);
    else if (key == "e") {
        c.e.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) c.e.push_back(parse_double(key, trim(item)));
    } else if (key == "p_max") c.p_max = parse_double(key, v);
    else if (key == "n_points") c.n_points = as_int();
    else if (key == "j_max") c.j_max = as_int();
    else if (key == "n_radial") c.n_radial = as_int();
    else if (key == "n_angular") c.n_angular = as_int();
    else if (key == "n_max_total") c.n_max_total = as_int();
    else if (key == "n_max_per_mode") c.n_max_per_mode = as_int();
    else if (key == "spinor_dim") c.spinor_dim = as_int();
    else if (key == "cluster_tol") c.cluster_tol = parse_double(key, v);
    else if (key == "fd_step") c.fd_step = parse_double(key, v);
    else if (key == "fd_hess_step") c.fd_hess_step = parse_double(key, v);
    else if (key == "quadrature_mode") {
        if (v == "deterministic") c.quadrature_mode = QuadratureMode::deterministic;
        else if (v == "monte-carlo" || v == "monte_carlo") c.quadrature_mode = QuadratureMode::monte_carlo;
        else throw ConfigError("config: quadrature_mode must be deterministic or monte-carlo");
    } else if (key == "seed") {
        const long long s = parse_int(key, v);
        if (s < 0) throw ConfigError("config: seed must be nonnegative");
        c.seed = static_cast<std::uint64_t>(s);
    } else if (key == "output_dir") c.output_dir = v;
    else if (key == "cache_dir") c.cache_dir = v;
    else if (key == "worker_count") c.worker_count = as_int();
    else if (key == "allow_deep") c.allow_deep = parse_bool(key, v);
    else throw ConfigError("config: unknown key '" + key + "'");
}

/// `key=value` as given to --set.
inline void apply_override(RunConfig& c, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + kv + "' is not key=value");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
}

inline RunConfig parse_config(std::istream& is, RunConfig c = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        set_config_value(c, line.substr(0, eq), line.substr(eq + 1));
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    return parse_config(in);
}

inline void validate_config(const RunConfig& c) {
    auto need = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(std::string("config: ") + msg);
    };
    need(c.kappa > 0, "kappa must be positive");
    need(!c.e.empty(), "e needs at least one value");
    for (double e : c.e) need(e >= 0, "e must be nonnegative");
    need(c.p_max > 0, "p_max must be positive");
    need(c.n_points >= 1, "n_points must be >= 1");
    need(c.j_max >= 0, "j_max must be >= 0");
    need(c.j_max <= RunConfig::kDeepGuard || c.allow_deep, "j_max above 12 needs allow_deep = true");
    need(c.n_radial >= 1 && c.n_angular >= 1, "n_radial and n_angular must be >= 1");
    need(c.n_max_total >= 0 && c.n_max_per_mode >= 0, "photon caps must be >= 0");
    need(c.spinor_dim == 2 || c.spinor_dim == 4, "spinor_dim must be 2 or 4");
    need(c.cluster_tol > 0, "cluster_tol must be positive");
    need(c.fd_step > 0 && c.fd_hess_step > 0, "finite-difference steps must be positive");
    need(c.worker_count >= 1, "worker_count must be >= 1");
    need(!c.output_dir.empty(), "output_dir must not be empty");
}

/// Canonical `key=value` lines of every setting that can change results, sorted by key.
inline std::string canonical_config(const RunConfig& c) {
    using detail::fmt_double;
    std::map<std::string, std::string> kv;
    kv["kappa"] = fmt_double(c.kappa);
    std::string es;
    for (std::size_t i = 0; i < c.e.size(); ++i) es += (i ? "," : "") + fmt_double(c.e[i]);
    kv["e"] = es;
    kv["p_max"] = fmt_double(c.p_max);
    kv["n_points"] = std::to_string(c.n_points);
    kv["j_max"] = std::to_string(c.j_max);
    kv["n_radial"] = std::to_string(c.n_radial);
    kv["n_angular"] = std::to_string(c.n_angular);
    kv["n_max_total"] = std::to_string(c.n_max_total);
    kv["n_max_per_mode"] = std::to_string(c.n_max_per_mode);
    kv["spinor_dim"] = std::to_string(c.spinor_dim);
    kv["cluster_tol"] = fmt_double(c.cluster_tol);
    kv["fd_step"] = fmt_double(c.fd_step);
    kv["fd_hess_step"] = fmt_double(c.fd_hess_step);
    const bool mc = c.quadrature_mode == QuadratureMode::monte_carlo;
    kv["quadrature_mode"] = mc ? "monte-carlo" : "deterministic";
    if (mc) kv["seed"] = std::to_string(c.seed);
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a(canonical_config(c)); }

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline FlowOptions flow_options(const RunConfig& c) {
    FlowOptions o;
    o.geometry = ScaleGeometry{c.kappa, c.j_max};
    o.resolution.n_radial = c.n_radial;
    o.resolution.n_angular = c.n_angular;
    o.resolution.mode = c.quadrature_mode;
    o.resolution.seed = c.seed;
    o.n_max_total = c.n_max_total;
    o.n_max_per_mode = c.n_max_per_mode;
    o.spinor_dim = c.spinor_dim;
    o.cluster_rel_tol = c.cluster_tol;
    o.fd_step = c.fd_step;
    o.fd_hess_step = c.fd_hess_step;
    return o;
}

inline SweepOptions sweep_options(const RunConfig& c, double e) {
    SweepOptions o;
    o.e = e;
    o.p_max = c.p_max;
    o.n_points = c.n_points;
    o.j_max = c.j_max;
    o.flow = flow_options(c);
    o.workers = c.worker_count;
    return o;
}

}  // namespace pfflow
