// scales.hpp - infrared scale geometry, annulus quadrature grids, coupling function

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pfflow/error.hpp"
#include "pfflow/linalg.hpp"

namespace pfflow {

/// (2 pi)^{-3/2}
inline const double kCouplingPrefactor = std::pow(2.0 * std::numbers::pi, -1.5);

struct ScaleGeometry {
    double kappa = 1.0;  // UV cutoff radius
    int j_max = 5;

    static constexpr double base = 0.5;
};

/// rho_j = kappa 2^{-j}; ldexp keeps it exact.
inline double rho(const ScaleGeometry& g, int j) {
    if (j < 0) throw InvalidArgument("rho: negative scale index");
    return std::ldexp(g.kappa, -j);
}

enum class QuadratureMode { deterministic, monte_carlo };

struct Resolution {
    int n_radial = 1;
    int n_angular = 2;
    QuadratureMode mode = QuadratureMode::deterministic;
    std::uint64_t seed = 0;
};

/// One photon mode: momentum k, polarization label, quadrature weight (volume).
struct Mode {
    Vec3 k = Vec3::Zero();
    int lambda = 0;
    double weight = 0.0;
    int annulus = 0;
    Vec3 eps = Vec3::Zero();  // polarization vector eps_lambda(k)

    double omega() const { return k.norm(); }
};

struct ModeGrid {
    std::vector<Mode> modes;

    std::size_t size() const { return modes.size(); }
    bool empty() const { return modes.empty(); }
    const Mode& operator[](std::size_t i) const { return modes[i]; }

    void append(const ModeGrid& other) { modes.insert(modes.end(), other.modes.begin(), other.modes.end()); }

    /// Number of leading modes that lie in annuli < j (grids are stored outermost annulus first).
    std::size_t count_below(int j) const {
        std::size_t n = 0;
        for (const auto& m : modes)
            if (m.annulus < j) ++n;
        return n;
    }
};

struct Polarizations {
    Vec3 eps0;
    Vec3 eps1;
};

/// Fixed gauge: eps0 = z x k^ normalized (x^ when k is along z), eps1 = k^ x eps0.
inline Polarizations polarizations(const Vec3& k) {
    const double kn = k.norm();
    if (kn == 0.0) throw InvalidArgument("polarizations: k = 0");
    const Vec3 khat = k / kn;
    Vec3 e0 = Vec3::UnitZ().cross(khat);
    if (e0.norm() < 1e-14)
        e0 = Vec3::UnitX();
    else
        e0.normalize();
    return {e0, khat.cross(e0)};
}

struct CouplingSample {
    Vec3 G;
    Vec3 eps0;
    Vec3 eps1;
};

/// G(k, lambda) = (2 pi)^{-3/2} 1_{|k|<kappa} |k|^{-1/2} eps_lambda(k).
inline CouplingSample coupling(const Vec3& k, int lambda, double kappa) {
    if (k.norm() == 0.0) throw InvalidArgument("coupling: k = 0 is never sampled");
    if (lambda != 0 && lambda != 1) throw InvalidArgument("coupling: polarization must be 0 or 1");
    const auto pol = polarizations(k);
    const double kn = k.norm();
    const double amp = kn < kappa ? kCouplingPrefactor / std::sqrt(kn) : 0.0;
    return {amp * (lambda == 0 ? pol.eps0 : pol.eps1), pol.eps0, pol.eps1};
}

inline Vec3 coupling_vector(const Mode& m, double kappa) { return coupling(m.k, m.lambda, kappa).G; }

/// Unit directions with equal solid-angle share 4 pi / n.
/// n = 1, 2, 6, 8 use symmetric sets (pole, poles, octahedron, cube); otherwise a Fibonacci lattice.
inline std::vector<Vec3> angular_nodes(int n) {
    if (n < 1) throw InvalidArgument("angular_nodes: n_angular must be >= 1");
    std::vector<Vec3> dirs;
    switch (n) {
        case 1:
            dirs = {Vec3::UnitZ()};
            break;
        case 2:
            dirs = {Vec3::UnitZ(), -Vec3::UnitZ()};
            break;
        case 6:
            dirs = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
            break;
        case 8:
            for (int sx : {1, -1})
                for (int sy : {1, -1})
                    for (int sz : {1, -1}) dirs.push_back(Vec3(sx, sy, sz).normalized());
            break;
        default: {
            const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
            for (int i = 0; i < n; ++i) {
                const double z = 1.0 - (2.0 * i + 1.0) / n;
                const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
                const double phi = golden * i;
                dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
            }
        }
    }
    return dirs;
}

/// Modes of annulus j: rho_{j+1} <= |k| < rho_j.
/// Deterministic mode: n_radial volume cells, each with its node at the radius where
/// the cell average of 1/|k| is attained, times equal-area directions, times 2 polarizations.
/// Weights are exact cell volumes.
inline ModeGrid build_annulus_grid(const ScaleGeometry& geometry, int j, const Resolution& res) {
    if (res.n_radial < 1 || res.n_angular < 1)
        throw InvalidArgument("build_annulus_grid: n_radial and n_angular must be >= 1");
    const double r_out = rho(geometry, j);
    const double r_in = rho(geometry, j + 1);
    ModeGrid grid;
    auto push = [&](const Vec3& k, double w) {
        const auto pol = polarizations(k);
        for (int lambda = 0; lambda < 2; ++lambda)
            grid.modes.push_back({k, lambda, w, j, lambda == 0 ? pol.eps0 : pol.eps1});
    };
    if (res.mode == QuadratureMode::monte_carlo) {
        std::mt19937_64 rng(res.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(j + 1)));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const int count = res.n_radial * res.n_angular;
        const double volume = 4.0 * std::numbers::pi / 3.0 * (std::pow(r_out, 3) - std::pow(r_in, 3));
        for (int s = 0; s < count; ++s) {
            Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
            dir.normalize();
            const double u = uni(rng);
            double r = std::cbrt(std::pow(r_in, 3) + u * (std::pow(r_out, 3) - std::pow(r_in, 3)));
            if (r >= r_out) r = std::nextafter(r_out, 0.0);
            push(r * dir, volume / count);
        }
        return grid;
    }
    const auto dirs = angular_nodes(res.n_angular);
    const double dr = (r_out - r_in) / res.n_radial;
    for (int i = 0; i < res.n_radial; ++i) {
        const double a = r_in + i * dr;
        const double b = (i + 1 == res.n_radial) ? r_out : a + dr;
        const double cell = (b * b * b - a * a * a) / 3.0;
        const double r_node = cell / (0.5 * (b * b - a * a));
        const double w = 4.0 * std::numbers::pi * cell / res.n_angular;
        for (const auto& d : dirs) push(r_node * d, w);
    }
    return grid;
}

/// Concatenation of annuli j_lo, ..., j_hi - 1 (outermost first).
inline ModeGrid build_scale_grid(const ScaleGeometry& geometry, int j_lo, int j_hi, const Resolution& res) {
    ModeGrid grid;
    for (int j = j_lo; j < j_hi; ++j) grid.append(build_annulus_grid(geometry, j, res));
    return grid;
}

/// Closed-form shell volume of annulus j.
inline double annulus_volume(const ScaleGeometry& g, int j) {
    return 4.0 * std::numbers::pi / 3.0 * (std::pow(rho(g, j), 3) - std::pow(rho(g, j + 1), 3));
}

/// Sum of w |G|^2 over the grid.
inline double coupling_mass(const ModeGrid& grid, double kappa) {
    double s = 0.0;
    for (const auto& m : grid.modes) s += m.weight * coupling_vector(m, kappa).squaredNorm();
    return s;
}

/// sum_lambda int_{annulus j} |G|^2 d^3k = 2 (2 pi)^{-3} 2 pi (rho_j^2 - rho_{j+1}^2) = (rho_j^2 - rho_{j+1}^2) / (2 pi^2).
inline double coupling_mass_exact(const ScaleGeometry& g, int j) {
    const double a = rho(g, j), b = rho(g, j + 1);
    return (a * a - b * b) / (2.0 * std::numbers::pi * std::numbers::pi);
}

/// Sum of the weights of one polarization in annulus j (the k-space volume it covers).
inline double annulus_weight_sum(const ModeGrid& grid, int j, int lambda = 0) {
    double s = 0.0;
    for (const auto& m : grid.modes)
        if (m.annulus == j && m.lambda == lambda) s += m.weight;
    return s;
}

// CSV columns: annulus_j,kx,ky,kz,lambda,weight
inline void write_grid_csv(std::ostream& os, const ModeGrid& grid) {
    os << "annulus_j,kx,ky,kz,lambda,weight\n";
    os << std::setprecision(17);
    for (const auto& m : grid.modes)
        os << m.annulus << ',' << m.k.x() << ',' << m.k.y() << ',' << m.k.z() << ',' << m.lambda << ','
           << m.weight << '\n';
}

inline ModeGrid read_grid_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("annulus_j,", 0) != 0)
        throw InvalidArgument("read_grid_csv: missing header");
    ModeGrid grid;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        Mode m;
        double kx, ky, kz;
        if (!(ss >> m.annulus >> kx >> ky >> kz >> m.lambda >> m.weight))
            throw InvalidArgument("read_grid_csv: malformed row");
        m.k = Vec3(kx, ky, kz);
        const auto pol = polarizations(m.k);
        m.eps = m.lambda == 0 ? pol.eps0 : pol.eps1;
        grid.modes.push_back(m);
    }
    return grid;
}

}  // namespace pfflow
