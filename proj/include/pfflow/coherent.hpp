// coherent.hpp - continuum norms and overlaps of coherent factors, without Fock truncation

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <vector>

#include "pfflow/error.hpp"
#include "pfflow/fit.hpp"
#include "pfflow/linalg.hpp"
#include "pfflow/quadrature.hpp"
#include "pfflow/scales.hpp"

namespace pfflow {

struct SphereQuadrature {
    double tol = 1e-13;
    int max_depth = 30;
};

namespace detail {

/// int_{S^2} F(khat) dOmega with nested adaptive Gauss-Kronrod in (u = cos theta, phi).
template <class F>
double sphere_integral(F&& fn, const SphereQuadrature& q) {
    auto inner = [&](double u) {
        const double st = std::sqrt(std::max(0.0, 1.0 - u * u));
        auto ring = [&](double phi) { return fn(Vec3(st * std::cos(phi), st * std::sin(phi), u)); };
        return quad::integrate(ring, 0.0, 2.0 * std::numbers::pi, q.tol, q.max_depth);
    };
    return quad::integrate(inner, -1.0, 1.0, q.tol, q.max_depth);
}

inline void check_gradient(const Vec3& g) {
    if (!(g.norm() < 1.0)) throw RegimeError("coherent: |grad E| >= 1");
}

/// sum over polarizations of |eps . v|^2 = |v|^2 - (khat . v)^2
inline double transverse_sq(const Vec3& khat, const Vec3& v) { return v.squaredNorm() - std::pow(khat.dot(v), 2); }

}  // namespace detail

/// int_{rho_{j+1}}^{rho_j} k^2 dk / k^3 (the coupling cutoff clips at kappa).
inline double radial_log_measure(const ScaleGeometry& g, int j) {
    const double hi = std::min(rho(g, j), g.kappa), lo = rho(g, j + 1);
    if (hi <= lo) return 0.0;
    return quad::integrate([](double k) { return 1.0 / k; }, lo, hi, 1e-15);
}

/// Angular part of |f|^2 for one gradient: int dOmega sum_lambda |eps . g|^2 / (1 - khat . g)^2.
inline double factor_angular(const Vec3& grad, const SphereQuadrature& q = {}) {
    detail::check_gradient(grad);
    if (grad.isZero(0.0)) return 0.0;
    return detail::sphere_integral(
        [&](const Vec3& n) { return detail::transverse_sq(n, grad) / std::pow(1.0 - n.dot(grad), 2); }, q);
}

/// ||f_j||^2 = sum_lambda int_{annulus j} |G . grad|^2 / (|k| - k . grad)^2 d^3k.
/// The integrand is homogeneous of degree -3 in k, so the value does not depend on j.
inline double factor_norm_sq(const ScaleGeometry& g, int j, const Vec3& grad, const SphereQuadrature& q = {}) {
    return std::pow(kCouplingPrefactor, 2) * radial_log_measure(g, j) * factor_angular(grad, q);
}

/// ||f_j(P) - f_j(Q)||^2 for the gradient pair.
inline double difference_norm_sq(const ScaleGeometry& g, int j, const Vec3& grad_p, const Vec3& grad_q,
                                 const SphereQuadrature& q = {}) {
    detail::check_gradient(grad_p);
    detail::check_gradient(grad_q);
    if (grad_p == grad_q) return 0.0;
    const double ang = detail::sphere_integral(
        [&](const Vec3& n) {
            const Vec3 v = grad_p / (1.0 - n.dot(grad_p)) - grad_q / (1.0 - n.dot(grad_q));
            return detail::transverse_sq(n, v);
        },
        q);
    return std::pow(kCouplingPrefactor, 2) * radial_log_measure(g, j) * ang;
}

/// |alpha| = exp(-c_exp e^2 ||h||^2).
inline double overlap_from_norm(double h_norm_sq, double e, double c_exp) {
    return std::exp(-c_exp * e * e * h_norm_sq);
}

struct PairOverlap {
    double h_norm_sq = 0.0;
    double alpha_abs = 1.0;
    double exponent = 0.0;  // c_exp e^2 ||h||^2
};

inline PairOverlap pair_overlap(const ScaleGeometry& g, int j, const Vec3& grad_p, const Vec3& grad_q, double e,
                                double c_exp, const SphereQuadrature& q = {}) {
    PairOverlap o;
    o.h_norm_sq = difference_norm_sq(g, j, grad_p, grad_q, q);
    o.exponent = c_exp * e * e * o.h_norm_sq;
    o.alpha_abs = std::exp(-o.exponent);
    return o;
}

// ---------------------------------------------------------------------------------------------

struct OverlapRow {
    int j = 0;
    double norm_fP = 0.0;
    double norm_fQ = 0.0;
    double norm_h = 0.0;
    double alpha_abs = 1.0;
    double partial_sum = 0.0;      // sum_{i <= j} ||h_i||^2
    double partial_product = 1.0;  // prod_{i <= j} |alpha_i|
};

struct OverlapLedger {
    Vec3 P = Vec3::Zero();
    Vec3 Q = Vec3::Zero();
    double e = 0.0;
    double c_exp = 0.0;
    std::vector<OverlapRow> rows;
    // Beyond the last gradient the per-scale terms are constant (deepest gradient as proxy);
    // crossing_J is the first J with partial product below `threshold`, or -1 if never.
    double threshold = 1e-3;
    long long crossing_J = -1;
};

/// Per-scale ledger from gradient sequences grad_p[j], grad_q[j] (j = 0 .. n-1).
inline OverlapLedger overlap_ledger(const ScaleGeometry& g, const Vec3& P, const Vec3& Q, const std::vector<Vec3>& grad_p,
                                   const std::vector<Vec3>& grad_q, double e, double c_exp, double threshold = 1e-3,
                                   const SphereQuadrature& q = {}) {
    if (grad_p.empty() || grad_p.size() != grad_q.size()) throw InvalidArgument("overlap_ledger: gradient lists differ");
    OverlapLedger led;
    led.P = P;
    led.Q = Q;
    led.e = e;
    led.c_exp = c_exp;
    led.threshold = threshold;
    double sum = 0.0, log_prod = 0.0;
    const double log_thr = std::log(threshold);
    for (std::size_t j = 0; j < grad_p.size(); ++j) {
        OverlapRow r;
        r.j = static_cast<int>(j);
        r.norm_fP = factor_norm_sq(g, r.j, grad_p[j], q);
        r.norm_fQ = factor_norm_sq(g, r.j, grad_q[j], q);
        const auto o = pair_overlap(g, r.j, grad_p[j], grad_q[j], e, c_exp, q);
        r.norm_h = o.h_norm_sq;
        r.alpha_abs = o.alpha_abs;
        sum += o.h_norm_sq;
        log_prod -= o.exponent;
        r.partial_sum = sum;
        r.partial_product = std::exp(log_prod);
        if (led.crossing_J < 0 && log_prod < log_thr) led.crossing_J = r.j;
        led.rows.push_back(r);
    }
    if (led.crossing_J < 0) {
        const double tail = led.rows.back().norm_h * c_exp * e * e;
        if (tail > 0.0) {
            const double need = (log_prod - log_thr) / tail;
            led.crossing_J = static_cast<long long>(grad_p.size() - 1) + static_cast<long long>(std::floor(need)) + 1;
        }
    }
    return led;
}

/// log of the partial product at scale J, continuing the ledger with its last row.
inline double log_partial_product(const OverlapLedger& led, long long J) {
    if (led.rows.empty()) return 0.0;
    const auto last = static_cast<long long>(led.rows.size()) - 1;
    if (J <= last) return std::log(led.rows[static_cast<std::size_t>(J)].partial_product);
    return std::log(led.rows.back().partial_product) - static_cast<double>(J - last) * led.rows.back().norm_h * led.c_exp * led.e * led.e;
}

inline void write_overlap_csv(std::ostream& os, const OverlapLedger& led) {
    os << "j,norm_fP,norm_fQ,norm_h,alpha_abs,partial_sum,partial_product\n";
    char buf[256];
    for (const auto& r : led.rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.j, r.norm_fP, r.norm_fQ, r.norm_h,
                      r.alpha_abs, r.partial_sum, r.partial_product);
        os << buf;
    }
}

// ---------------------------------------------------------------------------------------------

struct EquivalenceReport {
    std::vector<double> raw;         // ||f_j(grad_j)||^2
    std::vector<double> difference;  // ||f_j(grad_j) - f_j(grad_deep)||^2
    std::vector<double> raw_partial;
    std::vector<double> difference_partial;
    LineFit raw_fit;                 // raw partial sums against J
    double raw_growth = 0.0;         // last raw partial sum / first
    double difference_tail_ratio = 0.0;  // last increment / total of difference partial sums
    int deep_scale = 0;
};

/// Factors built from per-scale gradients against factors built from the deepest gradient.
inline EquivalenceReport reference_vector_equivalence(const ScaleGeometry& g, const std::vector<Vec3>& grads,
                                                      const SphereQuadrature& q = {}) {
    if (grads.size() < 2) throw InvalidArgument("reference_vector_equivalence: need at least two scales");
    EquivalenceReport r;
    r.deep_scale = static_cast<int>(grads.size()) - 1;
    const Vec3& deep = grads.back();
    double s1 = 0.0, s2 = 0.0;
    std::vector<double> js;
    for (std::size_t j = 0; j < grads.size(); ++j) {
        const double a = factor_norm_sq(g, static_cast<int>(j), grads[j], q);
        const double b = difference_norm_sq(g, static_cast<int>(j), grads[j], deep, q);
        r.raw.push_back(a);
        r.difference.push_back(b);
        s1 += a;
        s2 += b;
        r.raw_partial.push_back(s1);
        r.difference_partial.push_back(s2);
        js.push_back(static_cast<double>(j));
    }
    r.raw_fit = fit_line(js, r.raw_partial);
    r.raw_growth = r.raw_partial.front() > 0 ? r.raw_partial.back() / r.raw_partial.front() : 0.0;
    const std::size_t n = r.difference.size();
    r.difference_tail_ratio = s2 > 0 ? r.difference[n - 2] / s2 : 0.0;
    return r;
}

}  // namespace pfflow
