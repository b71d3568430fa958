// massshell.hpp - momentum sweeps, the mass-shell table, convergence-rate fits and shape audits

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "pfflow/fit.hpp"
#include "pfflow/iapt.hpp"

namespace pfflow {

/// Per-scale numbers kept from a flow (the vectors are dropped).
struct ScaleSummary {
    int j = 0;
    double rho = 0.0;
    Index fock_dim = 0;
    double E = 0.0;
    Vec3 grad = Vec3::Zero();
    Eigen::Matrix3d hess = Eigen::Matrix3d::Zero();
    Vec3 hess_eigenvalues = Vec3::Zero();
    double gap = kInf;
    int multiplicity = 0;
    double k1 = 0.0;
    double k05 = 0.0;
    double proj_increment = kNaN;
    double N_expect = 0.0;
    double ir_max_ratio = 0.0;
    MatrixXcd block_vectors;  // only when asked for
};

inline std::vector<ScaleSummary> summarize(const ScaleFlow& flow, bool keep_vectors = false) {
    std::vector<ScaleSummary> out;
    for (const auto& s : flow.scales) {
        ScaleSummary r;
        r.j = s.j;
        r.rho = s.rho;
        r.fock_dim = s.fock_dim;
        r.E = s.E;
        r.grad = s.derivatives.grad;
        r.hess = s.derivatives.hess;
        r.hess_eigenvalues = s.hess_eigenvalues;
        r.gap = s.gap;
        r.multiplicity = s.multiplicity;
        r.k1 = s.derivatives.k1;
        r.k05 = s.derivatives.k05;
        r.proj_increment = s.proj_increment;
        r.N_expect = s.N_expect;
        r.ir_max_ratio = s.ir.max_ratio;
        if (keep_vectors) r.block_vectors = s.block_vectors;
        out.push_back(r);
    }
    return out;
}

struct MassShellPoint {
    double pnorm = 0.0;
    Vec3 P = Vec3::Zero();
    std::vector<ScaleSummary> scales;
    bool complete = false;
    std::string failure;

    const ScaleSummary& deepest() const { return scales.back(); }
};

struct RateFit {
    std::string name;
    LineFit fit;
    double target = 1.0;
    double tolerance = 0.0;
    int j_from = 0;
    int j_to = 0;
    bool degenerate = true;  // no positive differences to fit
    bool pass = false;
};

struct RateFits {
    std::vector<RateFit> raw;
    std::vector<RateFit> richardson;
};

struct SweepOptions {
    double e = 0.05;
    double p_max = 1.0;
    int n_points = 6;
    int j_max = 5;
    FlowOptions flow;
    int workers = 1;
    int fit_from = 1;
    // Isotropy spot checks at the largest |P|: images of x^ under symmetries of the mode grid.
    std::vector<Vec3> spot_directions = {-Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY()};
    // replaces the plain flow per point (e.g. a cached one); must be thread-safe
    std::function<MassShellPoint(const Vec3&, const SweepOptions&)> evaluate;
};

struct MassShellTable {
    SweepOptions options;
    std::vector<MassShellPoint> points;
    double isotropy_residual = 0.0;
    std::vector<std::string> failures;
    RateFits fits;
    double min_hessian_eigenvalue = kInf;  // deepest scale, over the grid
};

/// Differences at or below this are roundoff and count as zero in the rate fits.
inline constexpr double kDifferenceFloor = 1e-13;

namespace detail {

/// Common slope of log y against log x over several points, each with its own intercept.
inline RateFit pooled_rate_fit(const std::string& name, const std::vector<std::vector<double>>& xs,
                               const std::vector<std::vector<double>>& ys, double target, double tol, int j_from, int j_to) {
    RateFit rf;
    rf.name = name;
    rf.target = target;
    rf.tolerance = tol;
    rf.j_from = j_from;
    rf.j_to = j_to;
    double sxx = 0, sxy = 0, syy = 0;
    int n = 0;
    for (std::size_t p = 0; p < xs.size(); ++p) {
        const auto& x = xs[p];
        const auto& y = ys[p];
        if (x.size() < 2) continue;
        if (std::any_of(y.begin(), y.end(), [](double v) { return !(v > kDifferenceFloor); })) continue;
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mx += std::log(x[i]);
            my += std::log(y[i]);
        }
        mx /= static_cast<double>(x.size());
        my /= static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double dx = std::log(x[i]) - mx, dy = std::log(y[i]) - my;
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        n += static_cast<int>(x.size());
    }
    if (n == 0 || sxx == 0.0) return rf;
    rf.degenerate = false;
    rf.fit.slope = sxy / sxx;
    rf.fit.r_squared = syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
    rf.fit.points = n;
    rf.pass = std::abs(rf.fit.slope - target) <= tol;
    return rf;
}

inline double sym_norm(const Eigen::Matrix3d& m) {
    return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(0.5 * (m + m.transpose())).eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Rate fits of |X_j - X_ref| against rho_j (E, dE) and rho_j^{1/2} (d2E), pooled over complete grid points.
/// Raw: X_ref = X at the deepest scale. Richardson: X_ref = 2 X_deep - X_{deep-1}.
inline RateFits rate_fits(const std::vector<MassShellPoint>& points, int fit_from) {
    struct Spec {
        const char* name;
        double target, tol;
        bool half;
    };
    const Spec specs[] = {{"E", 1.0, 0.15, false}, {"dE", 1.0, 0.2, false}, {"d2E", 1.0, 0.3, true}};
    RateFits out;
    for (int rich = 0; rich < 2; ++rich) {
        for (int q = 0; q < 3; ++q) {
            std::vector<std::vector<double>> xs, ys;
            int j_to = 0;
            for (const auto& p : points) {
                if (!p.complete || p.scales.size() < 3) continue;
                const auto& sc = p.scales;
                const std::size_t d = sc.size() - 1;
                auto diff = [&](std::size_t j) {
                    const auto& a = sc[j];
                    const auto& b = sc[d];
                    const auto& c = sc[d - 1];
                    if (q == 0) return std::abs(a.E - (rich ? 2.0 * b.E - c.E : b.E));
                    if (q == 1) return (a.grad - (rich ? Vec3(2.0 * b.grad - c.grad) : b.grad)).norm();
                    const Eigen::Matrix3d ref = rich ? Eigen::Matrix3d(2.0 * b.hess - c.hess) : b.hess;
                    return detail::sym_norm(a.hess - ref);
                };
                std::vector<double> x, y;
                const std::size_t last = rich ? d : d - 1;
                for (std::size_t j = static_cast<std::size_t>(std::max(fit_from, 0)); j <= last; ++j) {
                    x.push_back(specs[q].half ? std::sqrt(sc[j].rho) : sc[j].rho);
                    y.push_back(diff(j));
                }
                j_to = static_cast<int>(last);
                xs.push_back(std::move(x));
                ys.push_back(std::move(y));
            }
            auto f = detail::pooled_rate_fit(specs[q].name, xs, ys, specs[q].target, specs[q].tol, fit_from, j_to);
            (rich ? out.richardson : out.raw).push_back(f);
        }
    }
    return out;
}

inline MassShellPoint mass_shell_point(const Vec3& P, const SweepOptions& opt) {
    MassShellPoint pt;
    pt.P = P;
    pt.pnorm = P.norm();
    try {
        const ScaleFlow flow = run_flow(P, opt.e, opt.j_max, opt.flow);
        pt.scales = summarize(flow);
        pt.complete = flow.complete;
        pt.failure = flow.failure;
    } catch (const Error& err) {
        pt.failure = err.what();
    }
    return pt;
}

/// Grid |P| in [0, p_max] along x^, one flow per point, dispatched to `workers` threads.
inline MassShellTable sweep(const SweepOptions& opt) {
    if (opt.n_points < 1) throw InvalidArgument("sweep: n_points must be >= 1");
    if (!(opt.p_max > 0.0)) throw InvalidArgument("sweep: p_max must be positive");
    if (opt.workers < 1) throw InvalidArgument("sweep: workers must be >= 1");
    MassShellTable t;
    t.options = opt;
    const int n = opt.n_points;
    std::vector<Vec3> jobs;
    for (int i = 0; i < n; ++i) jobs.emplace_back(n == 1 ? opt.p_max : opt.p_max * i / (n - 1), 0.0, 0.0);
    const Vec3 p_spot = jobs.back();
    for (const auto& d : opt.spot_directions) jobs.push_back(p_spot.norm() * d.normalized());

    (void)weyl_convention();  // calibrate once before the workers start
    std::vector<MassShellPoint> results(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
            try {
                results[i] = opt.evaluate ? opt.evaluate(jobs[i], opt) : mass_shell_point(jobs[i], opt);
            } catch (...) {
                const std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                next = jobs.size();
            }
        }
    };
    const int nthreads = std::min<int>(opt.workers, static_cast<int>(jobs.size()));
    std::vector<std::thread> pool;
    for (int w = 1; w < nthreads; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);

    t.points.assign(results.begin(), results.begin() + n);
    for (const auto& p : results)
        if (!p.complete) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "P = (%.6g, %.6g, %.6g): ", p.P.x(), p.P.y(), p.P.z());
            t.failures.push_back(buf + p.failure);
        }
    const auto& ref = t.points.back();
    for (std::size_t s = n; s < results.size(); ++s) {
        const auto& spot = results[s];
        const std::size_t m = std::min(spot.scales.size(), ref.scales.size());
        for (std::size_t j = 0; j < m; ++j)
            t.isotropy_residual = std::max(t.isotropy_residual, std::abs(spot.scales[j].E - ref.scales[j].E));
    }
    for (const auto& p : t.points)
        if (p.complete) t.min_hessian_eigenvalue = std::min(t.min_hessian_eigenvalue, p.deepest().hess_eigenvalues.minCoeff());
    t.fits = rate_fits(t.points, opt.fit_from);
    return t;
}

// ---------------------------------------------------------------------------------------------
// Shape audits on the deepest scale.

namespace detail {
inline void deepest_curve(const MassShellTable& t, std::vector<double>& p, std::vector<double>& E) {
    for (const auto& pt : t.points)
        if (pt.complete) {
            p.push_back(pt.pnorm);
            E.push_back(pt.deepest().E);
        }
}
}  // namespace detail

struct LipschitzReport {
    double q_fit = kNaN;  // largest q with E(P+h) - E(P) >= -(1-q)|h| on all ordered pairs
    int pairs = 0;
    bool admissible = false;  // q_fit > 0
};

/// Ordered pairs of grid points, visited forward or in reverse.
inline LipschitzReport lipschitz_audit(const MassShellTable& t, bool reversed = false) {
    std::vector<double> p, E;
    detail::deepest_curve(t, p, E);
    if (p.size() < 3) throw InvalidArgument("lipschitz_audit: need at least 3 complete grid points");
    if (reversed) {
        std::reverse(p.begin(), p.end());
        std::reverse(E.begin(), E.end());
    }
    LipschitzReport r;
    r.q_fit = kInf;
    for (std::size_t a = 0; a < p.size(); ++a)
        for (std::size_t b = 0; b < p.size(); ++b) {
            if (a == b) continue;
            const double h = std::abs(p[b] - p[a]);
            r.q_fit = std::min(r.q_fit, 1.0 + (E[b] - E[a]) / h);
            ++r.pairs;
        }
    r.admissible = r.q_fit > 0.0;
    return r;
}

struct ShapeReport {
    bool convex = false;          // all second divided differences of E positive
    double min_second_difference = kInf;
    bool increasing = false;      // E strictly increasing in |P|
    bool minimum_at_zero = false;
    double grad_at_zero = kNaN;   // |grad E(0)| at the deepest scale, NaN if 0 is not on the grid
    double envelope_C = kNaN;     // smallest C with |E/E_free - 1| <= C e
    std::vector<double> max_increment;  // max over grid of |E_{j+1} - E_j|, per j
    std::vector<double> increment_ratio;
};

inline ShapeReport shape_report(const MassShellTable& t) {
    ShapeReport r;
    std::vector<double> p, E;
    detail::deepest_curve(t, p, E);
    if (p.empty()) return r;
    r.increasing = true;
    for (std::size_t i = 1; i < p.size(); ++i) r.increasing = r.increasing && E[i] > E[i - 1];
    r.minimum_at_zero = p.front() == 0.0 && *std::min_element(E.begin(), E.end()) == E.front();
    r.convex = p.size() >= 3;
    for (std::size_t i = 1; i + 1 < p.size(); ++i) {
        const double d2 = ((E[i + 1] - E[i]) / (p[i + 1] - p[i]) - (E[i] - E[i - 1]) / (p[i] - p[i - 1])) /
                          (0.5 * (p[i + 1] - p[i - 1]));
        r.min_second_difference = std::min(r.min_second_difference, d2);
        r.convex = r.convex && d2 > 0.0;
    }
    for (const auto& pt : t.points)
        if (pt.complete && pt.pnorm == 0.0) r.grad_at_zero = pt.deepest().grad.norm();
    double c = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) c = std::max(c, std::abs(E[i] / std::sqrt(p[i] * p[i] + 1.0) - 1.0));
    r.envelope_C = t.options.e > 0.0 ? c / t.options.e : (c == 0.0 ? 0.0 : kInf);

    std::size_t depth = 0;
    for (const auto& pt : t.points)
        if (pt.complete) depth = depth == 0 ? pt.scales.size() : std::min(depth, pt.scales.size());
    for (std::size_t j = 0; j + 1 < depth; ++j) {
        double m = 0.0;
        for (const auto& pt : t.points)
            if (pt.complete) m = std::max(m, std::abs(pt.scales[j + 1].E - pt.scales[j].E));
        r.max_increment.push_back(m);
        if (j > 0) r.increment_ratio.push_back(r.max_increment[j - 1] > 0 ? m / r.max_increment[j - 1] : kNaN);
    }
    return r;
}

// massshell.csv: pnorm,j,E,dE,d2E_min_eig,gap,multiplicity
inline void write_massshell_csv(std::ostream& os, const MassShellTable& t) {
    os << "pnorm,j,E,dE,d2E_min_eig,gap,multiplicity\n";
    char buf[256];
    for (const auto& p : t.points)
        for (const auto& s : p.scales) {
            std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g,%.17g,%d\n", p.pnorm, s.j, s.E, s.grad.norm(),
                          s.hess_eigenvalues.minCoeff(), s.gap, s.multiplicity);
            os << buf;
        }
}

}  // namespace pfflow
