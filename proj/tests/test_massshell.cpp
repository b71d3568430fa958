#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pfflow/massshell.hpp"

using namespace pfflow;

namespace {

SweepOptions small_sweep(double e, int n_points, int j_max) {
    SweepOptions o;
    o.e = e;
    o.p_max = 1.0;
    o.n_points = n_points;
    o.j_max = j_max;
    o.flow.n_max_total = 2;
    return o;
}

const MassShellTable& weak_table() {
    static const MassShellTable t = sweep(small_sweep(0.05, 5, 4));
    return t;
}

const MassShellTable& free_table() {
    static const MassShellTable t = [] {
        auto o = small_sweep(0.0, 4, 3);
        o.p_max = 1.5;
        return sweep(o);
    }();
    return t;
}

}  // namespace

TEST(Sweep, FreeTableIsExact) {
    const auto& t = free_table();
    ASSERT_EQ(t.points.size(), 4u);
    EXPECT_TRUE(t.failures.empty());
    for (const auto& p : t.points) {
        ASSERT_TRUE(p.complete);
        ASSERT_EQ(p.scales.size(), 4u);
        for (const auto& s : p.scales) {
            EXPECT_NEAR(s.E, std::sqrt(p.pnorm * p.pnorm + 1.0), 1e-12);
            EXPECT_EQ(s.multiplicity, 4);
        }
    }
    for (const auto& f : t.fits.raw) EXPECT_TRUE(f.degenerate) << f.name;
    for (const auto& f : t.fits.richardson) EXPECT_TRUE(f.degenerate) << f.name;
    EXPECT_EQ(shape_report(t).envelope_C, 0.0);
}

TEST(Sweep, WeakCouplingShape) {
    const auto& t = weak_table();
    EXPECT_TRUE(t.failures.empty());
    EXPECT_LT(t.isotropy_residual, 1e-8);
    EXPECT_GT(t.min_hessian_eigenvalue, 0.0);
    const auto r = shape_report(t);
    EXPECT_TRUE(r.convex);
    EXPECT_TRUE(r.increasing);
    EXPECT_TRUE(r.minimum_at_zero);
    EXPECT_LT(r.grad_at_zero, 1e-8);
    EXPECT_GT(r.envelope_C, 0.0);
    EXPECT_LT(r.envelope_C, 1.0);
    EXPECT_EQ(r.max_increment.size(), 4u);
}

TEST(Sweep, WorkerCountDoesNotChangeOutput) {
    auto o = small_sweep(0.05, 3, 2);
    std::ostringstream a, b;
    write_massshell_csv(a, sweep(o));
    o.workers = 3;
    write_massshell_csv(b, sweep(o));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "pnorm,j,E,dE,d2E_min_eig,gap,multiplicity");
}

TEST(Sweep, RejectsBadOptions) {
    auto o = small_sweep(0.05, 0, 2);
    EXPECT_THROW(sweep(o), InvalidArgument);
    o.n_points = 2;
    o.workers = 0;
    EXPECT_THROW(sweep(o), InvalidArgument);
}

TEST(Sweep, FailedPointIsRecorded) {
    auto o = small_sweep(0.05, 2, 2);
    o.flow.cluster_rel_tol = 0.3;
    const auto t = sweep(o);
    EXPECT_FALSE(t.failures.empty());
    EXPECT_EQ(t.points.size(), 2u);
}

TEST(Lipschitz, FreeBoundAndReversal) {
    const auto& t = free_table();
    const auto fwd = lipschitz_audit(t), rev = lipschitz_audit(t, true);
    EXPECT_EQ(fwd.q_fit, rev.q_fit);
    EXPECT_EQ(fwd.pairs, 12);
    const double pm = 1.5;
    EXPECT_GE(fwd.q_fit, 1.0 - pm / std::sqrt(pm * pm + 1.0));
    EXPECT_TRUE(fwd.admissible);
}

TEST(Lipschitz, WeakCouplingNearFree) {
    const auto& t = weak_table();
    const auto q = lipschitz_audit(t);
    EXPECT_EQ(q.q_fit, lipschitz_audit(t, true).q_fit);
    // free value on the same grid: the steepest secant is the last one
    const double q0 = 1.0 - (std::sqrt(2.0) - std::sqrt(1.0 + 0.75 * 0.75)) / 0.25;
    EXPECT_GT(q.q_fit, 0.0);
    EXPECT_NEAR(q.q_fit, q0, 0.2 * q0);
}

TEST(Lipschitz, NeedsThreePoints) {
    MassShellTable t;
    EXPECT_THROW(lipschitz_audit(t), InvalidArgument);
}

TEST(RateFits, RichardsonIsExactForLinearRates) {
    std::vector<MassShellPoint> pts(2);
    for (int p = 0; p < 2; ++p) {
        pts[p].complete = true;
        for (int j = 0; j <= 6; ++j) {
            ScaleSummary s;
            s.j = j;
            s.rho = std::ldexp(1.0, -j);
            s.E = 1.0 + (p + 1) * s.rho;
            s.grad = Vec3(0.3 * s.rho, 0, 0);
            s.hess = Eigen::Matrix3d::Identity() * (1.0 + std::sqrt(s.rho));
            pts[p].scales.push_back(s);
        }
    }
    const auto f = rate_fits(pts, 0);
    ASSERT_EQ(f.richardson.size(), 3u);
    EXPECT_NEAR(f.richardson[0].fit.slope, 1.0, 1e-10);
    EXPECT_NEAR(f.richardson[1].fit.slope, 1.0, 1e-10);
    EXPECT_TRUE(f.richardson[0].pass);
    EXPECT_EQ(f.richardson[0].fit.points, 14);
    EXPECT_EQ(f.raw[0].name, "E");
    EXPECT_EQ(f.raw[0].j_to, 5);
    EXPECT_FALSE(f.raw[2].degenerate);
    // raw references bias the slope upward near the deep end, but not past the window
    EXPECT_GT(f.raw[0].fit.slope, 1.0);
    EXPECT_LT(f.raw[0].fit.slope, 1.3);
}
