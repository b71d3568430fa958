#include <gtest/gtest.h>

#include <random>

#include "pfflow/hamiltonian.hpp"
#include "pfflow/spectral.hpp"

using namespace pfflow;

namespace {

const ScaleGeometry kGeo{1.0, 6};

FockBasis basis_for(int j, int cap = 2, Resolution res = {}) { return scale_basis(kGeo, j, res, cap, 2); }

double max_abs(const MatrixXcd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

ModeGrid custom_grid(double kmin) {
    ModeGrid g;
    for (double s : {1.0, -1.0}) {
        const Vec3 k(0, 0, s * kmin);
        const auto p = polarizations(k);
        g.modes.push_back({k, 0, 0.1, 0, p.eps0});
        g.modes.push_back({k, 1, 0.1, 0, p.eps1});
    }
    const Vec3 k2(0.8, 0, 0);
    const auto p2 = polarizations(k2);
    g.modes.push_back({k2, 0, 0.1, 0, p2.eps0});
    g.modes.push_back({k2, 1, 0.1, 0, p2.eps1});
    return g;
}

}  // namespace

TEST(Dirac, CliffordAndCStarEquality) {
    EXPECT_EQ(clifford_defect(), 0.0);
    const auto& d = DiracMatrices::get();
    for (const auto& a : d.alpha) {
        EXPECT_EQ(hermiticity_defect(a), 0.0);
        EXPECT_EQ(max_abs(a * a - MatrixXcd::Identity(4, 4)), 0.0);
    }
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
        const Vec3 v(g(rng), g(rng), g(rng));
        EXPECT_NEAR(op_norm(d.alpha_dot(v)), v.norm(), 1e-12);
    }
}

TEST(Dirac, FreeVacuumBlockAndSpectralGap) {
    const Vec3 P(0.3, -0.2, 0.5);
    const FockBasis b = basis_for(2);
    const MatrixXcd d0 = assemble_dirac(P, b, 0.0, 1.0, 2).to_dense();
    const Index n = b.size();
    MatrixXcd block(4, 4);
    for (int s = 0; s < 4; ++s)
        for (int t = 0; t < 4; ++t) block(s, t) = d0(s * n, t * n);
    const auto ev = eigh(block).values;
    const double e0 = std::sqrt(P.squaredNorm() + 1.0);
    EXPECT_NEAR(ev[0], -e0, 1e-14);
    EXPECT_NEAR(ev[1], -e0, 1e-14);
    EXPECT_NEAR(ev[2], e0, 1e-14);
    EXPECT_NEAR(ev[3], e0, 1e-14);
    for (double e : {0.0, 0.1}) {
        const MatrixXcd d = assemble_dirac(P, b, e, 1.0, 2).to_dense();
        EXPECT_LE(hermiticity_defect(d), 1e-14);
        EXPECT_GE(eigh(d).values.cwiseAbs().minCoeff(), 1.0 - 1e-12);
    }
}

TEST(Dirac, AffineInCoupling) {
    const Vec3 P(0.3, 0, 0);
    const FockBasis b = basis_for(2);
    const MatrixXcd d0 = assemble_dirac(P, b, 0.0, 1.0, 2).to_dense();
    const MatrixXcd d1 = assemble_dirac(P, b, 0.05, 1.0, 2).to_dense();
    const MatrixXcd d2 = assemble_dirac(P, b, 0.07, 1.0, 2).to_dense();
    const MatrixXcd d12 = assemble_dirac(P, b, 0.12, 1.0, 2).to_dense();
    EXPECT_LE(max_abs(d1 + d2 - d0 - d12), 1e-15);
}

TEST(AbsoluteValue, PolarIdentityAndOracle) {
    MatrixXcd m = MatrixXcd::Zero(2, 2);
    m(0, 0) = -2.0;
    m(1, 1) = 3.0;
    const auto a = absolute_value(m);
    EXPECT_NEAR(a.abs(0, 0).real(), 2.0, 1e-15);
    EXPECT_NEAR(a.abs(1, 1).real(), 3.0, 1e-15);

    const FockBasis b = basis_for(2);
    const MatrixXcd d = assemble_dirac(Vec3(0.4, 0.1, 0), b, 0.1, 1.0, 2).to_dense();
    const auto av = absolute_value(d);
    EXPECT_LE(max_abs(av.sign * d - av.abs), 1e-12);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    MatrixXcd psi(d.rows(), 3);
    for (Index i = 0; i < psi.rows(); ++i)
        for (int c = 0; c < 3; ++c) psi(i, c) = cd(g(rng), g(rng));
    const MatrixXcd quad = absolute_value_quadrature(d, psi);
    EXPECT_LE(max_abs(quad - av.abs * psi) / max_abs(psi), 1e-8);

    MatrixXcd sing = MatrixXcd::Identity(3, 3);
    sing(1, 1) = 1e-10;
    EXPECT_THROW(absolute_value(sing), DegenerateInput);
}

TEST(Hamiltonian, FreeGroundEnergyAndMultiplicity) {
    for (const Vec3& P : {Vec3(0, 0, 0), Vec3(0.3, 0, 0), Vec3(0.6, 0, 0), Vec3(1.5, 0, 0)}) {
        const FockBasis b = basis_for(3);
        const auto set = assemble_hamiltonian(P, 0.0, b, 1.0, 0, 3);
        const auto fs = solve_fiber(set);
        EXPECT_NEAR(fs.record.E, std::sqrt(P.squaredNorm() + 1.0), 1e-10);
        EXPECT_EQ(fs.record.multiplicity, 4);
        EXPECT_NEAR(fs.record.gap, free_gap(P, b), 1e-10);
        // dense four-spinor path
        const auto rec = ground_cluster(set.hamiltonian());
        EXPECT_NEAR(rec.E, fs.record.E, 1e-12);
        EXPECT_EQ(rec.multiplicity, 4);
    }
}

TEST(Hamiltonian, FreeGapOnCustomGrid) {
    const FockBasis b(custom_grid(0.5), 2, 2);
    const auto set = assemble_hamiltonian(Vec3::Zero(), 0.0, b, 1.0, 0, 1);
    const auto fs = solve_fiber(set);
    const double closed = std::sqrt(1.25) + 0.5 - 1.0;
    EXPECT_NEAR(closed, 0.6180339887498949, 1e-15);
    EXPECT_NEAR(free_gap(Vec3::Zero(), b), closed, 1e-14);
    EXPECT_NEAR(fs.record.gap, closed, 1e-10);
}

TEST(Hamiltonian, BoundedBelowByOne) {
    const FockBasis b = basis_for(3);
    for (double e : {0.0, 0.05, 0.1})
        for (const Vec3& P : {Vec3(0, 0, 0), Vec3(0.3, 0, 0), Vec3(1.0, 0.2, 0)}) {
            const auto set = assemble_hamiltonian(P, e, b, 1.0, 3, 3);
            EXPECT_GE(eigh(set.h).values[0], 1.0 - 1e-12);
            EXPECT_LE(hermiticity_defect(set.h), 1e-12);
        }
}

TEST(Hamiltonian, RejectsBadScalePairs) {
    const FockBasis b = basis_for(2);
    EXPECT_THROW(assemble_hamiltonian(Vec3::Zero(), 0.1, b, 1.0, 3, 2), InvalidArgument);
    EXPECT_THROW(assemble_hamiltonian(Vec3::Zero(), 0.1, b, 1.0, 1, 1), InvalidArgument);
    EXPECT_THROW(assemble_hamiltonian(Vec3::Zero(), 0.1, b, 1.0, 1, 2, 3), InvalidArgument);
}

TEST(BlockEquivalence, FourSpinorSpectrumIsDoubledTwoSpinor) {
    const FockBasis b = basis_for(2);
    const auto free = block_equivalence_check(assemble_hamiltonian(Vec3(0.3, 0, 0), 0.0, b, 1.0, 2, 2));
    EXPECT_LT(free.max_discrepancy, 1e-10);
    EXPECT_TRUE(free.even_multiplicity);
    const auto coupled = block_equivalence_check(assemble_hamiltonian(Vec3(0.3, 0, 0), 0.1, b, 1.0, 2, 2));
    EXPECT_LT(coupled.max_discrepancy, 1e-9);
    EXPECT_TRUE(coupled.even_multiplicity);
}

TEST(Kramers, ThetaCommutesWithDiracAndHamiltonian) {
    const FockBasis b = basis_for(2);
    const auto set = assemble_hamiltonian(Vec3(0.3, 0.1, -0.2), 0.1, b, 1.0, 2, 2);
    EXPECT_LE(kramers_defect(set.dirac().to_dense()), 1e-12);
    EXPECT_LE(kramers_defect(set.hamiltonian()), 1e-12);
    // X1 and X2 commute with H = h (+) h
    const MatrixXcd h = set.hamiltonian();
    const Index n2 = h.rows() / 2;
    MatrixXcd x1 = MatrixXcd::Zero(h.rows(), h.rows()), x2 = x1;
    x1.topLeftCorner(n2, n2).setIdentity();
    x2.bottomLeftCorner(n2, n2).setIdentity();
    EXPECT_LE(max_abs(x1 * h - h * x1), 1e-12);
    EXPECT_LE(max_abs(x2 * h - h * x2), 1e-12);
    EXPECT_LE(max_abs(apply_x2(h) - x2 * h), 0.0);
    EXPECT_LE(max_abs(apply_x1(h) - x1 * h), 0.0);
}

TEST(TranslationCovariance, OnePhotonBlockAtZeroCoupling) {
    const FockBasis b = basis_for(2);
    const Vec3 P(0.4, 0.1, 0.0);
    const auto set = assemble_hamiltonian(P, 0.0, b, 1.0, 0, 2);
    const Index n = b.size();
    for (int l = 0; l < b.mode_count(); ++l) {
        const auto shifted = assemble_hamiltonian(P - b.modes()[l].k, 0.0, b, 1.0, 0, 2);
        for (int s = 0; s < 2; ++s)
            for (int t = 0; t < 2; ++t) {
                const cd one = set.h(s * n + l + 1, t * n + l + 1);
                const cd vac = shifted.h(s * n, t * n) + (s == t ? b.modes()[l].omega() : 0.0);
                EXPECT_NEAR(std::abs(one - vac), 0.0, 1e-10);
            }
    }
}

TEST(RelativeBound, RootRhoScalingAndMonotonicity) {
    EXPECT_EQ(relative_bound_probe(kGeo, {}, 3, 2, 1, 2, rho(kGeo, 1), 0.0), 0.0);
    std::vector<double> ratio;
    for (int k = 0; k <= 4; ++k)
        ratio.push_back(relative_bound_probe(kGeo, {}, 3, 2, k, k + 1, rho(kGeo, k)) / std::sqrt(rho(kGeo, k)));
    for (double r : ratio) EXPECT_NEAR(r / ratio[0], 1.0, 0.25);
    double prev = std::numeric_limits<double>::infinity();
    for (double r : {0.05, 0.1, 0.2, 0.5, 1.0}) {
        const double v = relative_bound_probe(kGeo, {}, 3, 2, 0, 2, r);
        EXPECT_LE(v, prev + 1e-14);
        prev = v;
    }
}
