#include <gtest/gtest.h>

#include "pfflow/spectral.hpp"

using namespace pfflow;

namespace {

const ScaleGeometry kGeo{1.0, 6};

double max_abs(const MatrixXcd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

TEST(GroundCluster, DiagonalExample) {
    MatrixXcd h = MatrixXcd::Zero(3, 3);
    h.diagonal() << 1.0, 1.0, 2.0;
    const auto r = ground_cluster(h);
    EXPECT_DOUBLE_EQ(r.E, 1.0);
    EXPECT_EQ(r.multiplicity, 2);
    EXPECT_DOUBLE_EQ(r.gap, 1.0);
    const MatrixXcd p = r.projection();
    EXPECT_LE(max_abs(p * p - p), 1e-14);
    EXPECT_NEAR(p.trace().real(), 2.0, 1e-14);
}

TEST(GroundCluster, AmbiguityCarriesBothPartitions) {
    MatrixXcd h = MatrixXcd::Zero(3, 3);
    h.diagonal() << 1.0, 1.0 + 1.5e-8, 2.0;
    try {
        ground_cluster(eigh(h), 1e-8);
        FAIL() << "expected ClusterAmbiguity";
    } catch (const ClusterAmbiguity& e) {
        EXPECT_EQ(e.tight_size, 1);
        EXPECT_EQ(e.loose_size, 2);
    }
}

TEST(GroundCluster, FreeAndCoupledMultiplicityFour) {
    const FockBasis b = scale_basis(kGeo, 3, {}, 2, 2);
    const Vec3 P(0.2, 0, 0);
    const auto free = solve_fiber(assemble_hamiltonian(P, 0.0, b, 1.0, 3, 3));
    EXPECT_EQ(free.record.multiplicity, 4);
    EXPECT_NEAR(free.record.E, std::sqrt(1.04), 1e-10);
    const auto coupled = solve_fiber(assemble_hamiltonian(P, 0.05, b, 1.0, 3, 3));
    EXPECT_EQ(coupled.record.multiplicity, 4);
    EXPECT_LT(coupled.record.spread, 1e-9);
    const MatrixXcd p = coupled.record.projection();
    EXPECT_LE(max_abs(p * p - p), 1e-10);
    EXPECT_LE(hermiticity_defect(p), 1e-10);
    const MatrixXcd h = assemble_hamiltonian(P, 0.05, b, 1.0, 3, 3).hamiltonian();
    EXPECT_LE(max_abs(h * p - coupled.record.E * p), 1e-8 * coupled.norm);
}

TEST(GroundCluster, BitwiseDeterministic) {
    const FockBasis b = scale_basis(kGeo, 3, {}, 2, 2);
    const auto a = solve_fiber(assemble_hamiltonian(Vec3(0.3, 0, 0), 0.05, b, 1.0, 3, 3));
    const auto c = solve_fiber(assemble_hamiltonian(Vec3(0.3, 0, 0), 0.05, b, 1.0, 3, 3));
    EXPECT_EQ(a.record.E, c.record.E);
    EXPECT_EQ(a.record.gap, c.record.gap);
    EXPECT_TRUE(a.record.vectors == c.record.vectors);
}

TEST(ReducedResolvent, NormRangeAndDefiningIdentity) {
    const FockBasis b = scale_basis(kGeo, 2, {}, 2, 2);
    const auto set = assemble_hamiltonian(Vec3(0.3, 0, 0), 0.05, b, 1.0, 2, 2);
    const MatrixXcd h = set.hamiltonian();
    const auto rec = ground_cluster(h);
    const MatrixXcd r = reduced_resolvent(rec, h);
    EXPECT_NEAR(op_norm(r), 1.0 / rec.gap, 1e-8 / rec.gap);
    EXPECT_LE(max_abs(r * rec.projection()), 1e-12);
    const Index n = h.rows();
    MatrixXcd hm = h;
    hm.diagonal().array() -= rec.E;
    EXPECT_LE(max_abs(hm * r - (MatrixXcd::Identity(n, n) - rec.projection())), 1e-10);
    EXPECT_THROW(reduced_resolvent(rec, h, -2.0 * rec.gap), InvalidArgument);
}

TEST(Kramers, FreeQuadrupletIsSpinorTimesVacuum) {
    const FockBasis b = scale_basis(kGeo, 2, {}, 2, 2);
    const auto fs = solve_fiber(assemble_hamiltonian(Vec3(0.3, 0, 0), 0.0, b, 1.0, 2, 2));
    const auto q = kramers_partner_basis(fs.record);
    EXPECT_LE(q.gram_defect, 1e-10);
    EXPECT_LE(q.cluster_defect, 1e-10);
    EXPECT_LE(q.theta_overlap, 1e-14);
    const Index n = b.size();
    for (int c = 0; c < 4; ++c) {
        double off_vacuum = 0.0;
        for (int s = 0; s < 4; ++s) off_vacuum += q.vectors.col(c).segment(s * n + 1, n - 1).squaredNorm();
        EXPECT_LT(off_vacuum, 1e-20);
    }
}

TEST(Kramers, CoupledQuadrupletGram) {
    const FockBasis b = scale_basis(kGeo, 3, {}, 2, 2);
    for (double e : {0.02, 0.05, 0.1}) {
        const auto fs = solve_fiber(assemble_hamiltonian(Vec3(0.3, 0, 0), e, b, 1.0, 3, 3));
        const auto q = kramers_partner_basis(fs.record);
        EXPECT_LE(q.gram_defect, 1e-10);
        EXPECT_LE(q.cluster_defect, 1e-8);
    }
    MatrixXcd h = MatrixXcd::Identity(8, 8);
    h.diagonal().tail(6).setConstant(2.0);
    EXPECT_THROW(kramers_partner_basis(ground_cluster(h)), InvalidArgument);
}

TEST(Lanczos, MatchesDenseOnOverlapSizes) {
    const FockBasis b = scale_basis(kGeo, 3, {}, 2, 2);
    for (double e : {0.0, 0.05}) {
        const auto set = assemble_hamiltonian(Vec3(0.3, 0, 0), e, b, 1.0, 3, 3);
        const auto dense = solve_fiber(set);
        const auto lz = lanczos_fiber_cluster(set);
        EXPECT_NEAR(lz.E, dense.record.E, 1e-9);
        EXPECT_EQ(lz.multiplicity, dense.record.multiplicity);
        EXPECT_NEAR(lz.gap, dense.record.gap, 1e-7);
        EXPECT_LE(projection_distance(lz.vectors, dense.record.vectors), 1e-6);
    }
}

TEST(Lanczos, ChebyshevSquareRootMatchesDense) {
    const FockBasis b = scale_basis(kGeo, 2, {}, 2, 2);
    const auto set = assemble_hamiltonian(Vec3(0.5, 0.2, 0), 0.1, b, 1.0, 2, 2);
    const ChebyshevSqrt sq(set.pauli);
    const MatrixXcd v = MatrixXcd::Identity(set.h.rows(), set.h.rows());
    EXPECT_LE(max_abs(sq.apply(v) - set.sqrt_t_matrix()), 1e-12);
}
