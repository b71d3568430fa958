// spectral.hpp - ground clusters, reduced resolvents, Kramers quadruplets, block Lanczos

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "pfflow/error.hpp"
#include "pfflow/hamiltonian.hpp"
#include "pfflow/linalg.hpp"

namespace pfflow {

struct GroundStateRecord {
    Vec3 P = Vec3::Zero();
    int j = 0;
    double E = 0.0;
    double gap = std::numeric_limits<double>::infinity();  // infinite when nothing lies above the cluster
    int multiplicity = 0;
    double spread = 0.0;       // max - min over the cluster
    double cluster_tol = 0.0;  // absolute
    double solver_tol = 0.0;
    Eigen::VectorXd lowest;    // up to the eight lowest eigenvalues, with multiplicity
    MatrixXcd vectors;         // orthonormal cluster basis, columns

    MatrixXcd projection() const { return vectors * vectors.adjoint(); }

    /// fifth eigenvalue counting multiplicity, if available
    double mu5() const { return lowest.size() >= 5 ? lowest[4] : std::numeric_limits<double>::quiet_NaN(); }
};

namespace detail {

inline int cluster_size(const Eigen::VectorXd& values, double tol) {
    int n = 0;
    while (n < values.size() && values[n] - values[0] <= tol) ++n;
    return n;
}

inline MatrixXcd canonical_basis(MatrixXcd v) {
    v = orthonormalize(std::move(v));
    for (Index c = 0; c < v.cols(); ++c) fix_phase(v.col(c));
    return v;
}

}  // namespace detail

/// Lowest cluster {lambda : lambda - lambda_min <= cluster_tol} of an eigendecomposition.
inline GroundStateRecord ground_cluster(const HermitianEigen& eig, double cluster_tol, bool check_ambiguity = true) {
    if (eig.size() == 0) throw InvalidArgument("ground_cluster: empty spectrum");
    if (!(cluster_tol > 0.0)) throw InvalidArgument("ground_cluster: cluster_tol must be positive");
    const int tight = detail::cluster_size(eig.values, cluster_tol);
    const int loose = detail::cluster_size(eig.values, 2.0 * cluster_tol);
    if (check_ambiguity && tight != loose)
        throw ClusterAmbiguity("ground_cluster: next level within 2*cluster_tol of the ground cluster", tight, loose);
    GroundStateRecord r;
    r.multiplicity = tight;
    r.E = eig.values.head(tight).mean();
    r.spread = eig.values[tight - 1] - eig.values[0];
    r.gap = tight < eig.size() ? eig.values[tight] - r.E : std::numeric_limits<double>::infinity();
    r.cluster_tol = cluster_tol;
    const double scale = std::max(std::abs(eig.values[0]), std::abs(eig.values[eig.size() - 1]));
    r.solver_tol = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, scale);
    r.lowest = eig.values.head(std::min<Index>(8, eig.size()));
    r.vectors = detail::canonical_basis(eig.vectors.leftCols(tight));
    return r;
}

/// Operator norm of a Hermitian matrix read off its spectrum.
inline double spectral_norm(const HermitianEigen& eig) {
    return eig.size() ? std::max(std::abs(eig.values[0]), std::abs(eig.values[eig.size() - 1])) : 0.0;
}

/// Ground cluster of a dense Hermitian matrix with cluster_tol = rel_tol * ||H||.
inline GroundStateRecord ground_cluster(const MatrixXcd& h, double rel_tol = 1e-8) {
    if (hermiticity_defect(h) > 1e-10 * std::max(1.0, h.cwiseAbs().maxCoeff()))
        throw InvalidArgument("ground_cluster: matrix is not Hermitian");
    const auto eig = eigh(h);
    return ground_cluster(eig, rel_tol * std::max(1.0, spectral_norm(eig)));
}

/// (H Pi_perp - E + z)^{-1} Pi_perp.
inline MatrixXcd reduced_resolvent(const GroundStateRecord& record, const MatrixXcd& h, cd z = 0.0) {
    if (!(z.real() > -record.gap)) throw InvalidArgument("reduced_resolvent: Re z must exceed -gap");
    const Index n = h.rows();
    const MatrixXcd perp = MatrixXcd::Identity(n, n) - record.projection();
    MatrixXcd m = h * perp;
    m.diagonal().array() += (z - record.E);
    return Eigen::PartialPivLU<MatrixXcd>(m).solve(perp);
}

/// Kramers quadruplet psi1 (X1 psi1 = psi1), X2 psi1, theta psi1, X2 theta psi1 inside a four-fold cluster.
struct KramersQuadruplet {
    MatrixXcd vectors;       // 4 columns
    MatrixXcd gram;          // 4 x 4
    double gram_defect = 0;  // max |gram - 1|
    double cluster_defect = 0;  // max || (1 - Pi) psi_i ||
    double theta_overlap = 0;   // |<psi1, theta psi1>|
};

inline KramersQuadruplet kramers_partner_basis(const GroundStateRecord& record, double tol = 1e-8) {
    if (record.multiplicity != 4) throw InvalidArgument("kramers_partner_basis: cluster multiplicity is not 4");
    if (record.vectors.rows() % 4 != 0) throw InvalidArgument("kramers_partner_basis: not a four-spinor record");
    const MatrixXcd& v = record.vectors;
    MatrixXcd x1c = v.adjoint() * apply_x1(v);
    x1c = 0.5 * (x1c + x1c.adjoint()).eval();
    const auto e = eigh(x1c);
    if (std::abs(e.values[3] - 1.0) > tol) throw Error("kramers_partner_basis: no X1-fixed vector in the cluster");
    VectorXcd psi1 = v * e.vectors.col(3);
    psi1 = apply_x1(psi1);
    psi1.normalize();
    fix_phase(psi1);
    KramersQuadruplet q;
    q.vectors.resize(v.rows(), 4);
    q.vectors.col(0) = psi1;
    q.vectors.col(1) = apply_x2(psi1);
    const VectorXcd th = apply_theta(psi1);
    q.vectors.col(2) = th;
    q.vectors.col(3) = apply_x2(th);
    q.gram = q.vectors.adjoint() * q.vectors;
    q.gram_defect = (q.gram - MatrixXcd::Identity(4, 4)).cwiseAbs().maxCoeff();
    const MatrixXcd proj = v * (v.adjoint() * q.vectors);
    for (int c = 0; c < 4; ++c) q.cluster_defect = std::max(q.cluster_defect, (q.vectors.col(c) - proj.col(c)).norm());
    q.theta_overlap = std::abs(psi1.dot(th));
    return q;
}

/// Ground data of a fiber Hamiltonian: the eigendecomposition of the two-spinor block h and the
/// cluster in the stored spinor representation (each h-level doubled for four spinors).
struct FiberSpectrum {
    HermitianEigen h_eig;
    GroundStateRecord record;  // spinor_dim representation
    MatrixXcd block_vectors;   // cluster of h (2N rows)
    int block_multiplicity = 0;
    double norm = 0.0;         // ||H||
};

inline MatrixXcd double_spinor_vectors(const MatrixXcd& u) {
    const Index m = u.rows();
    MatrixXcd out = MatrixXcd::Zero(2 * m, 2 * u.cols());
    out.topLeftCorner(m, u.cols()) = u;
    out.bottomRightCorner(m, u.cols()) = u;
    return out;
}

inline FiberSpectrum solve_fiber(const FiberOperatorSet& set, double rel_tol = 1e-8, int j_label = -1) {
    FiberSpectrum fs;
    fs.h_eig = eigh(set.h);
    fs.norm = spectral_norm(fs.h_eig);
    const GroundStateRecord blk = ground_cluster(fs.h_eig, rel_tol * std::max(1.0, fs.norm));
    fs.block_vectors = blk.vectors;
    fs.block_multiplicity = blk.multiplicity;
    fs.record = blk;
    if (set.spinor_dim == 4) {
        fs.record.multiplicity = 2 * blk.multiplicity;
        fs.record.vectors = double_spinor_vectors(blk.vectors);
        Eigen::VectorXd low(std::min<Index>(8, 2 * blk.lowest.size()));
        for (Index i = 0; i < low.size(); ++i) low[i] = blk.lowest[i / 2];
        fs.record.lowest = low;
    }
    fs.record.P = set.P;
    fs.record.j = j_label >= 0 ? j_label : set.j;
    return fs;
}

// ---------------------------------------------------------------------------------------------
// Matrix-free path for large dimensions.

using MatVec = std::function<MatrixXcd(const MatrixXcd&)>;

struct LanczosOptions {
    int block = 4;
    int max_dim = 800;
    int nev = 8;
    double tol = 1e-10;
    std::uint64_t seed = 12345;
};

struct LanczosResult {
    Eigen::VectorXd values;
    MatrixXcd vectors;
    Eigen::VectorXd residuals;
    int krylov_dim = 0;
};

/// Block Lanczos with full reorthogonalization for the lowest eigenpairs of a Hermitian operator.
/// A block of width >= the ground multiplicity resolves degenerate clusters.
inline LanczosResult block_lanczos(const MatVec& apply, Index n, const LanczosOptions& opt = {}) {
    if (n <= 0) throw InvalidArgument("block_lanczos: empty operator");
    const int b = static_cast<int>(std::min<Index>(opt.block, n));
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> gauss;
    MatrixXcd q0(n, b);
    for (Index i = 0; i < n; ++i)
        for (int c = 0; c < b; ++c) q0(i, c) = cd(gauss(rng), gauss(rng));
    MatrixXcd basis = orthonormalize(q0);
    MatrixXcd images = apply(basis);
    LanczosResult res;
    const Index cap = std::min<Index>(n, opt.max_dim);
    while (true) {
        const Index m = basis.cols();
        MatrixXcd proj = basis.adjoint() * images;
        proj = 0.5 * (proj + proj.adjoint()).eval();
        const auto ritz = eigh(proj);
        const Index k = std::min<Index>(opt.nev, m);
        MatrixXcd x = basis * ritz.vectors.leftCols(k);
        MatrixXcd r = images * ritz.vectors.leftCols(k) - x * ritz.values.head(k).cast<cd>().asDiagonal();
        Eigen::VectorXd rn(k);
        for (Index c = 0; c < k; ++c) rn[c] = r.col(c).norm();
        const double scale = std::max(1.0, ritz.values.cwiseAbs().maxCoeff());
        if ((rn.maxCoeff() <= opt.tol * scale && m >= std::min<Index>(n, 2 * b)) || m >= cap) {
            res.values = ritz.values.head(k);
            res.vectors = x;
            res.residuals = rn;
            res.krylov_dim = static_cast<int>(m);
            return res;
        }
        // next block: residual of the newest block against the whole basis, twice
        const MatrixXcd w = images.rightCols(b);
        MatrixXcd fresh(n, 0);
        auto project_out = [&](VectorXcd& v) {
            for (int pass = 0; pass < 2; ++pass) {
                v -= basis * (basis.adjoint() * v);
                if (fresh.cols()) v -= fresh * (fresh.adjoint() * v);
            }
        };
        for (int c = 0; c < w.cols() && basis.cols() + fresh.cols() < cap; ++c) {
            VectorXcd v = w.col(c);
            double before = v.norm();
            project_out(v);
            if (!(v.norm() > 1e-8 * before) || before == 0.0) {
                // Krylov space exhausted in this direction: continue from a random vector
                for (Index i = 0; i < n; ++i) v[i] = cd(gauss(rng), gauss(rng));
                before = v.norm();
                project_out(v);
                if (!(v.norm() > 1e-8 * before)) continue;
            }
            v.normalize();
            project_out(v);
            v.normalize();
            fresh.conservativeResize(n, fresh.cols() + 1);
            fresh.col(fresh.cols() - 1) = v;
        }
        if (fresh.cols() == 0) {
            res.values = ritz.values.head(k);
            res.vectors = x;
            res.residuals = rn;
            res.krylov_dim = static_cast<int>(m);
            return res;
        }
        const MatrixXcd fresh_img = apply(fresh);
        basis.conservativeResize(n, m + fresh.cols());
        basis.rightCols(fresh.cols()) = fresh;
        images.conservativeResize(n, m + fresh.cols());
        images.rightCols(fresh.cols()) = fresh_img;
    }
}

inline double max_row_abs_sum(const SparseMatrixXcd& s) {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(s.rows());
    for (Index c = 0; c < s.outerSize(); ++c)
        for (SparseMatrixXcd::InnerIterator it(s, c); it; ++it) rows[it.row()] += std::abs(it.value());
    return rows.size() ? rows.maxCoeff() : 0.0;
}

/// sqrt(T) v for T = S^2 + 1 by a Chebyshev expansion on [1, t_max].
class ChebyshevSqrt {
public:
    ChebyshevSqrt(const SparseMatrixXcd& s, double tol = 1e-15) : s_(s) {
        const double g = max_row_abs_sum(s);
        lo_ = 1.0;
        hi_ = 1.0 + g * g + 1e-12;
        const int nodes = 256;
        std::vector<double> f(nodes);
        for (int i = 0; i < nodes; ++i) {
            const double th = std::numbers::pi * (i + 0.5) / nodes;
            f[i] = std::sqrt(map(std::cos(th)));
        }
        for (int k = 0; k < nodes; ++k) {
            double c = 0.0;
            for (int i = 0; i < nodes; ++i) c += f[i] * std::cos(k * std::numbers::pi * (i + 0.5) / nodes);
            c *= 2.0 / nodes;
            coef_.push_back(k == 0 ? 0.5 * c : c);
            if (k > 4 && std::abs(c) < tol * std::abs(coef_[0])) break;
        }
    }

    MatrixXcd apply(const MatrixXcd& v) const {
        // x = (2 T - (hi + lo)) / (hi - lo)
        auto xop = [&](const MatrixXcd& u) {
            MatrixXcd tu = s_ * (s_ * u) + u;
            return ((2.0 * tu - (hi_ + lo_) * u) / (hi_ - lo_)).eval();
        };
        MatrixXcd t0 = v, t1 = xop(v);
        MatrixXcd acc = coef_[0] * t0;
        if (coef_.size() > 1) acc += coef_[1] * t1;
        for (std::size_t k = 2; k < coef_.size(); ++k) {
            MatrixXcd t2 = 2.0 * xop(t1) - t0;
            acc += coef_[k] * t2;
            t0 = std::move(t1);
            t1 = std::move(t2);
        }
        return acc;
    }

    std::size_t degree() const { return coef_.size(); }

private:
    double map(double x) const { return 0.5 * (hi_ - lo_) * x + 0.5 * (hi_ + lo_); }

    SparseMatrixXcd s_;
    double lo_ = 1.0, hi_ = 2.0;
    std::vector<double> coef_;
};

/// Ground cluster of a fiber Hamiltonian without forming |D| densely.
inline GroundStateRecord lanczos_fiber_cluster(const FiberOperatorSet& set, double rel_tol = 1e-8,
                                               LanczosOptions opt = {}) {
    const ChebyshevSqrt sq(set.pauli);
    const SparseMatrixXcd hf2 = spinor_identity_kron(set.hf, 2);
    const MatVec apply = [&](const MatrixXcd& v) { return (sq.apply(v) + hf2 * v).eval(); };
    const auto lz = block_lanczos(apply, 2 * set.fock_dim(), opt);
    HermitianEigen eig{lz.values, lz.vectors};
    const double norm_est = std::sqrt(1.0 + std::pow(max_row_abs_sum(set.pauli), 2)) + max_row_abs_sum(set.hf);
    GroundStateRecord blk = ground_cluster(eig, rel_tol * std::max(1.0, norm_est));
    blk.solver_tol = lz.residuals.maxCoeff();
    blk.P = set.P;
    blk.j = set.j;
    if (set.spinor_dim == 4) {
        blk.multiplicity *= 2;
        blk.vectors = double_spinor_vectors(blk.vectors);
        Eigen::VectorXd low(std::min<Index>(8, 2 * blk.lowest.size()));
        for (Index i = 0; i < low.size(); ++i) low[i] = blk.lowest[i / 2];
        blk.lowest = low;
    }
    return blk;
}

}  // namespace pfflow
