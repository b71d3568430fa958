// hamiltonian.hpp - fiber Dirac operator, |D|, fiber Hamiltonians, spinor structure checks

#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "pfflow/error.hpp"
#include "pfflow/fock.hpp"
#include "pfflow/linalg.hpp"
#include "pfflow/quadrature.hpp"
#include "pfflow/scales.hpp"

namespace pfflow {

struct DiracMatrices {
    std::array<MatrixXcd, 3> sigma;
    std::array<MatrixXcd, 4> alpha;  // alpha[0] is the mass matrix

    static const DiracMatrices& get() {
        static const DiracMatrices m = [] {
            DiracMatrices d;
            d.sigma[0] = MatrixXcd::Zero(2, 2);
            d.sigma[0](0, 1) = d.sigma[0](1, 0) = 1.0;
            d.sigma[1] = MatrixXcd::Zero(2, 2);
            d.sigma[1](0, 1) = -kI;
            d.sigma[1](1, 0) = kI;
            d.sigma[2] = MatrixXcd::Zero(2, 2);
            d.sigma[2](0, 0) = 1.0;
            d.sigma[2](1, 1) = -1.0;
            d.alpha[0] = MatrixXcd::Zero(4, 4);
            d.alpha[0].diagonal() << 1.0, 1.0, -1.0, -1.0;
            for (int i = 0; i < 3; ++i) {
                d.alpha[i + 1] = MatrixXcd::Zero(4, 4);
                d.alpha[i + 1].block(0, 2, 2, 2) = d.sigma[i];
                d.alpha[i + 1].block(2, 0, 2, 2) = d.sigma[i];
            }
            return d;
        }();
        return m;
    }

    MatrixXcd alpha_dot(const Vec3& v) const { return v[0] * alpha[1] + v[1] * alpha[2] + v[2] * alpha[3]; }
    MatrixXcd sigma_dot(const Vec3& v) const { return v[0] * sigma[0] + v[1] * sigma[1] + v[2] * sigma[2]; }
};

/// Largest |{a_i, a_j} - 2 delta_ij| over i, j = 0..3.
inline double clifford_defect() {
    const auto& d = DiracMatrices::get();
    double worst = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            MatrixXcd ac = d.alpha[i] * d.alpha[j] + d.alpha[j] * d.alpha[i];
            if (i == j) ac -= 2.0 * MatrixXcd::Identity(4, 4);
            worst = std::max(worst, ac.cwiseAbs().maxCoeff());
        }
    return worst;
}

/// Kinematic momentum Pi_i = P_i - p_f,i + e phi(G_i 1_{annulus < k_field}) on a Fock basis.
inline std::array<SparseMatrixXcd, 3> kinetic_momentum(const Vec3& P, double e, const FockBasis& basis, double kappa,
                                                        int k_field) {
    std::array<SparseMatrixXcd, 3> pi;
    const Index n = basis.size();
    SparseMatrixXcd id(n, n);
    id.setIdentity();
    for (int i = 0; i < 3; ++i) {
        pi[i] = P[i] * id - field_momentum(basis, i).sparse;
        if (e != 0.0) {
            const VectorXcd g = coupling_amplitudes(basis.modes(), kappa, i, k_field);
            if (!g.isZero(0.0)) pi[i] += e * field_matrix(basis, g);
        }
        pi[i].makeCompressed();
    }
    return pi;
}

inline void check_field_support(const FockBasis& basis, int k_field, int j_kin) {
    if (k_field < 0 || k_field > j_kin) throw InvalidArgument("scale pair must satisfy 0 <= k <= j");
    for (const auto& m : basis.modes().modes)
        if (m.annulus >= j_kin) throw InvalidArgument("basis carries modes beyond the kinematic scale j");
}

/// alpha . Pi + alpha_0 in the spinor-major layout.
inline SparseMatrixXcd dirac_from_momentum(const std::array<SparseMatrixXcd, 3>& pi) {
    const auto& d = DiracMatrices::get();
    const Index n = pi[0].rows();
    SparseMatrixXcd id(n, n);
    id.setIdentity();
    SparseMatrixXcd out = spinor_kron(d.alpha[0], id);
    for (int i = 0; i < 3; ++i) out += spinor_kron(d.alpha[i + 1], pi[i]);
    out.makeCompressed();
    return out;
}

inline SparseMatrixXcd pauli_from_momentum(const std::array<SparseMatrixXcd, 3>& pi) {
    const auto& d = DiracMatrices::get();
    SparseMatrixXcd out = spinor_kron(d.sigma[0], pi[0]);
    out += spinor_kron(d.sigma[1], pi[1]);
    out += spinor_kron(d.sigma[2], pi[2]);
    out.makeCompressed();
    return out;
}

/// Fiber Dirac operator alpha . (P - p_f + e phi(G_k)) + alpha_0; field on annuli < k_field,
/// kinematics on every mode of the basis.
inline OperatorMatrix assemble_dirac(const Vec3& P, const FockBasis& basis, double e, double kappa, int k_field) {
    return OperatorMatrix::from_sparse("D", dirac_from_momentum(kinetic_momentum(P, e, basis, kappa, k_field)),
                                       true, 4);
}

struct AbsoluteValue {
    MatrixXcd abs;
    MatrixXcd sign;
    HermitianEigen eig;
};

/// |D| and sgn(D) from a full eigendecomposition.
inline AbsoluteValue absolute_value(const MatrixXcd& d, double singular_tol = 1e-8) {
    AbsoluteValue out;
    out.eig = eigh(d);
    if (out.eig.size() > 0 && out.eig.values.cwiseAbs().minCoeff() < singular_tol)
        throw DegenerateInput("absolute_value: operator has an eigenvalue within 1e-8 of zero");
    out.abs = hermitian_function(out.eig, [](double x) { return std::abs(x); });
    out.sign = hermitian_function(out.eig, [](double x) { return x > 0 ? 1.0 : -1.0; });
    return out;
}

/// |D| psi = (1/pi) int (1 + i y (D - i y)^{-1}) psi dy on sinh-sinh nodes. Oracle path only.
/// The integrand is evaluated as D (D - i y)^{-1} psi, which equals 1 + i y R(iy) without the cancellation.
inline MatrixXcd absolute_value_quadrature(const MatrixXcd& d, const MatrixXcd& psi, double step = 1.0 / 32.0) {
    const Index n = d.rows();
    MatrixXcd acc = MatrixXcd::Zero(n, psi.cols());
    const MatrixXcd id = MatrixXcd::Identity(n, n);
    for (const auto& node : quad::sinh_sinh_half_nodes(step)) {
        const double y = node.x;
        Eigen::PartialPivLU<MatrixXcd> lu_p(d - kI * y * id), lu_m(d + kI * y * id);
        acc += node.w * (d * (lu_p.solve(psi) + lu_m.solve(psi)));
    }
    return acc / std::numbers::pi;
}

/// The fiber Hamiltonian H_k^j(P) = |D_k^j(P)| + H_f^{(j)}.
/// D^2 = T (+) T with T = (sigma . Pi)^2 + 1, so |D| = sqrt(T) (+) sqrt(T) and H = h (+) h with
/// h = sqrt(T) + H_f; everything below is carried on the two-spinor block.
struct FiberOperatorSet {
    Vec3 P = Vec3::Zero();
    double e = 0.0;
    double kappa = 1.0;
    int k = 0;  // field on annuli < k
    int j = 0;  // kinematics on annuli < j
    int spinor_dim = 4;
    FockBasis basis;

    std::array<SparseMatrixXcd, 3> pi;
    SparseMatrixXcd hf;       // N x N
    SparseMatrixXcd pauli;    // sigma . Pi, 2N x 2N
    HermitianEigen t_eig;     // T = pauli^2 + 1
    Eigen::VectorXd sqrt_t;   // sqrt of t_eig.values
    MatrixXcd h;              // sqrt(T) + H_f on two spinors

    Index fock_dim() const { return basis.size(); }
    Index dim() const { return spinor_dim * basis.size(); }

    OperatorMatrix dirac() const { return OperatorMatrix::from_sparse("D", dirac_from_momentum(pi), true, 4); }

    MatrixXcd sqrt_t_matrix() const {
        return t_eig.vectors * sqrt_t.cast<cd>().asDiagonal() * t_eig.vectors.adjoint();
    }

    /// |D| in the stored spinor representation.
    MatrixXcd abs_dirac() const {
        const MatrixXcd s = sqrt_t_matrix();
        return spinor_dim == 2 ? s : block_double(s);
    }

    /// H in the stored spinor representation (dense; only for moderate dimensions).
    MatrixXcd hamiltonian() const { return spinor_dim == 2 ? h : block_double(h); }

    static MatrixXcd block_double(const MatrixXcd& b) {
        const Index m = b.rows();
        MatrixXcd out = MatrixXcd::Zero(2 * m, 2 * m);
        out.topLeftCorner(m, m) = b;
        out.bottomRightCorner(m, m) = b;
        return out;
    }
};

/// Assemble H_k^j(P) on `basis` (modes of annuli < j), field restricted to annuli < k.
inline FiberOperatorSet assemble_hamiltonian(const Vec3& P, double e, const FockBasis& basis, double kappa, int k,
                                             int j, int spinor_dim = 4) {
    if (spinor_dim != 2 && spinor_dim != 4) throw InvalidArgument("spinor_dim must be 2 or 4");
    if (e < 0.0) throw InvalidArgument("coupling e must be nonnegative");
    check_field_support(basis, k, j);
    FiberOperatorSet s;
    s.P = P;
    s.e = e;
    s.kappa = kappa;
    s.k = k;
    s.j = j;
    s.spinor_dim = spinor_dim;
    s.basis = basis;
    s.pi = kinetic_momentum(P, e, basis, kappa, k);
    s.hf = field_energy(basis).sparse;
    s.pauli = pauli_from_momentum(s.pi);
    MatrixXcd t = MatrixXcd(s.pauli * s.pauli);
    t.diagonal().array() += 1.0;
    t = 0.5 * (t + t.adjoint()).eval();
    s.t_eig = eigh(t);
    s.sqrt_t = s.t_eig.values.cwiseMax(0.0).cwiseSqrt();
    s.h = s.sqrt_t_matrix();
    const SparseMatrixXcd hf2 = spinor_identity_kron(s.hf, 2);
    s.h += MatrixXcd(hf2);
    s.h = 0.5 * (s.h + s.h.adjoint()).eval();
    return s;
}

/// Basis for the scale pair (k, j): all modes of annuli < j.
inline FockBasis scale_basis(const ScaleGeometry& geometry, int j, const Resolution& res, int n_max_total,
                             int n_max_per_mode) {
    return FockBasis(build_scale_grid(geometry, 0, j, res), n_max_total, n_max_per_mode);
}

/// Free (e = 0) spectral data: ground energy sqrt(P^2+1) and the gap as the minimum over
/// non-vacuum occupations of sqrt((P - sum n k)^2 + 1) + sum n |k| - sqrt(P^2+1).
inline double free_gap(const Vec3& P, const FockBasis& basis) {
    const double e0 = std::sqrt(P.squaredNorm() + 1.0);
    double gap = std::numeric_limits<double>::infinity();
    for (Index i = 1; i < basis.size(); ++i) {
        const auto s = basis.state(i);
        Vec3 q = P;
        double w = 0.0;
        for (std::size_t l = 0; l < s.size(); ++l) {
            q -= s[l] * basis.modes()[l].k;
            w += s[l] * basis.modes()[l].omega();
        }
        gap = std::min(gap, std::sqrt(q.squaredNorm() + 1.0) + w - e0);
    }
    return gap;
}

struct BlockEquivalenceReport {
    double max_discrepancy = 0.0;  // |lambda4_{2i} - lambda2_i| and |lambda4_{2i+1} - lambda2_i|
    double max_pair_split = 0.0;   // |lambda4_{2i} - lambda4_{2i+1}|
    bool even_multiplicity = false;
};

/// Four-spinor spectrum of |D| + H_f (|D| from the eigendecomposition of D) against the
/// two-spinor spectrum of sqrt((sigma . Pi)^2 + 1) + H_f with every level doubled.
inline BlockEquivalenceReport block_equivalence_check(const FiberOperatorSet& set, double split_tol = 1e-9) {
    const MatrixXcd d = set.dirac().to_dense();
    const auto absd = absolute_value(d);
    MatrixXcd h4 = absd.abs + MatrixXcd(spinor_identity_kron(set.hf, 4));
    h4 = 0.5 * (h4 + h4.adjoint()).eval();
    const Eigen::VectorXd l4 = eigh(h4).values;

    MatrixXcd t = MatrixXcd(set.pauli * set.pauli);
    t.diagonal().array() += 1.0;
    t = 0.5 * (t + t.adjoint()).eval();
    const auto te = eigh(t);
    MatrixXcd h2 = hermitian_function(te, [](double x) { return std::sqrt(std::max(x, 0.0)); }) +
                   MatrixXcd(spinor_identity_kron(set.hf, 2));
    h2 = 0.5 * (h2 + h2.adjoint()).eval();
    const Eigen::VectorXd l2 = eigh(h2).values;

    BlockEquivalenceReport r;
    for (Index i = 0; i < l2.size(); ++i) {
        r.max_discrepancy = std::max({r.max_discrepancy, std::abs(l4[2 * i] - l2[i]), std::abs(l4[2 * i + 1] - l2[i])});
        r.max_pair_split = std::max(r.max_pair_split, std::abs(l4[2 * i] - l4[2 * i + 1]));
    }
    r.even_multiplicity = r.max_pair_split <= split_tol;
    return r;
}

/// || alpha . A_k^j (H_f^{(k,j)} + rho)^{-1/2} || on the Fock space of annuli k..j-1, with
/// A = coupling_scale * phi(G). The components of A commute (real amplitudes), so
/// (alpha . A)^2 = A . A and the norm is sqrt(|| X (A . A) X ||) with X = (H_f + rho)^{-1/2}.
inline double relative_bound_probe(const ScaleGeometry& geometry, const Resolution& res, int n_max_total,
                                   int n_max_per_mode, int k, int j, double rho_value, double coupling_scale = 1.0) {
    if (!(k < j)) throw InvalidArgument("relative_bound_probe: need k < j");
    if (!(rho_value > 0.0)) throw InvalidArgument("relative_bound_probe: rho must be positive");
    const FockBasis basis(build_scale_grid(geometry, k, j, res), n_max_total, n_max_per_mode);
    if (coupling_scale == 0.0) return 0.0;
    MatrixXcd aa = MatrixXcd::Zero(basis.size(), basis.size());
    for (int i = 0; i < 3; ++i) {
        const VectorXcd g = coupling_amplitudes(basis.modes(), geometry.kappa, i, j) * coupling_scale;
        const MatrixXcd a = MatrixXcd(field_matrix(basis, g));
        aa += a * a;
    }
    const MatrixXcd hf = MatrixXcd(field_energy(basis).sparse);
    Eigen::VectorXcd x(basis.size());
    for (Index i = 0; i < basis.size(); ++i) x[i] = 1.0 / std::sqrt(hf(i, i).real() + rho_value);
    const MatrixXcd m = x.asDiagonal() * aa * x.asDiagonal();
    return std::sqrt(std::max(0.0, eigh(0.5 * (m + m.adjoint())).values.maxCoeff()));
}

// Kramers structure: theta = diag(sigma_2, -sigma_2) C, X1 = upper projector, X2 = upper -> lower.

inline MatrixXcd kramers_spinor_matrix() {
    const auto& d = DiracMatrices::get();
    MatrixXcd b = MatrixXcd::Zero(4, 4);
    b.topLeftCorner(2, 2) = d.sigma[1];
    b.bottomRightCorner(2, 2) = -d.sigma[1];
    return b;
}

/// theta psi for a four-spinor vector (or block of columns) in the spinor-major layout.
inline MatrixXcd apply_theta(const MatrixXcd& psi) {
    const Index n = psi.rows() / 4;
    if (psi.rows() != 4 * n) throw InvalidArgument("apply_theta: not a four-spinor vector");
    const MatrixXcd b = kramers_spinor_matrix();
    const MatrixXcd c = psi.conjugate();
    MatrixXcd out = MatrixXcd::Zero(psi.rows(), psi.cols());
    for (int s = 0; s < 4; ++s)
        for (int t = 0; t < 4; ++t)
            if (b(s, t) != 0.0) out.middleRows(s * n, n) += b(s, t) * c.middleRows(t * n, n);
    return out;
}

inline MatrixXcd apply_x1(const MatrixXcd& psi) {
    const Index n = psi.rows() / 4;
    MatrixXcd out = MatrixXcd::Zero(psi.rows(), psi.cols());
    out.topRows(2 * n) = psi.topRows(2 * n);
    return out;
}

inline MatrixXcd apply_x2(const MatrixXcd& psi) {
    const Index n = psi.rows() / 4;
    MatrixXcd out = MatrixXcd::Zero(psi.rows(), psi.cols());
    out.bottomRows(2 * n) = psi.topRows(2 * n);
    return out;
}

/// max |theta H theta^{-1} - H| for a dense four-spinor matrix: B conj(H) B^{-1} with B the signed permutation.
inline double kramers_defect(const MatrixXcd& h) {
    const Index n = h.rows() / 4;
    MatrixXcd b = kron(kramers_spinor_matrix(), MatrixXcd::Identity(n, n));
    return (b * h.conjugate() * b.adjoint() - h).cwiseAbs().maxCoeff();
}

}  // namespace pfflow
