// iapt.hpp - scale-by-scale flow: energies, Hellmann-Feynman derivatives, coherent factors,
// dressing transforms, dressed projections and infrared diagnostics

#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pfflow/error.hpp"
#include "pfflow/fock.hpp"
#include "pfflow/hamiltonian.hpp"
#include "pfflow/linalg.hpp"
#include "pfflow/quadrature.hpp"
#include "pfflow/scales.hpp"
#include "pfflow/spectral.hpp"

namespace pfflow {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------------------------
// Weyl conventions, measured on a single truncated mode.

/// Constants of the Weyl calculus in the code's field normalization:
///   [a_l, phi(g)] = nu g_l,  U a U* = a - eta e f  for U = exp(-i e varpi(f)),
///   |<Omega, U Omega>| = exp(-c_exp e^2 |f|^2).
struct WeylConvention {
    double nu = kNaN;
    double eta = kNaN;
    double c_exp = kNaN;
    double overlap_residual = kNaN;  // |measured overlap - exp(-c_exp e^2 |f|^2)| at a second amplitude

    /// coefficient of e^2 <f, . f> in the transformed operators
    double quadratic() const { return 2.0 * c_exp; }
};

inline ModeGrid single_mode_grid(double k = 0.5) {
    ModeGrid g;
    Mode m;
    m.k = Vec3(0.0, 0.0, k);
    m.lambda = 0;
    m.weight = 1.0;
    m.annulus = 0;
    m.eps = polarizations(m.k).eps0;
    g.modes.push_back(m);
    return g;
}

/// |<Omega, U(f_P)^* U(f_Q) Omega>| for one mode, U(f) = exp(-i e varpi(f)), truncated at n_max.
inline double single_mode_overlap(double f_p, double f_q, double e, int n_max = 16) {
    const FockBasis basis(single_mode_grid(), n_max, n_max);
    VectorXcd fp(1), fq(1);
    fp[0] = f_p;
    fq[0] = f_q;
    const MatrixXcd up = weyl_matrix(basis, fp, e), uq = weyl_matrix(basis, fq, e);
    return std::abs((up.adjoint() * uq)(0, 0));
}

inline WeylConvention calibrate_weyl(int n_max = 16, double amplitude = 0.1) {
    const FockBasis basis(single_mode_grid(), n_max, n_max);
    VectorXcd f(1);
    f[0] = amplitude;
    WeylConvention w;
    const MatrixXcd a = MatrixXcd(annihilator_matrix(basis, 0));
    const MatrixXcd phi = MatrixXcd(field_matrix(basis, f));
    w.nu = ((a * phi - phi * a)(0, 0) / f[0]).real();
    const MatrixXcd u = weyl_matrix(basis, f, 1.0);
    w.eta = -((u * a * u.adjoint())(0, 0) / f[0]).real();
    w.c_exp = -std::log(std::abs(u(0, 0))) / (amplitude * amplitude);
    const double f2 = 2.5 * amplitude;
    w.overlap_residual = std::abs(single_mode_overlap(0.0, f2, 1.0, n_max) - std::exp(-w.c_exp * f2 * f2));
    return w;
}

inline const WeylConvention& weyl_convention() {
    static const WeylConvention w = calibrate_weyl();
    return w;
}

// ---------------------------------------------------------------------------------------------
// Hellmann-Feynman derivatives of the cluster energy in P.

struct DerivativeSet {
    Vec3 grad = Vec3::Zero();
    Eigen::Matrix3d hess = Eigen::Matrix3d::Zero();
    double k1 = 0.0;   // || R Pi_perp grad H Pi ||_HS
    double k05 = 0.0;  // || R^{1/2} Pi_perp grad H Pi ||_HS

    Vec3 hess_eigenvalues() const { return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(hess).eigenvalues(); }
    double directional(const Vec3& h) const { return grad.dot(h); }
    double second(const Vec3& h) const { return h.dot(hess * h); }
};

/// Derivatives on the two-spinor block h = sqrt(T) + H_f with T = (sigma . Pi)^2 + 1.
/// In the eigenbasis of T (values s^2): d_a T = 2 Pi_a (x) 1, d sqrt(T) = (W* dT W) o K with
/// K_mn = 1 / (s_m + s_n), and
///   d_a d_b sqrt(T) = delta_ab diag(1/s) - K o (M_a M_b + M_b M_a).
/// HS norms of the K-quantities refer to the stored spinor representation.
inline DerivativeSet fiber_derivatives(const FiberOperatorSet& set, const FiberSpectrum& fs, bool hessian = true) {
    const MatrixXcd& w = set.t_eig.vectors;
    const Eigen::VectorXd& s = set.sqrt_t;
    const Index n = s.size();
    const int d = fs.block_multiplicity;
    MatrixXcd kmat(n, n);
    for (Index c = 0; c < n; ++c)
        for (Index r = 0; r < n; ++r) kmat(r, c) = 1.0 / (s[r] + s[c]);
    const MatrixXcd c = w.adjoint() * fs.block_vectors;

    std::array<MatrixXcd, 3> m;
    DerivativeSet out;
    for (int a = 0; a < 3; ++a) {
        const SparseMatrixXcd pa = spinor_identity_kron(set.pi[a], 2);
        const MatrixXcd pw = pa * w;
        m[a] = (2.0 * (w.adjoint() * pw)).cwiseProduct(kmat);
        out.grad[a] = (c.adjoint() * m[a] * c).trace().real() / d;
    }
    if (!hessian) return out;

    const Index rest = n - d;
    const MatrixXcd vout = fs.h_eig.vectors.rightCols(rest);
    Eigen::VectorXd denom = fs.h_eig.values.tail(rest).array() - fs.record.E;
    std::array<MatrixXcd, 3> z;
    for (int a = 0; a < 3; ++a) z[a] = vout.adjoint() * (w * (m[a] * c));

    double inv_s = 0.0;
    for (Index r = 0; r < n; ++r) inv_s += c.row(r).squaredNorm() / s[r];
    for (int a = 0; a < 3; ++a)
        for (int b = a; b < 3; ++b) {
            const MatrixXcd y = m[a] * m[b];
            const MatrixXcd x = -(y + y.adjoint()).cwiseProduct(kmat);
            double first = (c.adjoint() * x * c).trace().real() + (a == b ? inv_s : 0.0);
            double second = 0.0;
            for (Index k = 0; k < rest; ++k) second += (z[a].row(k).conjugate().cwiseProduct(z[b].row(k))).sum().real() / denom[k];
            out.hess(a, b) = out.hess(b, a) = (first - 2.0 * second) / d;
        }
    double k1 = 0.0, k05 = 0.0;
    for (int a = 0; a < 3; ++a)
        for (Index k = 0; k < rest; ++k) {
            const double q = z[a].row(k).squaredNorm();
            k1 += q / (denom[k] * denom[k]);
            k05 += q / denom[k];
        }
    const double copies = set.spinor_dim / 2.0;
    out.k1 = std::sqrt(copies * k1);
    out.k05 = std::sqrt(copies * k05);
    return out;
}

/// Same derivatives from the four-spinor Dirac operator: with A = V*(alpha . h)V on the eigenbasis of D,
///   d|D| = A o K1,  K1_mn = (l_m + l_n) / (|l_m| + |l_n|),
///   d_a d_b |D| = (A_a A_b + A_b A_a - M_a M_b - M_b M_a) o K2,  K2_mn = 1 / (|l_m| + |l_n|).
inline DerivativeSet dirac_path_derivatives(const FiberOperatorSet& set, double rel_tol = 1e-8) {
    const auto& dm = DiracMatrices::get();
    const auto absd = absolute_value(set.dirac().to_dense());
    const Eigen::VectorXd& l = absd.eig.values;
    const MatrixXcd& v = absd.eig.vectors;
    const Index n = l.size();
    MatrixXcd h4 = absd.abs + MatrixXcd(spinor_identity_kron(set.hf, 4));
    h4 = 0.5 * (h4 + h4.adjoint()).eval();
    const auto he = eigh(h4);
    const GroundStateRecord rec = ground_cluster(he, rel_tol * std::max(1.0, spectral_norm(he)));
    const int d = rec.multiplicity;
    const MatrixXcd c = v.adjoint() * rec.vectors;

    MatrixXcd k1(n, n), k2(n, n);
    for (Index q = 0; q < n; ++q)
        for (Index r = 0; r < n; ++r) {
            k1(r, q) = (l[r] + l[q]) / (std::abs(l[r]) + std::abs(l[q]));
            k2(r, q) = 1.0 / (std::abs(l[r]) + std::abs(l[q]));
        }
    SparseMatrixXcd id(set.fock_dim(), set.fock_dim());
    id.setIdentity();
    std::array<MatrixXcd, 3> amat, m, z;
    DerivativeSet out;
    const Index rest = n - d;
    const MatrixXcd vout = he.vectors.rightCols(rest);
    Eigen::VectorXd denom = he.values.tail(rest).array() - rec.E;
    for (int a = 0; a < 3; ++a) {
        const MatrixXcd alpha = MatrixXcd(spinor_kron(dm.alpha[a + 1], id));
        amat[a] = v.adjoint() * alpha * v;
        m[a] = amat[a].cwiseProduct(k1);
        out.grad[a] = (c.adjoint() * m[a] * c).trace().real() / d;
        z[a] = vout.adjoint() * (v * (m[a] * c));
    }
    for (int a = 0; a < 3; ++a)
        for (int b = a; b < 3; ++b) {
            const MatrixXcd x = (amat[a] * amat[b] + amat[b] * amat[a] - m[a] * m[b] - m[b] * m[a]).cwiseProduct(k2);
            const double first = (c.adjoint() * x * c).trace().real();
            double second = 0.0;
            for (Index k = 0; k < rest; ++k) second += (z[a].row(k).conjugate().cwiseProduct(z[b].row(k))).sum().real() / denom[k];
            out.hess(a, b) = out.hess(b, a) = (first - 2.0 * second) / d;
        }
    for (int a = 0; a < 3; ++a)
        for (Index k = 0; k < rest; ++k) {
            const double q = z[a].row(k).squaredNorm();
            out.k1 += q / (denom[k] * denom[k]);
            out.k05 += q / denom[k];
        }
    out.k1 = std::sqrt(out.k1);
    out.k05 = std::sqrt(out.k05);
    return out;
}

/// d|D| psi = -(i/pi) int y R A R psi dy, R = (D - iy)^{-1}; the y and -y nodes are paired.
inline MatrixXcd abs_derivative_quadrature(const MatrixXcd& d, const MatrixXcd& a, const MatrixXcd& psi,
                                           double step = 1.0 / 32.0) {
    const Index n = d.rows();
    const MatrixXcd id = MatrixXcd::Identity(n, n);
    MatrixXcd acc = MatrixXcd::Zero(n, psi.cols());
    for (const auto& node : quad::sinh_sinh_half_nodes(step)) {
        const double y = node.x;
        if (y == 0.0) continue;
        Eigen::PartialPivLU<MatrixXcd> lp(d - kI * y * id), lm(d + kI * y * id);
        acc += node.w * y * (lp.solve(a * lp.solve(psi)) - lm.solve(a * lm.solve(psi)));
    }
    return (-kI / std::numbers::pi) * acc;
}

/// d_1 d_2 |D| psi = (i/pi) int y (R A1 R A2 R + R A2 R A1 R) psi dy.
inline MatrixXcd abs_second_derivative_quadrature(const MatrixXcd& d, const MatrixXcd& a1, const MatrixXcd& a2,
                                                  const MatrixXcd& psi, double step = 1.0 / 32.0) {
    const Index n = d.rows();
    const MatrixXcd id = MatrixXcd::Identity(n, n);
    MatrixXcd acc = MatrixXcd::Zero(n, psi.cols());
    for (const auto& node : quad::sinh_sinh_half_nodes(step)) {
        const double y = node.x;
        if (y == 0.0) continue;
        Eigen::PartialPivLU<MatrixXcd> lp(d - kI * y * id), lm(d + kI * y * id);
        auto term = [&](const Eigen::PartialPivLU<MatrixXcd>& lu) {
            const MatrixXcd r = lu.solve(psi);
            return MatrixXcd(lu.solve(a1 * lu.solve(a2 * r)) + lu.solve(a2 * lu.solve(a1 * r)));
        };
        acc += node.w * y * (term(lp) - term(lm));
    }
    return (kI / std::numbers::pi) * acc;
}

/// Cluster energy of H_k^j at momentum P (two-spinor block; the spectrum is the same).
inline double cluster_energy(const Vec3& P, double e, const FockBasis& basis, double kappa, int k, int j,
                             double rel_tol = 1e-8) {
    const auto set = assemble_hamiltonian(P, e, basis, kappa, k, j, 2);
    const auto eig = eigh(set.h);
    return ground_cluster(eig, rel_tol * std::max(1.0, spectral_norm(eig))).E;
}

/// Central differences of the cluster energy.
inline Vec3 fd_gradient(const Vec3& P, double e, const FockBasis& basis, double kappa, int k, int j,
                        double step = 1e-4) {
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
        const Vec3 h = step * Vec3::Unit(a);
        g[a] = (cluster_energy(P + h, e, basis, kappa, k, j) - cluster_energy(P - h, e, basis, kappa, k, j)) / (2 * step);
    }
    return g;
}

inline Eigen::Matrix3d fd_hessian(const Vec3& P, double e, const FockBasis& basis, double kappa, int k, int j,
                                  double step = 1e-3) {
    auto en = [&](const Vec3& q) { return cluster_energy(q, e, basis, kappa, k, j); };
    const double e0 = en(P);
    Eigen::Matrix3d hs;
    for (int a = 0; a < 3; ++a) {
        const Vec3 ha = step * Vec3::Unit(a);
        hs(a, a) = (en(P + ha) - 2.0 * e0 + en(P - ha)) / (step * step);
        for (int b = a + 1; b < 3; ++b) {
            const Vec3 hb = step * Vec3::Unit(b);
            hs(a, b) = hs(b, a) =
                (en(P + ha + hb) - en(P + ha - hb) - en(P - ha + hb) + en(P - ha - hb)) / (4.0 * step * step);
        }
    }
    return hs;
}

// ---------------------------------------------------------------------------------------------
// Coherent factors.

/// f = G . grad / (|k| - k . grad) for one mode (G with polarization vector eps).
inline double coherent_amplitude(const Vec3& k, const Vec3& eps, const Vec3& grad, double kappa) {
    const double kn = k.norm();
    if (kn == 0.0) throw InvalidArgument("coherent_amplitude: k = 0");
    if (kn >= kappa) return 0.0;
    const double g = kCouplingPrefactor / std::sqrt(kn) * eps.dot(grad);
    return g / (kn - k.dot(grad));
}

struct CoherentFactor {
    int j = 0;
    Vec3 P = Vec3::Zero();
    Vec3 grad = Vec3::Zero();
    double kappa = 1.0;
    std::vector<Mode> modes;   // modes of annulus j
    Eigen::VectorXd amplitude; // f at each mode

    /// sqrt(w) f
    Eigen::VectorXd weighted() const {
        Eigen::VectorXd out(amplitude.size());
        for (Index i = 0; i < amplitude.size(); ++i) out[i] = std::sqrt(modes[i].weight) * amplitude[i];
        return out;
    }

    /// Weighted amplitudes on a grid that contains annulus j (zero elsewhere).
    VectorXcd embed(const ModeGrid& grid) const {
        VectorXcd out = VectorXcd::Zero(static_cast<Index>(grid.size()));
        std::size_t next = 0;
        for (std::size_t l = 0; l < grid.size(); ++l) {
            if (grid[l].annulus != j) continue;
            if (next >= modes.size() || grid[l].k != modes[next].k || grid[l].lambda != modes[next].lambda)
                throw InvalidArgument("coherent factor: grid does not carry the annulus modes");
            out[static_cast<Index>(l)] = std::sqrt(modes[next].weight) * amplitude[static_cast<Index>(next)];
            ++next;
        }
        if (next != modes.size()) throw InvalidArgument("coherent factor: annulus missing from grid");
        return out;
    }

    /// F = f k + G per mode (continuum values).
    Vec3 F(std::size_t i) const { return amplitude[static_cast<Index>(i)] * modes[i].k + coupling_vector(modes[i], kappa); }

    /// b = <f, omega f>
    double b() const {
        double s = 0.0;
        for (std::size_t i = 0; i < modes.size(); ++i)
            s += modes[i].weight * amplitude[static_cast<Index>(i)] * amplitude[static_cast<Index>(i)] * modes[i].omega();
        return s;
    }

    /// c = <f, F + G>
    Vec3 c() const {
        Vec3 s = Vec3::Zero();
        for (std::size_t i = 0; i < modes.size(); ++i)
            s += modes[i].weight * amplitude[static_cast<Index>(i)] * (F(i) + coupling_vector(modes[i], kappa));
        return s;
    }

    /// max over modes of |F . grad - omega f|
    double cancellation_defect() const {
        double worst = 0.0;
        for (std::size_t i = 0; i < modes.size(); ++i)
            worst = std::max(worst, std::abs(F(i).dot(grad) - modes[i].omega() * amplitude[static_cast<Index>(i)]));
        return worst;
    }

    double norm_sq() const { return weighted().squaredNorm(); }
};

/// At P = 0 the gradient vanishes by rotational symmetry and the factor is set to zero exactly.
inline CoherentFactor coherent_factor(const ScaleGeometry& geometry, const Resolution& res, int j, const Vec3& P,
                                      const Vec3& grad) {
    if (!(grad.norm() < 1.0)) throw RegimeError("coherent_factor: |grad E| >= 1");
    CoherentFactor f;
    f.j = j;
    f.P = P;
    f.grad = P.isZero(0.0) ? Vec3::Zero() : grad;
    f.kappa = geometry.kappa;
    f.modes = build_annulus_grid(geometry, j, res).modes;
    f.amplitude.resize(static_cast<Index>(f.modes.size()));
    for (std::size_t i = 0; i < f.modes.size(); ++i)
        f.amplitude[static_cast<Index>(i)] = coherent_amplitude(f.modes[i].k, f.modes[i].eps, f.grad, geometry.kappa);
    return f;
}

// ---------------------------------------------------------------------------------------------
// Dressing transform U_j = exp(-i e varpi(f_j)) on the basis of annuli < j+1.

struct DressingResult {
    MatrixXcd U;          // Fock space
    MatrixXcd h;          // H_{j+1} on two spinors
    MatrixXcd h_dressed;  // U H U*
    MatrixXcd h_closed;   // sqrt(T-check) + H_f - e phi(omega f) + q e^2 b
    double residual = 0.0;  // || (U H U* - closed form) restricted to <= 1 annulus photon ||
    double b = 0.0;
    Vec3 c = Vec3::Zero();
};

inline MatrixXcd apply_spinor_blocks(const MatrixXcd& u, const MatrixXcd& v) {
    const Index n = u.rows();
    const Index s = v.rows() / n;
    MatrixXcd out(v.rows(), v.cols());
    for (Index b = 0; b < s; ++b) out.middleRows(b * n, n) = u * v.middleRows(b * n, n);
    return out;
}

inline DressingResult dressing_step(const Vec3& P, double e, const FockBasis& joint, double kappa,
                                    const CoherentFactor& factor, const WeylConvention& conv = weyl_convention()) {
    const int j = factor.j;
    for (const auto& m : joint.modes().modes)
        if (m.annulus > j) throw InvalidArgument("dressing_step: joint basis extends past annulus j");
    const VectorXcd f = factor.embed(joint.modes());
    DressingResult r;
    r.b = factor.b();
    r.c = factor.c();
    r.U = weyl_matrix(joint, f, e);
    const auto set = assemble_hamiltonian(P, e, joint, kappa, j + 1, j + 1, 2);
    r.h = set.h;
    const Index n = joint.size();
    MatrixXcd u2 = MatrixXcd::Zero(2 * n, 2 * n);
    u2.topLeftCorner(n, n) = r.U;
    u2.bottomRightCorner(n, n) = r.U;
    r.h_dressed = u2 * r.h * u2.adjoint();

    // Pi-check = P - p_f + e phi(G on annuli < j) + e phi(f k + G on annulus j) - q e^2 c
    const double q = conv.quadratic();
    std::array<SparseMatrixXcd, 3> pi = kinetic_momentum(P, e, joint, kappa, j);
    SparseMatrixXcd id(n, n);
    id.setIdentity();
    for (int a = 0; a < 3; ++a) {
        const VectorXcd fa = weighted_amplitudes(joint.modes(), [&](const Mode& m) {
            if (m.annulus != j) return 0.0;
            return coupling_vector(m, kappa)[a];
        });
        VectorXcd big = fa;
        for (Index l = 0; l < f.size(); ++l) big[l] += f[l] * joint.modes()[static_cast<std::size_t>(l)].k[a];
        pi[a] += e * field_matrix(joint, big) - q * e * e * r.c[a] * id;
    }
    const SparseMatrixXcd s = pauli_from_momentum(pi);
    MatrixXcd t = MatrixXcd(s * s);
    t.diagonal().array() += 1.0;
    t = 0.5 * (t + t.adjoint()).eval();
    const auto te = eigh(t);
    r.h_closed = hermitian_function(te, [](double x) { return std::sqrt(std::max(x, 0.0)); });
    VectorXcd of = f;
    for (Index l = 0; l < f.size(); ++l) of[l] *= joint.modes()[static_cast<std::size_t>(l)].omega();
    const SparseMatrixXcd hf = field_energy(joint).sparse - e * field_matrix(joint, of) + q * e * e * r.b * id;
    r.h_closed += MatrixXcd(spinor_identity_kron(hf, 2));

    std::vector<Index> cols;
    for (Index i = 0; i < n; ++i) {
        int occ = 0;
        for (int l = 0; l < joint.mode_count(); ++l)
            if (joint.modes()[static_cast<std::size_t>(l)].annulus == j) occ += joint.occupation(i, l);
        if (occ <= 1) cols.push_back(i);
    }
    MatrixXcd diff(2 * n, 2 * static_cast<Index>(cols.size()));
    const MatrixXcd full = r.h_dressed - r.h_closed;
    for (int sblk = 0; sblk < 2; ++sblk)
        for (std::size_t c = 0; c < cols.size(); ++c)
            diff.col(sblk * static_cast<Index>(cols.size()) + static_cast<Index>(c)) = full.col(sblk * n + cols[c]);
    r.residual = op_norm(diff);
    return r;
}

// ---------------------------------------------------------------------------------------------
// Infrared diagnostics.

struct IrProbe {
    std::vector<double> max_ratio_per_annulus;  // annuli 0 .. j-1
    double max_ratio = kNaN;
    double max_residual = 0.0;
};

/// r_l = || (a_l + e nu sqrt(w_l) f_l) Pi ||, f_l = G . grad / (|k| - k . grad), normalized by
/// |k_l|^{1/2} / (e sqrt(w_l)). `vectors` is a two-spinor orthonormal cluster basis on `basis`.
inline IrProbe ir_bound_probe(const FockBasis& basis, const MatrixXcd& vectors, const Vec3& grad, double e,
                              double kappa, const WeylConvention& conv = weyl_convention()) {
    IrProbe p;
    int annuli = 0;
    for (const auto& m : basis.modes().modes) annuli = std::max(annuli, m.annulus + 1);
    p.max_ratio_per_annulus.assign(static_cast<std::size_t>(annuli), 0.0);
    if (annuli == 0) return p;
    for (int l = 0; l < basis.mode_count(); ++l) {
        const Mode& m = basis.modes()[static_cast<std::size_t>(l)];
        const MatrixXcd a = MatrixXcd(annihilator_matrix(basis, l));
        const double coh = e * conv.nu * std::sqrt(m.weight) * coherent_amplitude(m.k, m.eps, grad, kappa);
        const MatrixXcd res = apply_spinor_blocks(a, vectors) + coh * vectors;
        const double r = op_norm(res);
        p.max_residual = std::max(p.max_residual, r);
        const double ratio = e > 0.0 ? r * std::sqrt(m.omega()) / (e * std::sqrt(m.weight)) : 0.0;
        auto& slot = p.max_ratio_per_annulus[static_cast<std::size_t>(m.annulus)];
        slot = std::max(slot, ratio);
    }
    p.max_ratio = *std::max_element(p.max_ratio_per_annulus.begin(), p.max_ratio_per_annulus.end());
    return p;
}

/// <N> averaged over the cluster.
inline double photon_number_probe(const FockBasis& basis, const MatrixXcd& vectors) {
    const Eigen::VectorXd occ = MatrixXcd(number_operator(basis).sparse).diagonal().real();
    const Index n = basis.size();
    double s = 0.0;
    for (Index b = 0; b < vectors.rows() / n; ++b)
        for (Index c = 0; c < vectors.cols(); ++c)
            s += (occ.array() * vectors.col(c).segment(b * n, n).array().abs2()).sum();
    return s / static_cast<double>(vectors.cols());
}

// ---------------------------------------------------------------------------------------------
// The flow.

struct FlowOptions {
    ScaleGeometry geometry{1.0, 5};
    Resolution resolution;
    int n_max_total = 3;
    int n_max_per_mode = 2;
    int spinor_dim = 4;
    double cluster_rel_tol = 1e-8;
    bool finite_differences = false;
    double fd_step = 1e-4;
    double fd_hess_step = 1e-3;
};

struct ScaleRecord {
    int j = 0;
    double rho = 0.0;
    Index fock_dim = 0;
    double E = 0.0;
    double gap = kInf;
    int multiplicity = 0;
    double cluster_spread = 0.0;
    Eigen::VectorXd lowest;
    DerivativeSet derivatives;
    Vec3 hess_eigenvalues = Vec3::Zero();
    std::optional<Vec3> grad_fd;
    std::optional<Eigen::Matrix3d> hess_fd;
    CoherentFactor factor;
    double proj_increment = kNaN;  // || Pi~_j - Pi~_{j-1} ||, NaN at j = 0
    double N_expect = 0.0;
    IrProbe ir;
    MatrixXcd block_vectors;    // cluster of h on the basis of annuli < j
    MatrixXcd dressed_vectors;  // W_j applied to block_vectors
};

struct ScaleFlow {
    Vec3 P = Vec3::Zero();
    double e = 0.0;
    int j_max = 0;
    FlowOptions options;
    WeylConvention convention;
    std::vector<ScaleRecord> scales;
    bool complete = false;
    std::string failure;  // first stage error, if any
};

inline ScaleRecord run_scale(const Vec3& P, double e, int j, const FlowOptions& opt, const std::vector<CoherentFactor>& prior,
                             const WeylConvention& conv) {
    const FockBasis basis = scale_basis(opt.geometry, j, opt.resolution, opt.n_max_total, opt.n_max_per_mode);
    const auto set = assemble_hamiltonian(P, e, basis, opt.geometry.kappa, j, j, opt.spinor_dim);
    const auto fs = solve_fiber(set, opt.cluster_rel_tol, j);
    ScaleRecord r;
    r.j = j;
    r.rho = rho(opt.geometry, j);
    r.fock_dim = basis.size();
    r.E = fs.record.E;
    r.gap = fs.record.gap;
    r.multiplicity = fs.record.multiplicity;
    r.cluster_spread = fs.record.spread;
    r.lowest = fs.record.lowest;
    r.derivatives = fiber_derivatives(set, fs, true);
    r.hess_eigenvalues = r.derivatives.hess_eigenvalues();
    if (opt.finite_differences) {
        r.grad_fd = fd_gradient(P, e, basis, opt.geometry.kappa, j, j, opt.fd_step);
        r.hess_fd = fd_hessian(P, e, basis, opt.geometry.kappa, j, j, opt.fd_hess_step);
    }
    r.factor = coherent_factor(opt.geometry, opt.resolution, j, P, r.derivatives.grad);
    r.block_vectors = fs.block_vectors;

    VectorXcd g = VectorXcd::Zero(basis.mode_count());
    for (const auto& f : prior) g += f.embed(basis.modes());
    r.dressed_vectors = apply_spinor_blocks(weyl_matrix(basis, g, e), fs.block_vectors);
    r.N_expect = photon_number_probe(basis, fs.block_vectors);
    r.ir = ir_bound_probe(basis, fs.block_vectors, r.derivatives.grad, e, opt.geometry.kappa, conv);
    return r;
}

/// Scales j = 0 .. j_max; a stage error stops the flow and keeps the finished scales.
inline ScaleFlow run_flow(const Vec3& P, double e, int j_max, const FlowOptions& opt) {
    if (j_max < 0) throw InvalidArgument("run_flow: j_max must be nonnegative");
    ScaleFlow flow;
    flow.P = P;
    flow.e = e;
    flow.j_max = j_max;
    flow.options = opt;
    flow.convention = weyl_convention();
    std::vector<CoherentFactor> factors;
    for (int j = 0; j <= j_max; ++j) {
        try {
            ScaleRecord r = run_scale(P, e, j, opt, factors, flow.convention);
            if (j > 0) {
                const FockBasis basis = scale_basis(opt.geometry, j, opt.resolution, opt.n_max_total, opt.n_max_per_mode);
                const auto tf = factorize(basis, j - 1);
                const MatrixXcd prev = tf.embed_vacuum_spinor(flow.scales.back().dressed_vectors, 2);
                r.proj_increment = projection_distance(prev, r.dressed_vectors);
            }
            factors.push_back(r.factor);
            flow.scales.push_back(std::move(r));
        } catch (const Error& err) {
            flow.failure = "scale " + std::to_string(j) + ": " + err.what();
            return flow;
        }
    }
    flow.complete = true;
    return flow;
}

}  // namespace pfflow
