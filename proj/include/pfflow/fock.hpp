// fock.hpp - truncated bosonic Fock spaces, ladder/field/Weyl operators, tensor factorization

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pfflow/error.hpp"
#include "pfflow/hash.hpp"
#include "pfflow/linalg.hpp"
#include "pfflow/scales.hpp"

namespace pfflow {

using Index = Eigen::Index;

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

/// Occupation-number basis over a mode set with a total cap and a per-mode cap.
/// Order: by total photon number, then descending lexicographic in (n_0, n_1, ...),
/// so ordinal 0 is the vacuum and the one-photon states follow mode order.
class FockBasis {
public:
    FockBasis() = default;

    FockBasis(ModeGrid grid, int n_max_total, int n_max_per_mode)
        : grid_(std::move(grid)), n_total_(n_max_total), n_mode_(n_max_per_mode) {
        if (n_max_total < 0 || n_max_per_mode < 0) throw InvalidArgument("FockBasis: negative cap");
        if (n_max_per_mode > 255) throw InvalidArgument("FockBasis: per-mode cap above 255");
        const int m = mode_count();
        std::vector<std::uint8_t> occ(static_cast<std::size_t>(m), 0);
        const int top = m == 0 ? 0 : n_total_;
        for (int n = 0; n <= top; ++n) fill(occ, 0, n);
        for (Index i = 0; i < size(); ++i) index_.emplace(key(state(i)), i);
    }

    const ModeGrid& modes() const { return grid_; }
    int mode_count() const { return static_cast<int>(grid_.size()); }
    int n_max_total() const { return n_total_; }
    int n_max_per_mode() const { return n_mode_; }
    Index size() const { return static_cast<Index>(totals_.size()); }

    std::span<const std::uint8_t> state(Index i) const {
        const auto m = static_cast<std::size_t>(mode_count());
        return {occ_.data() + static_cast<std::size_t>(i) * m, m};
    }
    int occupation(Index i, int mode) const { return state(i)[static_cast<std::size_t>(mode)]; }
    int total(Index i) const { return totals_[static_cast<std::size_t>(i)]; }

    /// Ordinal of an occupation vector, or -1 if it is outside the caps.
    Index find(std::span<const std::uint8_t> occ) const {
        if (static_cast<int>(occ.size()) != mode_count()) return -1;
        auto it = index_.find(key(occ));
        return it == index_.end() ? -1 : it->second;
    }

    /// Fingerprint of modes and caps; two bases with equal hash have identical matrices.
    std::uint64_t hash() const {
        Fnv1a h;
        h.str("FockBasis").i64(n_total_).i64(n_mode_).i64(mode_count());
        for (const auto& md : grid_.modes)
            h.f64(md.k.x()).f64(md.k.y()).f64(md.k.z()).i64(md.lambda).f64(md.weight).i64(md.annulus);
        return h.value();
    }

private:
    static std::string key(std::span<const std::uint8_t> occ) {
        return std::string(reinterpret_cast<const char*>(occ.data()), occ.size());
    }

    void fill(std::vector<std::uint8_t>& occ, int pos, int remaining) {
        const int m = mode_count();
        if (pos == m) {
            if (remaining == 0) {
                occ_.insert(occ_.end(), occ.begin(), occ.end());
                int t = 0;
                for (auto v : occ) t += v;
                totals_.push_back(t);
            }
            return;
        }
        // remaining photons must fit into the modes left
        for (int v = std::min(remaining, n_mode_); v >= 0; --v) {
            if (remaining - v > static_cast<long long>(n_mode_) * (m - pos - 1)) break;
            occ[static_cast<std::size_t>(pos)] = static_cast<std::uint8_t>(v);
            fill(occ, pos + 1, remaining - v);
        }
        occ[static_cast<std::size_t>(pos)] = 0;
    }

    ModeGrid grid_;
    int n_total_ = 0;
    int n_mode_ = 0;
    std::vector<std::uint8_t> occ_;
    std::vector<int> totals_;
    std::unordered_map<std::string, Index> index_;
};

/// Matrix realization of an operator, tagged with the symbol it stands for.
struct OperatorMatrix {
    std::string provenance;
    bool hermitian = false;
    int spinor_dim = 1;
    bool is_dense = false;
    SparseMatrixXcd sparse;
    MatrixXcd dense;

    Index rows() const { return is_dense ? dense.rows() : sparse.rows(); }
    MatrixXcd to_dense() const { return is_dense ? dense : MatrixXcd(sparse); }

    static OperatorMatrix from_sparse(std::string tag, SparseMatrixXcd m, bool herm, int spinor = 1) {
        OperatorMatrix op;
        op.provenance = std::move(tag);
        op.hermitian = herm;
        op.spinor_dim = spinor;
        op.sparse = std::move(m);
        op.sparse.makeCompressed();
        return op;
    }
    static OperatorMatrix from_dense(std::string tag, MatrixXcd m, bool herm, int spinor = 1) {
        OperatorMatrix op;
        op.provenance = std::move(tag);
        op.hermitian = herm;
        op.spinor_dim = spinor;
        op.is_dense = true;
        op.dense = std::move(m);
        return op;
    }
};

inline void check_mode(const FockBasis& basis, int mode) {
    if (mode < 0 || mode >= basis.mode_count()) throw InvalidArgument("fock: mode index out of range");
}

/// a_l |.., n_l, ..> = sqrt(n_l) |.., n_l - 1, ..>
inline SparseMatrixXcd annihilator_matrix(const FockBasis& basis, int mode) {
    check_mode(basis, mode);
    std::vector<Eigen::Triplet<cd>> trip;
    std::vector<std::uint8_t> occ;
    for (Index i = 0; i < basis.size(); ++i) {
        const auto s = basis.state(i);
        const int n = s[static_cast<std::size_t>(mode)];
        if (n == 0) continue;
        occ.assign(s.begin(), s.end());
        occ[static_cast<std::size_t>(mode)] = static_cast<std::uint8_t>(n - 1);
        trip.emplace_back(basis.find(occ), i, std::sqrt(static_cast<double>(n)));
    }
    SparseMatrixXcd a(basis.size(), basis.size());
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
}

inline OperatorMatrix annihilator(const FockBasis& basis, int mode) {
    return OperatorMatrix::from_sparse("a_" + std::to_string(mode), annihilator_matrix(basis, mode), false);
}

inline OperatorMatrix creator(const FockBasis& basis, int mode) {
    SparseMatrixXcd a = annihilator_matrix(basis, mode).adjoint();
    return OperatorMatrix::from_sparse("a*_" + std::to_string(mode), std::move(a), false);
}

struct CcrAudit {
    double sub_cap_defect = 0.0;  // max |[a_l, a*_m] psi - delta_lm psi| over basis states below every cap
    double cap_defect = 0.0;      // max |[a_l, a*_l]_ii + n_l| over states where a*_l is blocked
    int blocked_states = 0;
    bool exact(double tol = 1e-13) const { return sub_cap_defect <= tol && cap_defect <= tol; }
};

/// [a_l, a*_m] = delta_lm below the caps; where creation in mode l is blocked, the diagonal
/// entry is -n_l instead (for one mode at per-mode cap N: -N).
inline CcrAudit ccr_audit(const FockBasis& basis) {
    CcrAudit r;
    const int m = basis.mode_count();
    std::vector<SparseMatrixXcd> a(static_cast<std::size_t>(m));
    for (int l = 0; l < m; ++l) a[static_cast<std::size_t>(l)] = annihilator_matrix(basis, l);
    for (int l = 0; l < m; ++l)
        for (int k = 0; k < m; ++k) {
            const auto& al = a[static_cast<std::size_t>(l)];
            const SparseMatrixXcd ak_dag = a[static_cast<std::size_t>(k)].adjoint();
            const MatrixXcd c = MatrixXcd(al * ak_dag) - MatrixXcd(ak_dag * al);
            for (Index i = 0; i < basis.size(); ++i) {
                const bool free_l = basis.occupation(i, l) < basis.n_max_per_mode();
                const bool free_k = basis.occupation(i, k) < basis.n_max_per_mode();
                if (basis.total(i) < basis.n_max_total() && free_l && free_k) {
                    VectorXcd col = c.col(i);
                    if (l == k) col[i] -= 1.0;
                    r.sub_cap_defect = std::max(r.sub_cap_defect, col.cwiseAbs().maxCoeff());
                } else if (l == k) {
                    ++r.blocked_states;
                    r.cap_defect = std::max(r.cap_defect, std::abs(c(i, i) + static_cast<double>(basis.occupation(i, l))));
                }
            }
        }
    return r;
}

/// dGamma(v): diagonal with entry sum_l n_l v_l.
inline SparseMatrixXcd second_quantize_matrix(const FockBasis& basis, std::span<const double> values) {
    if (static_cast<int>(values.size()) != basis.mode_count())
        throw InvalidArgument("second_quantize: one value per mode required");
    std::vector<Eigen::Triplet<cd>> trip;
    for (Index i = 0; i < basis.size(); ++i) {
        const auto s = basis.state(i);
        double v = 0.0;
        for (std::size_t l = 0; l < s.size(); ++l) v += s[l] * values[l];
        if (v != 0.0) trip.emplace_back(i, i, v);
    }
    SparseMatrixXcd d(basis.size(), basis.size());
    d.setFromTriplets(trip.begin(), trip.end());
    return d;
}

inline OperatorMatrix second_quantize(const FockBasis& basis, std::span<const double> values,
                                      std::string tag = "dGamma") {
    return OperatorMatrix::from_sparse(std::move(tag), second_quantize_matrix(basis, values), true);
}

inline std::vector<double> mode_values(const FockBasis& basis, auto&& fn) {
    std::vector<double> v;
    v.reserve(basis.modes().size());
    for (const auto& m : basis.modes().modes) v.push_back(fn(m));
    return v;
}

/// H_f = dGamma(|k|)
inline OperatorMatrix field_energy(const FockBasis& basis) {
    return second_quantize(basis, mode_values(basis, [](const Mode& m) { return m.omega(); }), "H_f");
}

/// N = dGamma(1)
inline OperatorMatrix number_operator(const FockBasis& basis) {
    return second_quantize(basis, mode_values(basis, [](const Mode&) { return 1.0; }), "N");
}

/// i-th component of the field momentum p_f = dGamma(k).
inline OperatorMatrix field_momentum(const FockBasis& basis, int i) {
    if (i < 0 || i > 2) throw InvalidArgument("field_momentum: component out of range");
    return second_quantize(basis, mode_values(basis, [i](const Mode& m) { return m.k[i]; }),
                           "p_f_" + std::to_string(i));
}

/// Weighted samples f_l = sqrt(w_l) f(k_l, lambda_l) of a function on the mode set.
inline VectorXcd weighted_amplitudes(const ModeGrid& grid, auto&& fn) {
    VectorXcd amp(static_cast<Index>(grid.size()));
    for (std::size_t l = 0; l < grid.size(); ++l) amp[static_cast<Index>(l)] = std::sqrt(grid[l].weight) * cd(fn(grid[l]));
    return amp;
}

/// Weighted samples of the i-th component of the coupling G, restricted to annuli < k_scale.
inline VectorXcd coupling_amplitudes(const ModeGrid& grid, double kappa, int i, int k_scale) {
    return weighted_amplitudes(grid, [&](const Mode& m) {
        return m.annulus < k_scale ? coupling_vector(m, kappa)[i] : 0.0;
    });
}

/// <f, g> = sum conj(f_l) g_l on weighted samples.
inline cd inner(const VectorXcd& f, const VectorXcd& g) { return f.dot(g); }

/// sum_l (c_l a*_l + d_l a_l)
inline SparseMatrixXcd linear_form(const FockBasis& basis, const VectorXcd& c_create, const VectorXcd& d_annihilate) {
    SparseMatrixXcd out(basis.size(), basis.size());
    for (int l = 0; l < basis.mode_count(); ++l) {
        const cd c = c_create[l], d = d_annihilate[l];
        if (c == 0.0 && d == 0.0) continue;
        const SparseMatrixXcd a = annihilator_matrix(basis, l);
        const SparseMatrixXcd ad = a.adjoint();
        out += c * ad + d * a;
    }
    return out;
}

inline void check_amplitudes(const FockBasis& basis, const VectorXcd& f) {
    if (f.size() != basis.mode_count()) throw InvalidArgument("field operator: amplitude list length mismatch");
}

/// phi(f) = 2^{-1/2} sum (f a* + conj(f) a)
inline SparseMatrixXcd field_matrix(const FockBasis& basis, const VectorXcd& f) {
    check_amplitudes(basis, f);
    return linear_form(basis, f * kInvSqrt2, f.conjugate() * kInvSqrt2);
}

/// varpi(f) = 2^{-1/2} sum (i f a* - i conj(f) a)
inline SparseMatrixXcd conjugate_field_matrix(const FockBasis& basis, const VectorXcd& f) {
    check_amplitudes(basis, f);
    return linear_form(basis, kI * f * kInvSqrt2, -kI * f.conjugate() * kInvSqrt2);
}

inline OperatorMatrix field_operator(const FockBasis& basis, const VectorXcd& f) {
    return OperatorMatrix::from_sparse("phi", field_matrix(basis, f), true);
}

inline OperatorMatrix conjugate_field_operator(const FockBasis& basis, const VectorXcd& f) {
    return OperatorMatrix::from_sparse("varpi", conjugate_field_matrix(basis, f), true);
}

/// U = exp(-i e varpi(f)) on the truncated space. Returns the identity exactly when e f = 0.
inline MatrixXcd weyl_matrix(const FockBasis& basis, const VectorXcd& f, double e) {
    check_amplitudes(basis, f);
    if (e < 0.0) throw InvalidArgument("weyl_operator: e must be nonnegative");
    const Index n = basis.size();
    if (e == 0.0 || f.isZero(0.0)) return MatrixXcd::Identity(n, n);
    const auto eig = eigh(MatrixXcd(conjugate_field_matrix(basis, f)));
    return hermitian_function(eig, [e](double x) { return std::exp(-kI * e * x); });
}

inline OperatorMatrix weyl_operator(const FockBasis& basis, const VectorXcd& f, double e) {
    return OperatorMatrix::from_dense("U", weyl_matrix(basis, f, e), false);
}

/// Spinor-major embedding 1_s (x) A: index = s * N + n.
inline SparseMatrixXcd spinor_identity_kron(const SparseMatrixXcd& a, int spinor_dim) {
    const Index n = a.rows();
    std::vector<Eigen::Triplet<cd>> trip;
    trip.reserve(static_cast<std::size_t>(a.nonZeros()) * static_cast<std::size_t>(spinor_dim));
    for (int s = 0; s < spinor_dim; ++s)
        for (Index c = 0; c < a.outerSize(); ++c)
            for (SparseMatrixXcd::InnerIterator it(a, c); it; ++it)
                trip.emplace_back(s * n + it.row(), s * n + it.col(), it.value());
    SparseMatrixXcd out(spinor_dim * n, spinor_dim * n);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

/// s (x) A for a constant spinor matrix s (spinor-major layout).
inline SparseMatrixXcd spinor_kron(const MatrixXcd& s, const SparseMatrixXcd& a) {
    const Index n = a.rows();
    std::vector<Eigen::Triplet<cd>> trip;
    for (Index si = 0; si < s.rows(); ++si)
        for (Index sj = 0; sj < s.cols(); ++sj) {
            const cd c = s(si, sj);
            if (c == 0.0) continue;
            for (Index col = 0; col < a.outerSize(); ++col)
                for (SparseMatrixXcd::InnerIterator it(a, col); it; ++it)
                    trip.emplace_back(si * n + it.row(), sj * n + it.col(), c * it.value());
        }
    SparseMatrixXcd out(s.rows() * n, s.cols() * n);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

/// Joint basis over (left modes) u (right modes) seen as admitted pairs (l, r).
struct TensorFactorization {
    FockBasis joint;
    FockBasis left;
    FockBasis right;
    std::vector<Index> to_left;   // joint ordinal -> left ordinal
    std::vector<Index> to_right;  // joint ordinal -> right ordinal
    std::vector<Index> pair_to_joint;  // l * right.size() + r -> joint ordinal or -1

    Index joint_index(Index l, Index r) const {
        return pair_to_joint[static_cast<std::size_t>(l * right.size() + r)];
    }

    Index admitted_pairs() const {
        return static_cast<Index>(std::count_if(pair_to_joint.begin(), pair_to_joint.end(),
                                                [](Index v) { return v >= 0; }));
    }

    /// psi_L (x) psi_R projected onto the admitted pairs.
    VectorXcd embed(const VectorXcd& psi_left, const VectorXcd& psi_right) const {
        if (psi_left.size() != left.size() || psi_right.size() != right.size())
            throw InvalidArgument("embed: factor dimension mismatch");
        VectorXcd out = VectorXcd::Zero(joint.size());
        for (Index j = 0; j < joint.size(); ++j)
            out[j] = psi_left[to_left[static_cast<std::size_t>(j)]] * psi_right[to_right[static_cast<std::size_t>(j)]];
        return out;
    }

    /// psi (x) Omega_right, exact (never truncated).
    VectorXcd embed_vacuum(const VectorXcd& psi_left) const {
        VectorXcd vac = VectorXcd::Zero(right.size());
        vac[0] = 1.0;
        return embed(psi_left, vac);
    }

    /// Spinor-major version of embed_vacuum for spinor_dim * left.size() vectors.
    MatrixXcd embed_vacuum_spinor(const MatrixXcd& left_vectors, int spinor_dim) const {
        const Index nl = left.size(), nj = joint.size();
        if (left_vectors.rows() != spinor_dim * nl) throw InvalidArgument("embed_vacuum_spinor: dimension mismatch");
        MatrixXcd out = MatrixXcd::Zero(spinor_dim * nj, left_vectors.cols());
        for (int s = 0; s < spinor_dim; ++s)
            for (Index l = 0; l < nl; ++l) out.row(s * nj + joint_index(l, 0)) = left_vectors.row(s * nl + l);
        return out;
    }

    /// Coefficient matrix C(l, r) of a joint vector.
    MatrixXcd restrict(const VectorXcd& psi) const {
        if (psi.size() != joint.size()) throw InvalidArgument("restrict: dimension mismatch");
        MatrixXcd c = MatrixXcd::Zero(left.size(), right.size());
        for (Index j = 0; j < joint.size(); ++j)
            c(to_left[static_cast<std::size_t>(j)], to_right[static_cast<std::size_t>(j)]) = psi[j];
        return c;
    }

    /// (A (x) 1) restricted to the admitted pairs.
    MatrixXcd lift_left(const MatrixXcd& a) const {
        if (a.rows() != left.size() || a.cols() != left.size()) throw InvalidArgument("lift_left: dimension mismatch");
        const Index n = joint.size();
        MatrixXcd out = MatrixXcd::Zero(n, n);
        for (Index j = 0; j < n; ++j)
            for (Index i = 0; i < n; ++i)
                if (to_right[static_cast<std::size_t>(i)] == to_right[static_cast<std::size_t>(j)])
                    out(i, j) = a(to_left[static_cast<std::size_t>(i)], to_left[static_cast<std::size_t>(j)]);
        return out;
    }

    /// (1 (x) B) restricted to the admitted pairs.
    MatrixXcd lift_right(const MatrixXcd& b) const {
        if (b.rows() != right.size() || b.cols() != right.size()) throw InvalidArgument("lift_right: dimension mismatch");
        const Index n = joint.size();
        MatrixXcd out = MatrixXcd::Zero(n, n);
        for (Index j = 0; j < n; ++j)
            for (Index i = 0; i < n; ++i)
                if (to_left[static_cast<std::size_t>(i)] == to_left[static_cast<std::size_t>(j)])
                    out(i, j) = b(to_right[static_cast<std::size_t>(i)], to_right[static_cast<std::size_t>(j)]);
        return out;
    }
};

/// Split the joint basis into modes with annulus < cut (left) and the rest (right).
/// Factors inherit the joint caps, so the admitted pairs are exactly n(l) + n(r) <= n_max_total.
inline TensorFactorization factorize(const FockBasis& joint, int cut) {
    const auto& modes = joint.modes().modes;
    ModeGrid lg, rg;
    bool seen_right = false;
    for (const auto& m : modes) {
        if (m.annulus < cut) {
            if (seen_right) throw InvalidArgument("factorize: left modes must precede right modes");
            lg.modes.push_back(m);
        } else {
            seen_right = true;
            rg.modes.push_back(m);
        }
    }
    TensorFactorization tf;
    tf.joint = joint;
    tf.left = FockBasis(lg, joint.n_max_total(), joint.n_max_per_mode());
    tf.right = FockBasis(rg, joint.n_max_total(), joint.n_max_per_mode());
    const auto ml = lg.size();
    tf.pair_to_joint.assign(static_cast<std::size_t>(tf.left.size() * tf.right.size()), -1);
    for (Index j = 0; j < joint.size(); ++j) {
        const auto s = joint.state(j);
        const Index l = tf.left.find(s.subspan(0, ml));
        const Index r = tf.right.find(s.subspan(ml));
        if (l < 0 || r < 0) throw Error("factorize: joint state not representable in the factors");
        tf.to_left.push_back(l);
        tf.to_right.push_back(r);
        tf.pair_to_joint[static_cast<std::size_t>(l * tf.right.size() + r)] = j;
    }
    return tf;
}

/// Factorization from two explicit factor grids; rejects overlapping mode sets.
inline TensorFactorization factorize(const ModeGrid& left, const ModeGrid& right, int n_max_total, int n_max_per_mode) {
    for (const auto& a : left.modes)
        for (const auto& b : right.modes)
            if (a.k == b.k && a.lambda == b.lambda) throw InvalidArgument("factorize: overlapping mode sets");
    int cut = 0;
    for (const auto& m : left.modes) cut = std::max(cut, m.annulus + 1);
    for (const auto& m : right.modes)
        if (m.annulus < cut) throw InvalidArgument("factorize: right modes must lie in deeper annuli");
    ModeGrid joint = left;
    joint.append(right);
    return factorize(FockBasis(joint, n_max_total, n_max_per_mode), cut);
}

}  // namespace pfflow
