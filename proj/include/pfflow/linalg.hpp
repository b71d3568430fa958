// linalg.hpp - dense Hermitian eigensolver (LAPACK zheevr) and small matrix helpers

#pragma once

#include <complex>
#include <vector>

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "pfflow/error.hpp"

namespace pfflow {

using cd = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;
using SparseMatrixXcd = Eigen::SparseMatrix<cd>;

inline constexpr cd kI{0.0, 1.0};

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
struct HermitianEigen {
    Eigen::VectorXd values;
    MatrixXcd vectors;  // columns

    Eigen::Index size() const { return values.size(); }
};

// Phase convention: largest-magnitude component made real positive (first index wins ties).
inline void fix_phase(Eigen::Ref<VectorXcd> v) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > best_abs * (1.0 + 1e-12)) {
            best_abs = a;
            best = i;
        }
    }
    if (best_abs > 0.0) v *= std::conj(v[best]) / best_abs;
}

/// Full eigendecomposition of the Hermitian matrix `a` (lower triangle is read).
inline HermitianEigen eigh(const MatrixXcd& a) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n) throw InvalidArgument("eigh: matrix not square");
    HermitianEigen out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    if (n == 0) return out;
    MatrixXcd work = a;
    std::vector<lapack_int> support(2 * static_cast<std::size_t>(n));
    lapack_int found = 0;
    const lapack_int info = LAPACKE_zheevr(LAPACK_COL_MAJOR, 'V', 'A', 'L', static_cast<lapack_int>(n),
                                           work.data(), static_cast<lapack_int>(n), 0.0, 0.0, 0, 0, 0.0,
                                           &found, out.values.data(), out.vectors.data(),
                                           static_cast<lapack_int>(n), support.data());
    if (info != 0 || found != n) throw Error("eigh: zheevr failed with info " + std::to_string(info));
    for (Eigen::Index c = 0; c < n; ++c) fix_phase(out.vectors.col(c));
    return out;
}

inline double hermiticity_defect(const MatrixXcd& m) {
    if (m.size() == 0) return 0.0;
    return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

/// Spectral (operator 2-) norm.
inline double op_norm(const MatrixXcd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<MatrixXcd> svd(m);
    return svd.singularValues()(0);
}

/// Operator norm of P_a - P_b for the projections onto the column spans of
/// the orthonormal bases `a` and `b` (equal rank): sine of the largest principal angle.
inline double projection_distance(const MatrixXcd& a, const MatrixXcd& b) {
    if (a.cols() != b.cols()) throw InvalidArgument("projection_distance: rank mismatch");
    if (a.cols() == 0) return 0.0;
    return op_norm(b - a * (a.adjoint() * b));
}

/// Orthonormalize columns (modified Gram-Schmidt, two passes).
inline MatrixXcd orthonormalize(MatrixXcd v) {
    for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            for (Eigen::Index p = 0; p < c; ++p) {
                const cd overlap = v.col(p).dot(v.col(c));
                v.col(c) -= overlap * v.col(p);
            }
            const double nrm = v.col(c).norm();
            if (nrm == 0.0) throw DegenerateInput("orthonormalize: linearly dependent columns");
            v.col(c) /= nrm;
        }
    }
    return v;
}

/// f(A) for Hermitian A through its eigendecomposition.
template <class F>
MatrixXcd hermitian_function(const HermitianEigen& eig, F&& f) {
    Eigen::VectorXcd fv(eig.size());
    for (Eigen::Index i = 0; i < eig.size(); ++i) fv[i] = f(eig.values[i]);
    return eig.vectors * fv.asDiagonal() * eig.vectors.adjoint();
}

inline MatrixXcd kron(const MatrixXcd& a, const MatrixXcd& b) {
    MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

}  // namespace pfflow
