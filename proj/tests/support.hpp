#pragma once

// Independent oracles and random-instance generators shared by the tests.
// Nothing here calls into the library's own checks.

#include <cmath>
#include <complex>
#include <random>

#include <Eigen/Dense>

namespace testing_support {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix random_matrix(std::mt19937& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix M(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) M(i, j) = n(rng);
    return M;
}

inline Vector random_vector(std::mt19937& rng, Eigen::Index n, double scale = 1.0) {
    return random_matrix(rng, n, 1, scale);
}

/// Random matrix rescaled to the given spectral radius.
inline Matrix random_stable(std::mt19937& rng, Eigen::Index n, double radius) {
    Matrix A = random_matrix(rng, n, n);
    const double rho = A.eigenvalues().cwiseAbs().maxCoeff();
    return rho > 0.0 ? Matrix(A * (radius / rho)) : A;
}

/// Rank from a plain SVD with a relative cutoff.
inline Eigen::Index svd_rank(const Matrix& M, double rel = 1e-9) {
    if (M.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) r += s(i) > rel * s(0) ? 1 : 0;
    return r;
}

/// Full column rank of [C; CA; ...; CA^{n-1}].
inline bool observable(const Matrix& A, const Matrix& C) {
    const auto n = A.rows();
    Matrix O(C.rows() * n, n);
    Matrix blk = C;
    for (Eigen::Index k = 0; k < n; ++k) {
        O.middleRows(k * C.rows(), C.rows()) = blk;
        blk = blk * A;
    }
    // Scale each block row so powers of A do not dominate the cutoff.
    for (Eigen::Index i = 0; i < O.rows(); ++i) {
        const double nrm = O.row(i).norm();
        if (nrm > 0.0) O.row(i) /= nrm;
    }
    return svd_rank(O) == n;
}

/// Riccati map residual, written out independently.
inline double riccati_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P) {
    const Matrix S = R + B.transpose() * P * B;
    const Matrix rhs = Q + A.transpose() * P * A - A.transpose() * P * B * S.ldlt().solve(B.transpose() * P * A);
    return (P - rhs).norm();
}

/// KKT conditions of min 1/2 x'Hx + g'x over lo <= x <= hi, checked per
/// coordinate from the gradient alone.
struct KktReport {
    double stationarity = 0.0;  // |grad_i| on free coordinates
    double feasibility = 0.0;   // bound violation
    double sign = 0.0;          // wrongly signed gradient at an active bound
};

inline KktReport box_kkt(const Matrix& H, const Vector& g, const Vector& lo, const Vector& hi, const Vector& x,
                         double active_tol = 1e-7) {
    KktReport rep;
    const Vector grad = H * x + g;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        rep.feasibility = std::max({rep.feasibility, lo(i) - x(i), x(i) - hi(i)});
        const bool at_lo = x(i) <= lo(i) + active_tol;
        const bool at_hi = x(i) >= hi(i) - active_tol;
        if (at_lo && at_hi) continue;
        if (at_lo) {
            rep.sign = std::max(rep.sign, -grad(i));  // must push downward: grad >= 0
        } else if (at_hi) {
            rep.sign = std::max(rep.sign, grad(i));   // grad <= 0
        } else {
            rep.stationarity = std::max(rep.stationarity, std::abs(grad(i)));
        }
    }
    return rep;
}

/// Dense minimum-norm solution through complete orthogonal decomposition.
inline Vector min_norm_solve(const Matrix& M, const Vector& b) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(M);
    return cod.solve(b);
}

}  // namespace testing_support
