#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "pimpc/model.hpp"

namespace pimpc {

class NumericsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// SVD rank threshold: max(m, n) * sigma_max * eps * 2^6.
double rank_tolerance(Eigen::Index rows, Eigen::Index cols, double sigma_max);

Eigen::Index numerical_rank(const Matrix& M);
Eigen::Index numerical_rank(const ComplexMatrix& M);

/// max |lambda| over the eigenvalues of a square matrix.
double spectral_radius(const Matrix& M);

/// Hautus tests restricted to eigenvalues with |lambda| >= 1.
bool is_stabilizable(const Matrix& A, const Matrix& B);
bool is_detectable(const Matrix& A, const Matrix& C);

struct DareSolution {
    Matrix P;
    Matrix K;  // u = K x
    int iterations = 0;
    double residual = 0.0;
};

struct DareOptions {
    int max_doubling_iterations = 100;
    int max_fixed_point_iterations = 200000;
    double tolerance = 1e-13;
    double fixed_point_damping = 0.5;
};

/// Frobenius norm of P - (Q + A'PA - A'PB (R + B'PB)^-1 B'PA).
double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P);

/// Stabilizing solution of the discrete algebraic Riccati equation by
/// structured doubling, with a damped fixed-point fallback.
DareSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                        const DareOptions& options = {});

struct KalmanGain {
    /// Stored with the estimator sign convention: the estimator matrix is
    /// A + L C and the innovation is (-y + C x_hat).
    Matrix L;
    Matrix Sigma;
};

/// Steady-state Kalman predictor gain via the dual DARE.
KalmanGain solve_dual_dare_kalman(const Matrix& A, const Matrix& C, const Matrix& W, const Matrix& V);

/// Solver for the block-cyclic system
///
///   [ I(x)A - S(x)I   I(x)B ] [x]   [top]
///   [ I(x)G           0     ] [u] = [bot]
///
/// with N blocks. The operator is block circulant, so a unitary block DFT
/// splits it into N independent (nx + nr) x (nx + nu) complex systems, one
/// per root of unity. Each is solved in the minimum-norm sense; unitarity
/// makes the assembled result the minimum-norm solution of the full system.
class BlockCyclicSolver {
public:
    BlockCyclicSolver(const Matrix& A, const Matrix& B, const Matrix& G, Eigen::Index N);

    [[nodiscard]] Eigen::Index period() const { return N_; }
    [[nodiscard]] Eigen::Index rows() const { return N_ * (nx_ + nr_); }
    [[nodiscard]] Eigen::Index cols() const { return N_ * (nx_ + nu_); }

    /// rhs = [top (N nx); bot (N nr)]; returns [x (N nx); u (N nu)].
    /// One round of iterative refinement follows the transform solve.
    [[nodiscard]] Vector solve(const Vector& rhs) const;

    /// Operator applied to [x; u]; used for residual checks.
    [[nodiscard]] Vector apply(const Vector& xu) const;

    /// Dense assembly of the operator.
    [[nodiscard]] Matrix assemble_dense() const;

private:
    [[nodiscard]] Vector transform_solve(const Vector& rhs) const;

    Matrix A_, B_, G_;
    Eigen::Index N_, nx_, nu_, nr_;
    std::vector<ComplexMatrix> pinv_;  // one per frequency 0..N/2
    ComplexMatrix twiddle_;            // N x N, exp(-i 2 pi j k / N) / sqrt(N)
};

}  // namespace pimpc
