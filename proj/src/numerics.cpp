#include "pimpc/numerics.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace pimpc {

double rank_tolerance(Eigen::Index rows, Eigen::Index cols, double sigma_max) {
    return static_cast<double>(std::max(rows, cols)) * sigma_max * std::numeric_limits<double>::epsilon() * 64.0;
}

namespace {

template <typename M>
Eigen::Index rank_of(const M& m) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<M> svd(m);
    const auto& s = svd.singularValues();
    const double tol = rank_tolerance(m.rows(), m.cols(), s(0));
    Eigen::Index r = 0;
    while (r < s.size() && s(r) > tol) ++r;
    return r;
}

Eigen::VectorXcd eigenvalues(const Matrix& M) {
    Eigen::EigenSolver<Matrix> es(M, false);
    if (es.info() != Eigen::Success) throw NumericsError("eigenvalue computation did not converge");
    return es.eigenvalues();
}

// Hautus test against every eigenvalue outside the open unit disc.
bool hautus_unstable_modes(const Matrix& A, const Matrix& other, bool columns) {
    const auto n = A.rows();
    const auto ev = eigenvalues(A);
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (std::abs(ev(i)) < 1.0 - 1e-10) continue;
        ComplexMatrix shifted = A.cast<std::complex<double>>();
        shifted.diagonal().array() -= ev(i);
        ComplexMatrix M;
        if (columns) {
            M.resize(n, n + other.cols());
            M << shifted, other.cast<std::complex<double>>();
        } else {
            M.resize(n + other.rows(), n);
            M << shifted, other.cast<std::complex<double>>();
        }
        if (numerical_rank(M) < n) return false;
    }
    return true;
}

Matrix symmetrize(const Matrix& M) { return 0.5 * (M + M.transpose()); }

Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P) {
    const Matrix BtP = B.transpose() * P;
    const Matrix S = R + BtP * B;
    return Q + A.transpose() * P * A - (BtP * A).transpose() * S.ldlt().solve(BtP * A);
}

Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& R, const Matrix& P) {
    const Matrix BtP = B.transpose() * P;
    return -(R + BtP * B).ldlt().solve(BtP * A);
}

}  // namespace

Eigen::Index numerical_rank(const Matrix& M) { return rank_of(M); }
Eigen::Index numerical_rank(const ComplexMatrix& M) { return rank_of(M); }

double spectral_radius(const Matrix& M) {
    if (M.rows() != M.cols()) throw NumericsError("spectral radius needs a square matrix");
    if (M.size() == 0) return 0.0;
    return eigenvalues(M).cwiseAbs().maxCoeff();
}

bool is_stabilizable(const Matrix& A, const Matrix& B) { return hautus_unstable_modes(A, B, true); }
bool is_detectable(const Matrix& A, const Matrix& C) { return hautus_unstable_modes(A, C, false); }

double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P) {
    return (P - riccati_map(A, B, Q, R, P)).norm();
}

DareSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                        const DareOptions& options) {
    const auto n = A.rows();
    if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols() ||
        R.cols() != B.cols()) {
        throw NumericsError("DARE dimensions are inconsistent");
    }
    Eigen::LLT<Matrix> r_chol(symmetrize(R));
    if (r_chol.info() != Eigen::Success) throw NumericsError("R must be positive definite");

    const Matrix I = Matrix::Identity(n, n);
    DareSolution out;

    // Structured doubling: A_k -> 0, H_k -> P quadratically.
    Matrix Ak = A;
    Matrix Gk = symmetrize(B * r_chol.solve(B.transpose()));
    Matrix Hk = symmetrize(Q);
    bool converged = false;
    for (int it = 1; it <= options.max_doubling_iterations; ++it) {
        const Eigen::PartialPivLU<Matrix> W(I + Gk * Hk);
        const Matrix WinvA = W.solve(Ak);
        const Matrix WinvG = W.solve(Gk);
        const Matrix Hnext = symmetrize(Hk + Ak.transpose() * Hk * WinvA);
        Gk = symmetrize(Gk + Ak * WinvG * Ak.transpose());
        Ak = Ak * WinvA;
        const double change = (Hnext - Hk).norm();
        Hk = Hnext;
        out.iterations = it;
        if (!Hk.allFinite()) break;
        if (change <= options.tolerance * (1.0 + Hk.norm())) {
            converged = true;
            break;
        }
    }

    auto accept = [&](const Matrix& P) {
        if (!P.allFinite()) return false;
        const Matrix K = lqr_gain(A, B, R, P);
        return spectral_radius(A + B * K) < 1.0 &&
               dare_residual(A, B, Q, R, P) <= 1e-9 * (1.0 + P.norm());
    };

    Matrix P = Hk;
    if (converged && P.allFinite()) {
        // One fixed-point sweep cleans up roundoff left by the doubling.
        P = symmetrize(riccati_map(A, B, Q, R, P));
    }
    if (!(converged && accept(P))) {
        P = symmetrize(Q);
        int it = 0;
        for (; it < options.max_fixed_point_iterations; ++it) {
            const Matrix next = symmetrize(riccati_map(A, B, Q, R, P));
            const double change = (next - P).norm();
            P += options.fixed_point_damping * (next - P);
            if (!P.allFinite()) break;
            if (change <= options.tolerance * (1.0 + P.norm())) break;
        }
        out.iterations += it;
        if (!accept(P)) throw NumericsError("DARE did not converge to a stabilizing solution");
    }

    out.P = P;
    out.K = lqr_gain(A, B, R, P);
    out.residual = dare_residual(A, B, Q, R, P);
    return out;
}

KalmanGain solve_dual_dare_kalman(const Matrix& A, const Matrix& C, const Matrix& W, const Matrix& V) {
    const auto dual = solve_dare(A.transpose(), C.transpose(), W, V);
    const Matrix& Sigma = dual.P;
    const Matrix S = C * Sigma * C.transpose() + V;
    // Predictor gain A Sigma C' S^-1, negated for the (-y + C x_hat) innovation.
    const Matrix gain = S.ldlt().solve(C * Sigma * A.transpose()).transpose();
    return {-gain, Sigma};
}

BlockCyclicSolver::BlockCyclicSolver(const Matrix& A, const Matrix& B, const Matrix& G, Eigen::Index N)
    : A_(A), B_(B), G_(G), N_(N), nx_(A.rows()), nu_(B.cols()), nr_(G.rows()) {
    if (N < 1) throw NumericsError("block-cyclic period must be positive");
    if (A.cols() != nx_ || B.rows() != nx_ || G.cols() != nx_) throw NumericsError("block-cyclic dimensions mismatch");

    using cd = std::complex<double>;
    pinv_.reserve(static_cast<std::size_t>(N / 2 + 1));
    for (Eigen::Index j = 0; j <= N / 2; ++j) {
        const cd lambda = root_of_unity(j, N);
        ComplexMatrix M = ComplexMatrix::Zero(nx_ + nr_, nx_ + nu_);
        M.topLeftCorner(nx_, nx_) = A.cast<cd>();
        M.topLeftCorner(nx_, nx_).diagonal().array() -= lambda;
        M.topRightCorner(nx_, nu_) = B.cast<cd>();
        M.bottomLeftCorner(nr_, nx_) = G.cast<cd>();
        Eigen::JacobiSVD<ComplexMatrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        const double tol = rank_tolerance(M.rows(), M.cols(), s(0));
        if (s.size() < nx_ + nr_ || s(nx_ + nr_ - 1) <= tol) {
            throw NumericsError("block-cyclic operator is rank deficient at root " + std::to_string(j) + "/" +
                                std::to_string(N));
        }
        pinv_.push_back(svd.matrixV() * s.cwiseInverse().asDiagonal() * svd.matrixU().adjoint());
    }

    twiddle_.resize(N, N);
    const double scale = 1.0 / std::sqrt(static_cast<double>(N));
    for (Eigen::Index j = 0; j < N; ++j) {
        for (Eigen::Index k = 0; k < N; ++k) {
            twiddle_(j, k) = std::conj(root_of_unity((j * k) % N, N)) * scale;
        }
    }
}

Vector BlockCyclicSolver::solve(const Vector& rhs) const {
    if (rhs.size() != rows()) throw NumericsError("block-cyclic rhs has wrong length");
    Vector xu = transform_solve(rhs);
    // The correction lies in the row space, so minimum norm is preserved.
    xu += transform_solve(rhs - apply(xu));
    return xu;
}

Vector BlockCyclicSolver::transform_solve(const Vector& rhs) const {
    using cd = std::complex<double>;
    const auto m = nx_ + nr_;
    const auto n = nx_ + nu_;

    // Per-step rhs blocks as columns: [top_k; bot_k].
    ComplexMatrix blocks(m, N_);
    for (Eigen::Index k = 0; k < N_; ++k) {
        blocks.col(k).head(nx_) = rhs.segment(k * nx_, nx_).cast<cd>();
        blocks.col(k).tail(nr_) = rhs.segment(N_ * nx_ + k * nr_, nr_).cast<cd>();
    }
    // Forward DFT over the block index: F(:, j) = sum_k blocks(:, k) w^{-jk}.
    const ComplexMatrix freq = blocks * twiddle_.transpose();

    ComplexMatrix sol(n, N_);
    for (Eigen::Index j = 0; j <= N_ / 2; ++j) {
        sol.col(j) = pinv_[static_cast<std::size_t>(j)] * freq.col(j);
        if (j != 0 && 2 * j != N_) {
            sol.col(N_ - j) = pinv_[static_cast<std::size_t>(j)].conjugate() * freq.col(N_ - j);
        }
    }
    // Inverse DFT uses the conjugate (unitary) transform.
    const ComplexMatrix time = sol * twiddle_.conjugate();

    Vector out(cols());
    for (Eigen::Index k = 0; k < N_; ++k) {
        out.segment(k * nx_, nx_) = time.col(k).head(nx_).real();
        out.segment(N_ * nx_ + k * nu_, nu_) = time.col(k).tail(nu_).real();
    }
    return out;
}

Vector BlockCyclicSolver::apply(const Vector& xu) const {
    if (xu.size() != cols()) throw NumericsError("block-cyclic argument has wrong length");
    Vector out(rows());
    for (Eigen::Index k = 0; k < N_; ++k) {
        const auto next = (k + 1) % N_;
        const auto x = xu.segment(k * nx_, nx_);
        const auto u = xu.segment(N_ * nx_ + k * nu_, nu_);
        out.segment(k * nx_, nx_) = A_ * x + B_ * u - xu.segment(next * nx_, nx_);
        out.segment(N_ * nx_ + k * nr_, nr_) = G_ * x;
    }
    return out;
}

Matrix BlockCyclicSolver::assemble_dense() const {
    Matrix M = Matrix::Zero(rows(), cols());
    for (Eigen::Index k = 0; k < N_; ++k) {
        const auto next = (k + 1) % N_;
        M.block(k * nx_, k * nx_, nx_, nx_) += A_;
        M.block(k * nx_, next * nx_, nx_, nx_) -= Matrix::Identity(nx_, nx_);
        M.block(k * nx_, N_ * nx_ + k * nu_, nx_, nu_) = B_;
        M.block(N_ * nx_ + k * nr_, k * nx_, nr_, nx_) = G_;
    }
    return M;
}

}  // namespace pimpc
