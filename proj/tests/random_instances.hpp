#pragma once

// Random augmented-model instances for the observability test, with a dense
// oracle built from scratch.

#include <algorithm>
#include <numbers>

#include "pimpc/model.hpp"
#include "support.hpp"

namespace testing_support {

using pimpc::DisturbanceChannels;

/// Orthogonal Q from the QR of a random matrix.
inline Matrix random_orthogonal(std::mt19937& rng, Eigen::Index n) {
    Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, n, n));
    return qr.householderQ() * Matrix::Identity(n, n);
}

struct Instance {
    Matrix A, B, C;
    DisturbanceChannels ch;
    Eigen::Index N = 1;
};

/// Mixed pass/fail constructions: eigenvalues of A placed on roots of
/// unity, zeroed or rank-deficient channels, or generic channels.
inline Instance random_instance(std::mt19937& rng) {
    std::uniform_int_distribution<int> nx_d(1, 6), N_d(1, 8), coin(0, 1), kind_d(0, 4);
    Instance in;
    const Eigen::Index nx = nx_d(rng);
    const Eigen::Index ny = std::uniform_int_distribution<int>(1, static_cast<int>(std::min<Eigen::Index>(3, nx)))(rng);
    in.N = N_d(rng);

    Matrix D = random_stable(rng, nx, 0.8);
    if (coin(rng) == 1) {
        // Place a root of unity in the spectrum through a block-diagonal core.
        const auto k = std::uniform_int_distribution<int>(0, static_cast<int>(in.N) - 1)(rng);
        const double th = 2.0 * std::numbers::pi * k / static_cast<double>(in.N);
        Matrix core = Matrix::Zero(nx, nx);
        Eigen::Index used = 0;
        if (std::abs(std::sin(th)) < 1e-12 || nx == 1) {
            // Real roots only fit a 1x1 block; a complex root with nx = 1 falls back to 1.
            core(0, 0) = std::abs(std::sin(th)) < 1e-12 ? std::cos(th) : 1.0;
            used = 1;
        } else {
            core.topLeftCorner(2, 2) << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
            used = 2;
        }
        if (nx > used) core.bottomRightCorner(nx - used, nx - used) = random_stable(rng, nx - used, 0.8);
        const Matrix Q = random_orthogonal(rng, nx);
        D = Q * core * Q.transpose();
    }
    in.A = D;
    in.B = random_matrix(rng, nx, 2);
    in.C = random_matrix(rng, ny, nx);

    switch (kind_d(rng)) {
        case 0:  // output disturbance
            in.ch = {Matrix::Zero(nx, ny), Matrix::Identity(ny, ny)};
            break;
        case 1:  // nothing enters: always unobservable
            in.ch = {Matrix::Zero(nx, ny), Matrix::Zero(ny, ny)};
            break;
        case 2: {  // rank-deficient output channel
            Matrix Cb = Matrix::Identity(ny, ny);
            Cb(ny - 1, ny - 1) = 0.0;
            in.ch = {Matrix::Zero(nx, ny), Cb};
            break;
        }
        case 3:  // state channels only
            in.ch = {random_matrix(rng, nx, ny), Matrix::Zero(ny, ny)};
            break;
        default:  // both
            in.ch = {random_matrix(rng, nx, ny), random_matrix(rng, ny, ny)};
            break;
    }
    return in;
}

/// S (x) I_ny.
inline Matrix kron_identity(const Matrix& S, Eigen::Index ny) {
    Matrix out = Matrix::Zero(S.rows() * ny, S.cols() * ny);
    for (Eigen::Index i = 0; i < S.rows(); ++i)
        for (Eigen::Index j = 0; j < S.cols(); ++j) out.block(i * ny, j * ny, ny, ny) = S(i, j) * Matrix::Identity(ny, ny);
    return out;
}

/// Observability of the dense augmented pair, built here from scratch.
inline bool oracle_augmented_observable(const Instance& in) {
    const auto nx = in.A.rows(), ny = in.C.rows(), N = in.N;
    Matrix S = Matrix::Zero(N, N);
    for (Eigen::Index k = 0; k < N; ++k) S(k, (k + 1) % N) = 1.0;
    const Matrix Sd = kron_identity(S, ny);
    const auto n = nx + ny * N;
    Matrix Aa = Matrix::Zero(n, n), Ca = Matrix::Zero(ny, n);
    Aa.topLeftCorner(nx, nx) = in.A;
    Aa.block(0, nx, nx, ny) = in.ch.Bbar;
    Aa.bottomRightCorner(ny * N, ny * N) = Sd;
    Ca.leftCols(nx) = in.C;
    Ca.block(0, nx, ny, ny) = in.ch.Cbar;
    return observable(Aa, Ca);
}

}  // namespace testing_support
