#include "pimpc/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "pimpc/numerics.hpp"

namespace pimpc {

namespace {

std::string dims(const Matrix& M) {
    std::ostringstream os;
    os << M.rows() << "x" << M.cols();
    return os.str();
}

bool full_row_rank(const Matrix& M) { return numerical_rank(M) == M.rows(); }

Matrix controllability_matrix(const Matrix& A, const Matrix& B) {
    const auto n = A.rows();
    Matrix K(n, n * B.cols());
    Matrix block = B;
    for (Eigen::Index k = 0; k < n; ++k) {
        K.middleCols(k * B.cols(), B.cols()) = block;
        block = A * block;
    }
    return K;
}

// Row space of [C; CA; CA^2; ...] grown with re-orthonormalisation at each
// power so that decaying or growing modes do not swamp the rank decision.
Eigen::Index observable_dimension(const Matrix& A, const Matrix& C) {
    const auto n = A.cols();
    auto orth_rows = [](const Matrix& M) -> Matrix {
        if (M.rows() == 0) return M;
        Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        const double tol = rank_tolerance(M.rows(), M.cols(), s.size() ? s(0) : 0.0);
        Eigen::Index r = 0;
        while (r < s.size() && s(r) > tol) ++r;
        return svd.matrixV().leftCols(r).transpose();
    };
    Matrix V = orth_rows(C);
    for (Eigen::Index k = 0; k < n && V.rows() < n; ++k) {
        Matrix stacked(V.rows() * 2, n);
        stacked << V, V * A;
        Matrix next = orth_rows(stacked);
        if (next.rows() == V.rows()) break;
        V = std::move(next);
    }
    return V.rows();
}

}  // namespace

ConstraintBox::ConstraintBox(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) throw ModelError("constraint box bounds differ in length");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        if (std::isnan(lower(i)) || std::isnan(upper(i)) || lower(i) > upper(i)) {
            throw ModelError("constraint box has lower > upper at index " + std::to_string(i));
        }
    }
}

ConstraintBox ConstraintBox::unbounded(Eigen::Index n) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {Vector::Constant(n, -inf), Vector::Constant(n, inf)};
}

bool ConstraintBox::is_bounded(Eigen::Index i) const {
    return std::isfinite(lower(i)) || std::isfinite(upper(i));
}

bool ConstraintBox::any_bounded() const {
    for (Eigen::Index i = 0; i < size(); ++i) {
        if (is_bounded(i)) return true;
    }
    return false;
}

bool ConstraintBox::contains(const Vector& v, double tol) const {
    for (Eigen::Index i = 0; i < size(); ++i) {
        if (v(i) < lower(i) - tol || v(i) > upper(i) + tol) return false;
    }
    return true;
}

Vector ConstraintBox::project(const Vector& v) const { return v.cwiseMax(lower).cwiseMin(upper); }

LtiModel::LtiModel(Matrix A, Matrix B, Matrix C) : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)) {
    if (A_.rows() == 0 || A_.rows() != A_.cols()) throw ModelError("A must be square and non-empty, got " + dims(A_));
    if (B_.rows() != A_.rows() || B_.cols() == 0) throw ModelError("B must have nx rows, got " + dims(B_));
    if (C_.cols() != A_.rows() || C_.rows() == 0) throw ModelError("C must have nx columns, got " + dims(C_));
    if (!A_.allFinite() || !B_.allFinite() || !C_.allFinite()) throw ModelError("model matrices must be finite");
    if (!full_row_rank(C_)) throw ModelError("C must have full row rank");
    if (numerical_rank(controllability_matrix(A_, B_)) != nx()) throw ModelError("(A, B) is not controllable");
    if (observable_dimension(A_, C_) != nx()) throw ModelError("(A, C) is not observable");
}

LtiModel with_delayed_output(const LtiModel& model) {
    const auto nx = model.nx();
    const auto ny = model.ny();
    Matrix A = Matrix::Zero(nx + ny, nx + ny);
    A.topLeftCorner(nx, nx) = model.A();
    A.bottomLeftCorner(ny, nx) = model.C();
    Matrix B = Matrix::Zero(nx + ny, model.nu());
    B.topRows(nx) = model.B();
    Matrix C = Matrix::Zero(2 * ny, nx + ny);
    C.topLeftCorner(ny, nx) = model.C();
    C.bottomRightCorner(ny, ny).setIdentity();
    return {std::move(A), std::move(B), std::move(C)};
}

SelectionMatrix::SelectionMatrix(Matrix H) : H_(std::move(H)) {
    if (H_.rows() == 0 || H_.rows() > H_.cols()) throw ModelError("H must satisfy 0 < nr <= ny, got " + dims(H_));
    if (!full_row_rank(H_)) throw ModelError("H must have full row rank");
}

PeriodicReference::PeriodicReference(std::vector<Vector> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw ModelError("reference needs at least one sample");
    for (const auto& s : samples_) {
        if (s.size() != samples_.front().size() || s.size() == 0) throw ModelError("reference samples differ in dimension");
        if (!s.allFinite()) throw ModelError("reference samples must be finite");
    }
}

const Vector& PeriodicReference::at(std::int64_t t) const {
    const auto N = static_cast<std::int64_t>(samples_.size());
    auto k = t % N;
    if (k < 0) k += N;
    return samples_[static_cast<std::size_t>(k)];
}

Vector PeriodicReference::window(std::int64_t t) const {
    const auto N = period();
    const auto nr = dim();
    Vector w(N * nr);
    for (Eigen::Index k = 0; k < N; ++k) w.segment(k * nr, nr) = at(t + k);
    return w;
}

LiftedDisturbance::LiftedDisturbance(Eigen::Index block_dim, Eigen::Index blocks)
    : stack_(Vector::Zero(block_dim * blocks)), block_dim_(block_dim), blocks_(blocks) {
    if (block_dim < 1 || blocks < 1) throw ModelError("lifted disturbance needs positive block size and count");
}

LiftedDisturbance::LiftedDisturbance(Vector stack, Eigen::Index block_dim)
    : stack_(std::move(stack)), block_dim_(block_dim) {
    if (block_dim < 1 || stack_.size() == 0 || stack_.size() % block_dim != 0) {
        throw ModelError("lifted disturbance length must be a positive multiple of the block size");
    }
    blocks_ = stack_.size() / block_dim;
}

LiftedDisturbance LiftedDisturbance::shifted(Eigen::Index steps) const {
    LiftedDisturbance out(block_dim_, blocks_);
    for (Eigen::Index k = 0; k < blocks_; ++k) out.block(k) = block(k + steps);
    return out;
}

LiftedDisturbance LiftedDisturbance::expanded(Eigen::Index blocks) const {
    LiftedDisturbance out(block_dim_, blocks);
    for (Eigen::Index k = 0; k < blocks; ++k) out.block(k) = block(k);
    return out;
}

ShiftMatrices build_shift(Eigen::Index N, Eigen::Index ny) {
    if (N < 1 || ny < 1) throw ModelError("shift needs N >= 1 and ny >= 1");
    ShiftMatrices s{Matrix::Zero(N * ny, N * ny), Matrix::Zero(ny, N * ny)};
    for (Eigen::Index k = 0; k < N; ++k) {
        const auto next = (k + 1) % N;
        s.Sd.block(k * ny, next * ny, ny, ny).setIdentity();
    }
    s.Ssel.leftCols(ny).setIdentity();
    return s;
}

AugmentedModel::AugmentedModel(LtiModel model, DisturbanceChannels channels, Eigen::Index period)
    : model_(std::move(model)), channels_(std::move(channels)), period_(period) {
    if (period_ < 1) throw ModelError("period must be positive");
    if (channels_.Bbar.rows() != nx() || channels_.Bbar.cols() != ny()) {
        throw ModelError("Bbar must be nx x ny, got " + dims(channels_.Bbar));
    }
    if (channels_.Cbar.rows() != ny() || channels_.Cbar.cols() != ny()) {
        throw ModelError("Cbar must be ny x ny, got " + dims(channels_.Cbar));
    }
    shift_ = build_shift(period_, ny());
}

Matrix AugmentedModel::A_aug() const {
    Matrix M = Matrix::Zero(nx() + nd(), nx() + nd());
    M.topLeftCorner(nx(), nx()) = model_.A();
    M.block(0, nx(), nx(), ny()) = channels_.Bbar;
    M.bottomRightCorner(nd(), nd()) = shift_.Sd;
    return M;
}

Matrix AugmentedModel::B_aug() const {
    Matrix M = Matrix::Zero(nx() + nd(), model_.nu());
    M.topRows(nx()) = model_.B();
    return M;
}

Matrix AugmentedModel::C_aug() const {
    Matrix M = Matrix::Zero(ny(), nx() + nd());
    M.leftCols(nx()) = model_.C();
    M.block(0, nx(), ny(), ny()) = channels_.Cbar;
    return M;
}

std::complex<double> root_of_unity(Eigen::Index k, Eigen::Index N) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(N);
    return std::polar(1.0, angle);
}

std::string RankCheck::describe() const {
    if (passed) return "ok";
    std::ostringstream os;
    os << "rank deficient at";
    for (const auto& f : failures) {
        os << " lambda=(" << f.lambda.real() << "," << f.lambda.imag() << ") rank " << f.rank << "/" << f.required << ";";
    }
    return os.str();
}

namespace {

// Evaluates rank [[top(lambda)], [bottom]] >= required over the roots of
// unity. Real pencils have conjugate-symmetric ranks, so k in [0, N/2] covers
// every root.
template <typename BuildPencil>
RankCheck check_roots(Eigen::Index N, Eigen::Index required, BuildPencil&& build) {
    RankCheck out;
    for (Eigen::Index k = 0; k <= N / 2; ++k) {
        const auto lambda = root_of_unity(k, N);
        const ComplexMatrix M = build(lambda);
        const auto r = numerical_rank(M);
        if (r < required) {
            out.passed = false;
            out.failures.push_back({lambda, r, required});
            if (k != 0 && 2 * k != N) out.failures.push_back({std::conj(lambda), r, required});
        }
    }
    return out;
}

}  // namespace

RankCheck check_augmented_observability(const AugmentedModel& aug) {
    const auto& m = aug.model();
    const auto nx = m.nx();
    const auto ny = m.ny();
    return check_roots(aug.period(), nx + ny, [&](std::complex<double> lambda) {
        ComplexMatrix M(nx + ny, nx + ny);
        M.topLeftCorner(nx, nx) = m.A().cast<std::complex<double>>();
        M.topLeftCorner(nx, nx).diagonal().array() -= lambda;
        M.topRightCorner(nx, ny) = aug.channels().Bbar.cast<std::complex<double>>();
        M.bottomLeftCorner(ny, nx) = m.C().cast<std::complex<double>>();
        M.bottomRightCorner(ny, ny) = aug.channels().Cbar.cast<std::complex<double>>();
        return M;
    });
}

bool brute_force_augmented_observability(const AugmentedModel& aug) {
    const auto n = aug.nx() + aug.nd();
    if (n > 200) throw ModelError("brute-force observability limited to 200 augmented states");
    return observable_dimension(aug.A_aug(), aug.C_aug()) == n;
}

RankCheck check_target_feasibility(const LtiModel& model, const SelectionMatrix& H, Eigen::Index N) {
    if (N < 1) throw ModelError("period must be positive");
    if (H.ny() != model.ny()) throw ModelError("H column count must equal ny");
    const auto nx = model.nx();
    const auto nu = model.nu();
    const auto nr = H.nr();
    if (nr > nu) {
        // The pencil has nx + nu columns, so the rank bound fails everywhere.
        RankCheck out;
        out.passed = false;
        for (Eigen::Index k = 0; k < N; ++k) out.failures.push_back({root_of_unity(k, N), nx + nu, nx + nr});
        return out;
    }
    const Matrix HC = H.H() * model.C();
    return check_roots(N, nx + nr, [&](std::complex<double> lambda) {
        ComplexMatrix M = ComplexMatrix::Zero(nx + nr, nx + nu);
        M.topLeftCorner(nx, nx) = model.A().cast<std::complex<double>>();
        M.topLeftCorner(nx, nx).diagonal().array() -= lambda;
        M.topRightCorner(nx, nu) = model.B().cast<std::complex<double>>();
        M.bottomLeftCorner(nr, nx) = HC.cast<std::complex<double>>();
        return M;
    });
}

DisturbanceChannels default_channels(ChannelKind kind, const LtiModel& model, Eigen::Index N) {
    const auto nx = model.nx();
    const auto ny = model.ny();
    switch (kind) {
        case ChannelKind::output:
            return {Matrix::Zero(nx, ny), Matrix::Identity(ny, ny)};
        case ChannelKind::full_state:
            if (ny != nx || !model.C().isApprox(Matrix::Identity(nx, nx), 0.0)) {
                throw ModelError("full-state disturbance channels require C = I");
            }
            return {Matrix::Identity(nx, nx), Matrix::Zero(nx, nx)};
        case ChannelKind::input: {
            std::vector<Matrix> candidates;
            if (model.nu() == ny) candidates.push_back(model.B());
            const Matrix C = model.C();
            candidates.push_back(C.transpose() * (C * C.transpose()).inverse());
            for (auto& Bbar : candidates) {
                DisturbanceChannels ch{Bbar, Matrix::Zero(ny, ny)};
                if (check_augmented_observability(AugmentedModel(model, ch, N))) return ch;
            }
            throw ModelError("no input disturbance matrix makes the augmented model observable");
        }
    }
    throw ModelError("unknown channel kind");
}

}  // namespace pimpc
