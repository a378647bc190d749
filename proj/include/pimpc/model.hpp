#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pimpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;

/// Raised when a model, channel set or reference is dimensionally or
/// structurally invalid.
class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Axis-aligned box. Unbounded directions are +-infinity.
struct ConstraintBox {
    Vector lower;
    Vector upper;

    ConstraintBox() = default;
    ConstraintBox(Vector lo, Vector hi);

    static ConstraintBox unbounded(Eigen::Index n);

    [[nodiscard]] Eigen::Index size() const { return lower.size(); }
    [[nodiscard]] bool is_bounded(Eigen::Index i) const;
    [[nodiscard]] bool any_bounded() const;
    [[nodiscard]] bool contains(const Vector& v, double tol = 0.0) const;
    [[nodiscard]] Vector project(const Vector& v) const;
};

/// Discrete-time nominal model x+ = A x + B u, y = C x.
///
/// Construction enforces controllability of (A, B), observability of (A, C)
/// and full row rank of C.
class LtiModel {
public:
    LtiModel(Matrix A, Matrix B, Matrix C);

    [[nodiscard]] const Matrix& A() const { return A_; }
    [[nodiscard]] const Matrix& B() const { return B_; }
    [[nodiscard]] const Matrix& C() const { return C_; }
    [[nodiscard]] Eigen::Index nx() const { return A_.rows(); }
    [[nodiscard]] Eigen::Index nu() const { return B_.cols(); }
    [[nodiscard]] Eigen::Index ny() const { return C_.rows(); }

private:
    Matrix A_;
    Matrix B_;
    Matrix C_;
};

/// Appends ny delay states holding the previous output; the new output is
/// [C x(t); C x(t-1)].
LtiModel with_delayed_output(const LtiModel& model);

/// z = H y with H of full row rank.
class SelectionMatrix {
public:
    explicit SelectionMatrix(Matrix H);

    [[nodiscard]] const Matrix& H() const { return H_; }
    [[nodiscard]] Eigen::Index nr() const { return H_.rows(); }
    [[nodiscard]] Eigen::Index ny() const { return H_.cols(); }

private:
    Matrix H_;
};

/// N samples of an N-periodic reference; access is cyclic.
class PeriodicReference {
public:
    explicit PeriodicReference(std::vector<Vector> samples);

    [[nodiscard]] Eigen::Index period() const { return static_cast<Eigen::Index>(samples_.size()); }
    [[nodiscard]] Eigen::Index dim() const { return samples_.front().size(); }
    [[nodiscard]] const Vector& at(std::int64_t t) const;
    [[nodiscard]] const std::vector<Vector>& samples() const { return samples_; }

    /// Stacked [r(t); r(t+1); ...; r(t+N-1)].
    [[nodiscard]] Vector window(std::int64_t t) const;

private:
    std::vector<Vector> samples_;
};

/// Stack of N per-step disturbance blocks; block 0 acts at the current step,
/// block k at k steps ahead.
class LiftedDisturbance {
public:
    LiftedDisturbance() = default;
    LiftedDisturbance(Eigen::Index block_dim, Eigen::Index blocks);
    LiftedDisturbance(Vector stack, Eigen::Index block_dim);

    [[nodiscard]] Eigen::Index block_dim() const { return block_dim_; }
    [[nodiscard]] Eigen::Index blocks() const { return blocks_; }
    [[nodiscard]] const Vector& stack() const { return stack_; }
    [[nodiscard]] Vector& stack() { return stack_; }

    [[nodiscard]] auto block(Eigen::Index k) const {
        return stack_.segment(block_dim_ * wrap(k), block_dim_);
    }
    [[nodiscard]] auto block(Eigen::Index k) {
        return stack_.segment(block_dim_ * wrap(k), block_dim_);
    }

    /// Applies S_d: block k of the result is block k+1 of this one.
    [[nodiscard]] LiftedDisturbance shifted(Eigen::Index steps = 1) const;

    /// Re-lifts to another period by cyclic repetition of the blocks.
    [[nodiscard]] LiftedDisturbance expanded(Eigen::Index blocks) const;

private:
    [[nodiscard]] Eigen::Index wrap(Eigen::Index k) const {
        const auto m = k % blocks_;
        return m < 0 ? m + blocks_ : m;
    }

    Vector stack_;
    Eigen::Index block_dim_ = 0;
    Eigen::Index blocks_ = 0;
};

struct DisturbanceChannels {
    Matrix Bbar;  // nx x ny
    Matrix Cbar;  // ny x ny
};

enum class ChannelKind { output, input, full_state };

struct ShiftMatrices {
    Matrix Sd;    // (ny N) x (ny N), entries in {0, 1}
    Matrix Ssel;  // ny x (ny N)
};

/// S_d = S (x) I_ny with S the N x N cyclic forward shift; S_sel picks block 0.
ShiftMatrices build_shift(Eigen::Index N, Eigen::Index ny);

/// Nominal model augmented with an N-periodic lifted output-dimension
/// disturbance acting through (Bbar, Cbar).
class AugmentedModel {
public:
    AugmentedModel(LtiModel model, DisturbanceChannels channels, Eigen::Index period);

    [[nodiscard]] const LtiModel& model() const { return model_; }
    [[nodiscard]] const DisturbanceChannels& channels() const { return channels_; }
    [[nodiscard]] Eigen::Index period() const { return period_; }
    [[nodiscard]] Eigen::Index nx() const { return model_.nx(); }
    [[nodiscard]] Eigen::Index ny() const { return model_.ny(); }
    [[nodiscard]] Eigen::Index nd() const { return model_.ny() * period_; }
    [[nodiscard]] const Matrix& Sd() const { return shift_.Sd; }
    [[nodiscard]] const Matrix& Ssel() const { return shift_.Ssel; }

    /// Dense [[A, Bbar Ssel], [0, Sd]].
    [[nodiscard]] Matrix A_aug() const;
    /// Dense [B; 0].
    [[nodiscard]] Matrix B_aug() const;
    /// Dense [C, Cbar Ssel].
    [[nodiscard]] Matrix C_aug() const;

private:
    LtiModel model_;
    DisturbanceChannels channels_;
    Eigen::Index period_;
    ShiftMatrices shift_;
};

/// The k-th N-th root of unity, exp(i 2 pi k / N).
std::complex<double> root_of_unity(Eigen::Index k, Eigen::Index N);

struct RankFailure {
    std::complex<double> lambda;
    Eigen::Index rank = 0;
    Eigen::Index required = 0;
};

struct RankCheck {
    bool passed = true;
    std::vector<RankFailure> failures;

    explicit operator bool() const { return passed; }
    [[nodiscard]] std::string describe() const;
};

/// Hautus-type test: rank [A - lambda I, Bbar; C, Cbar] = nx + ny for every
/// N-th root of unity.
RankCheck check_augmented_observability(const AugmentedModel& aug);

/// Rank of the full observability matrix of the (nx + ny N)-dimensional
/// augmented pair. Test oracle; throws ModelError above 200 states.
bool brute_force_augmented_observability(const AugmentedModel& aug);

/// rank [A - lambda I, B; H C, 0] = nx + nr for every N-th root of unity.
RankCheck check_target_feasibility(const LtiModel& model, const SelectionMatrix& H, Eigen::Index N);

/// Standard disturbance models: output (Bbar = 0, Cbar = I), input
/// (Cbar = 0, Bbar square-invertible through the plant), full state
/// (Bbar = I, Cbar = 0; requires C = I).
DisturbanceChannels default_channels(ChannelKind kind, const LtiModel& model, Eigen::Index N);

}  // namespace pimpc
