#pragma once

#include <cstdint>
#include <vector>

#include "pimpc/model.hpp"
#include "pimpc/numerics.hpp"

namespace pimpc {

/// Periodic state/input orbit. Block k applies at reference phase
/// (phase + k) mod N; phase is kept in [0, N).
struct PeriodicTargets {
    std::vector<Vector> x;
    std::vector<Vector> u;
    std::int64_t phase = 0;

    [[nodiscard]] Eigen::Index period() const { return static_cast<Eigen::Index>(x.size()); }
    /// Block k, cyclic in k.
    [[nodiscard]] const Vector& x_at(Eigen::Index k) const;
    [[nodiscard]] const Vector& u_at(Eigen::Index k) const;
};

/// Solves
///   [A_N - S_x, B_N; H_N C_N, 0] [x; u] = [-Bbar_N d; r - H_N Cbar_N d]
/// with the block-cyclic operator factorized once at construction.
/// Minimum-norm in the stacked [x; u] when nr < nu.
class TargetSolver {
public:
    TargetSolver(const LtiModel& model, const DisturbanceChannels& channels, const SelectionMatrix& H,
                 Eigen::Index period);

    /// `d_hat` must be lifted to the reference period with block 0 at the
    /// current step; `phase` is the current time.
    [[nodiscard]] PeriodicTargets compute(const LiftedDisturbance& d_hat, const PeriodicReference& r,
                                          std::int64_t phase) const;

    /// Residual norm || M [x; u] - rhs ||_2 and ||rhs||_2 for given targets.
    [[nodiscard]] std::pair<double, double> residual(const PeriodicTargets& targets, const LiftedDisturbance& d_hat,
                                                     const PeriodicReference& r) const;

    [[nodiscard]] Eigen::Index period() const { return solver_.period(); }

private:
    [[nodiscard]] Vector rhs(const LiftedDisturbance& d_hat, const PeriodicReference& r, std::int64_t phase) const;

    Matrix Bbar_, HCbar_;
    Eigen::Index nx_, nu_, nr_;
    BlockCyclicSolver solver_;
};

PeriodicTargets compute_targets(const AugmentedModel& aug, const SelectionMatrix& H, const LiftedDisturbance& d_hat,
                                const PeriodicReference& r, std::int64_t phase);

/// Cyclic shift by `steps` blocks; phase advances by `steps` modulo N.
PeriodicTargets rotate_targets(const PeriodicTargets& targets, std::int64_t steps);

}  // namespace pimpc
