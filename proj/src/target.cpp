#include "pimpc/target.hpp"

namespace pimpc {

namespace {

Eigen::Index wrap(std::int64_t k, Eigen::Index n) {
    auto m = k % n;
    return m < 0 ? m + n : m;
}

}  // namespace

const Vector& PeriodicTargets::x_at(Eigen::Index k) const { return x[static_cast<std::size_t>(wrap(k, period()))]; }
const Vector& PeriodicTargets::u_at(Eigen::Index k) const { return u[static_cast<std::size_t>(wrap(k, period()))]; }

TargetSolver::TargetSolver(const LtiModel& model, const DisturbanceChannels& channels, const SelectionMatrix& H,
                           Eigen::Index period)
    : Bbar_(channels.Bbar),
      HCbar_(H.H() * channels.Cbar),
      nx_(model.nx()),
      nu_(model.nu()),
      nr_(H.nr()),
      solver_(model.A(), model.B(), H.H() * model.C(), period) {}

Vector TargetSolver::rhs(const LiftedDisturbance& d_hat, const PeriodicReference& r, std::int64_t phase) const {
    const auto N = period();
    if (d_hat.blocks() != N || r.period() != N || r.dim() != nr_ || d_hat.block_dim() != Bbar_.cols()) {
        throw ModelError("target inputs do not match the target period or dimensions");
    }
    Vector b(N * (nx_ + nr_));
    for (Eigen::Index k = 0; k < N; ++k) {
        const Vector d = d_hat.block(k);
        b.segment(k * nx_, nx_) = -Bbar_ * d;
        b.segment(N * nx_ + k * nr_, nr_) = r.at(phase + k) - HCbar_ * d;
    }
    return b;
}

PeriodicTargets TargetSolver::compute(const LiftedDisturbance& d_hat, const PeriodicReference& r,
                                      std::int64_t phase) const {
    const auto N = period();
    const Vector sol = solver_.solve(rhs(d_hat, r, phase));
    PeriodicTargets t;
    t.phase = wrap(phase, N);
    t.x.reserve(static_cast<std::size_t>(N));
    t.u.reserve(static_cast<std::size_t>(N));
    for (Eigen::Index k = 0; k < N; ++k) {
        t.x.emplace_back(sol.segment(k * nx_, nx_));
        t.u.emplace_back(sol.segment(N * nx_ + k * nu_, nu_));
    }
    return t;
}

std::pair<double, double> TargetSolver::residual(const PeriodicTargets& targets, const LiftedDisturbance& d_hat,
                                                 const PeriodicReference& r) const {
    const auto N = period();
    Vector xu(N * (nx_ + nu_));
    for (Eigen::Index k = 0; k < N; ++k) {
        xu.segment(k * nx_, nx_) = targets.x_at(k);
        xu.segment(N * nx_ + k * nu_, nu_) = targets.u_at(k);
    }
    const Vector b = rhs(d_hat, r, targets.phase);
    return {(solver_.apply(xu) - b).norm(), b.norm()};
}

PeriodicTargets compute_targets(const AugmentedModel& aug, const SelectionMatrix& H, const LiftedDisturbance& d_hat,
                                const PeriodicReference& r, std::int64_t phase) {
    return TargetSolver(aug.model(), aug.channels(), H, aug.period()).compute(d_hat, r, phase);
}

PeriodicTargets rotate_targets(const PeriodicTargets& targets, std::int64_t steps) {
    const auto N = targets.period();
    PeriodicTargets out;
    out.phase = wrap(targets.phase + steps, N);
    out.x.reserve(static_cast<std::size_t>(N));
    out.u.reserve(static_cast<std::size_t>(N));
    for (Eigen::Index k = 0; k < N; ++k) {
        out.x.push_back(targets.x_at(k + steps));
        out.u.push_back(targets.u_at(k + steps));
    }
    return out;
}

}  // namespace pimpc
