#include "pimpc/observer.hpp"

#include <algorithm>
#include <cmath>

#include "pimpc/numerics.hpp"

namespace pimpc {

ObserverState initial_observer_state(const AugmentedModel& aug, const Vector& x0) {
    ObserverState s;
    s.x_hat = x0.size() == aug.nx() ? x0 : Vector::Zero(aug.nx());
    s.d_hat = LiftedDisturbance(aug.ny(), aug.period());
    return s;
}

Vector innovation(const ObserverState& state, const Vector& y_f, const AugmentedModel& aug) {
    return aug.model().C() * state.x_hat + aug.channels().Cbar * state.d_hat.block(0) - y_f;
}

ObserverState observer_step(const ObserverState& state, const Vector& u, const Vector& y_f, const AugmentedModel& aug,
                            const ObserverGains& gains) {
    const auto& m = aug.model();
    const Vector e = innovation(state, y_f, aug);
    ObserverState next;
    next.x_hat = m.A() * state.x_hat + aug.channels().Bbar * state.d_hat.block(0) + m.B() * u + gains.Lx * e;
    next.d_hat = state.d_hat.shifted(1);
    next.d_hat.stack() += gains.Ld * e;
    next.t = state.t + 1;
    return next;
}

Matrix estimator_matrix(const AugmentedModel& aug, const ObserverGains& gains) {
    Matrix L(aug.nx() + aug.nd(), aug.ny());
    L << gains.Lx, gains.Ld;
    return aug.A_aug() + L * aug.C_aug();
}

bool check_gain_controllability(const Matrix& Sd, const Matrix& Ld) {
    const auto n = Sd.rows();
    if (Sd.cols() != n || Ld.rows() != n || Ld.cols() == 0 || n % Ld.cols() != 0) {
        throw ModelError("controllability check needs square S_d and L_d with matching rows");
    }
    const auto blocks = n / Ld.cols();
    Matrix ctrb(n, n);
    Matrix power = Ld;
    // Columns ordered [S^{N-1} L, ..., S L, L]; the order does not affect rank.
    for (Eigen::Index k = blocks - 1; k >= 0; --k) {
        ctrb.middleCols(k * Ld.cols(), Ld.cols()) = power;
        power = Sd * power;
    }
    return numerical_rank(ctrb) == n;
}

ObserverGains design_gains(const AugmentedModel& aug, const ObserverWeights& weights) {
    const auto obs = check_augmented_observability(aug);
    if (!obs) throw DesignError("augmented-observability", obs.describe());

    const auto n = aug.nx() + aug.nd();
    Matrix W = Matrix::Zero(n, n);
    W.topLeftCorner(aug.nx(), aug.nx()).diagonal().setConstant(weights.state);
    W.bottomRightCorner(aug.nd(), aug.nd()).diagonal().setConstant(weights.disturbance);
    const Matrix V = weights.measurement * Matrix::Identity(aug.ny(), aug.ny());

    KalmanGain kf;
    try {
        kf = solve_dual_dare_kalman(aug.A_aug(), aug.C_aug(), W, V);
    } catch (const NumericsError& e) {
        throw DesignError("observer-riccati", e.what());
    }
    ObserverGains g{kf.L.topRows(aug.nx()), kf.L.bottomRows(aug.nd())};

    const double rho = spectral_radius(estimator_matrix(aug, g));
    if (!(rho < 1.0)) throw DesignError("observer-stability", "estimator spectral radius " + std::to_string(rho));
    if (!check_gain_controllability(aug.Sd(), g.Ld)) throw DesignError("observer-controllability", "(S_d, L_d) not controllable");
    return g;
}

SteadyStateResidual verify_steady_state(const AugmentedModel& aug, std::span<const PeriodSample> period,
                                        const LiftedDisturbance& d_hat_start) {
    const auto N = static_cast<Eigen::Index>(period.size());
    if (N != aug.period() || d_hat_start.blocks() != N || d_hat_start.block_dim() != aug.ny()) {
        throw ModelError("steady-state check needs exactly one period of samples");
    }
    const auto& m = aug.model();
    const auto& ch = aug.channels();
    SteadyStateResidual r;
    for (Eigen::Index k = 0; k < N; ++k) {
        const auto& s = period[static_cast<std::size_t>(k)];
        const auto& next = period[static_cast<std::size_t>((k + 1) % N)];
        const Vector d = d_hat_start.block(k);
        const Vector dyn = m.A() * s.x_hat + m.B() * s.u + ch.Bbar * d - next.x_hat;
        const Vector out = m.C() * s.x_hat + ch.Cbar * d - s.y_f;
        r.dynamics = std::max(r.dynamics, dyn.lpNorm<Eigen::Infinity>());
        r.output = std::max(r.output, out.lpNorm<Eigen::Infinity>());
    }
    return r;
}

ObserverState nonlinear_observer_step(const ObserverState& state, const Vector& u, const Vector& y_f,
                                      const NonlinearAugmentedModel& model, const ObserverCorrection& correction) {
    const Vector d0 = state.d_hat.block(0);
    const auto nx = state.x_hat.size();
    ObserverState next;
    next.x_hat = model.f(state.x_hat, u, d0);
    next.d_hat = state.d_hat.shifted(1);
    if (correction) {
        const Vector l = correction(y_f, state.x_hat, d0);
        if (l.size() != nx + next.d_hat.stack().size()) throw ModelError("observer correction has wrong length");
        next.x_hat += l.head(nx);
        next.d_hat.stack() += l.tail(l.size() - nx);
    }
    next.t = state.t + 1;
    return next;
}

ObserverCorrection linear_correction(const NonlinearAugmentedModel& model, const ObserverGains& gains) {
    // Lx and Ld are applied separately so the products round exactly as in
    // observer_step.
    return [h = model.h, gains](const Vector& y_f, const Vector& x_hat, const Vector& d0) -> Vector {
        const Vector e = h(x_hat, d0) - y_f;
        Vector l(gains.Lx.rows() + gains.Ld.rows());
        l << gains.Lx * e, gains.Ld * e;
        return l;
    };
}

Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& fn, const Vector& x) {
    const Vector f0 = fn(x);
    Matrix J(f0.size(), x.size());
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-6 * (1.0 + std::abs(x(i)));
        xp(i) = x(i) + h;
        J.col(i) = (fn(xp) - f0) / h;
        xp(i) = x(i);
    }
    return J;
}

ObserverCorrection frozen_ekf_correction(const NonlinearAugmentedModel& model, const Vector& x_design,
                                         const Vector& u_design, Eigen::Index ny, Eigen::Index period,
                                         const ObserverWeights& weights) {
    const auto nx = x_design.size();
    const Vector d_design = Vector::Zero(ny);
    const Matrix Fx = finite_difference_jacobian([&](const Vector& x) { return model.f(x, u_design, d_design); }, x_design);
    const Matrix Fd = finite_difference_jacobian([&](const Vector& d) { return model.f(x_design, u_design, d); }, d_design);
    const Matrix Hx = finite_difference_jacobian([&](const Vector& x) { return model.h(x, d_design); }, x_design);
    const Matrix Hd = finite_difference_jacobian([&](const Vector& d) { return model.h(x_design, d); }, d_design);

    const auto shift = build_shift(period, ny);
    const auto nd = ny * period;
    Matrix A = Matrix::Zero(nx + nd, nx + nd);
    A.topLeftCorner(nx, nx) = Fx;
    A.block(0, nx, nx, ny) = Fd;
    A.bottomRightCorner(nd, nd) = shift.Sd;
    Matrix C = Matrix::Zero(Hx.rows(), nx + nd);
    C.leftCols(nx) = Hx;
    C.block(0, nx, Hx.rows(), ny) = Hd;

    Matrix W = Matrix::Zero(nx + nd, nx + nd);
    W.topLeftCorner(nx, nx).diagonal().setConstant(weights.state);
    W.bottomRightCorner(nd, nd).diagonal().setConstant(weights.disturbance);
    const Matrix V = weights.measurement * Matrix::Identity(Hx.rows(), Hx.rows());
    const auto kf = solve_dual_dare_kalman(A, C, W, V);
    return [h = model.h, L = kf.L](const Vector& y_f, const Vector& x_hat, const Vector& d0) -> Vector {
        return L * (h(x_hat, d0) - y_f);
    };
}

LiftedDisturbance state_measurement_observer_step(const LiftedDisturbance& d_hat, const Vector& x_t,
                                                  const Vector& u_t, const Vector& x_next,
                                                  const std::function<Vector(const Vector&, const Vector&)>& f,
                                                  const Matrix& Ld) {
    LiftedDisturbance corrected = d_hat;
    const Vector e = f(x_t, u_t) + d_hat.block(0) - x_next;
    corrected.block(0) += Ld * e;
    return corrected.shifted(1);
}

Matrix lifted_state_measurement_gain(const Matrix& Ld, Eigen::Index period) {
    const auto ny = Ld.rows();
    Matrix L = Matrix::Zero(ny * period, ny);
    // S_d S_sel' places the gain in the last block.
    L.bottomRows(ny) = Ld;
    return L;
}

}  // namespace pimpc
