#include "pimpc/mpc.hpp"

#include <cmath>
#include <limits>

#include "pimpc/numerics.hpp"

namespace pimpc {

std::string_view to_string(ControllerVariant v) {
    switch (v) {
        case ControllerVariant::standard: return "standard";
        case ControllerVariant::offset_free: return "offset-free";
        case ControllerVariant::pi_mpc: return "pi-mpc";
    }
    return "unknown";
}

std::optional<ControllerVariant> parse_variant(std::string_view name) {
    if (name == "standard") return ControllerVariant::standard;
    if (name == "offset-free") return ControllerVariant::offset_free;
    if (name == "pi-mpc") return ControllerVariant::pi_mpc;
    return std::nullopt;
}

Eigen::Index observer_period(ControllerVariant v, Eigen::Index reference_period) {
    switch (v) {
        case ControllerVariant::standard: return 0;
        case ControllerVariant::offset_free: return 1;
        case ControllerVariant::pi_mpc: return reference_period;
    }
    return 0;
}

LiftedDisturbance controller_disturbance(ControllerVariant v, const LiftedDisturbance& estimate,
                                         Eigen::Index reference_period, Eigen::Index ny) {
    if (v == ControllerVariant::standard || estimate.blocks() == 0) return LiftedDisturbance(ny, reference_period);
    return estimate.expanded(reference_period);
}

TerminalCost build_terminal(const LtiModel& model, const Matrix& Q, const Matrix& R) {
    if (Q.rows() != model.nx() || Q.cols() != model.nx() || R.rows() != model.nu() || R.cols() != model.nu()) {
        throw DesignError("terminal-cost", "Q or R has the wrong size");
    }
    if (Eigen::LLT<Matrix>(R).info() != Eigen::Success) throw DesignError("terminal-cost", "R must be positive definite");
    Eigen::SelfAdjointEigenSolver<Matrix> qe(0.5 * (Q + Q.transpose()));
    if (qe.eigenvalues().minCoeff() < -1e-12) throw DesignError("terminal-cost", "Q must be positive semidefinite");
    if (!is_detectable(model.A(), Q)) throw DesignError("terminal-cost", "(A, Q) is not detectable");
    try {
        const auto dare = solve_dare(model.A(), model.B(), Q, R);
        return {dare.P, dare.K};
    } catch (const NumericsError& e) {
        throw DesignError("terminal-cost", e.what());
    }
}

LinearMpc::LinearMpc(LtiModel model, Matrix Bbar, MpcConfig config, TerminalCost terminal)
    : model_(std::move(model)),
      Bbar_(std::move(Bbar)),
      cfg_(std::move(config)),
      term_(std::move(terminal)),
      nx_(model_.nx()),
      nu_(model_.nu()),
      L_(cfg_.horizon),
      qp_(cfg_.qp) {
    if (L_ < 1) throw ModelError("horizon must be at least 1");
    if (Bbar_.rows() != nx_) throw ModelError("Bbar row count must equal nx");
    if (cfg_.state_box.size() == 0) cfg_.state_box = ConstraintBox::unbounded(nx_);
    if (cfg_.input_box.size() == 0) cfg_.input_box = ConstraintBox::unbounded(nu_);
    if (cfg_.state_box.size() != nx_ || cfg_.input_box.size() != nu_) throw ModelError("constraint box size mismatch");

    const auto& A = model_.A();
    const auto& B = model_.B();
    gamma_ = Matrix::Zero(L_ * nx_, L_ * nu_);
    // x_{k+1} = sum_{j<=k} A^{k-j} B u_j
    Matrix power = B;
    for (Eigen::Index lag = 0; lag < L_; ++lag) {
        for (Eigen::Index j = 0; j + lag < L_; ++j) gamma_.block((j + lag) * nx_, j * nu_, nx_, nu_) = power;
        power = A * power;
    }
    qbar_ = Matrix::Zero(L_ * nx_, L_ * nx_);
    for (Eigen::Index k = 0; k + 1 < L_; ++k) qbar_.block(k * nx_, k * nx_, nx_, nx_) = cfg_.Q;
    qbar_.bottomRightCorner(nx_, nx_) = term_.P;

    Matrix Rbar = Matrix::Zero(L_ * nu_, L_ * nu_);
    for (Eigen::Index k = 0; k < L_; ++k) Rbar.block(k * nu_, k * nu_, nu_, nu_) = cfg_.R;

    for (Eigen::Index i = 0; i < nx_; ++i) {
        if (cfg_.state_box.is_bounded(i)) bounded_.push_back(i);
    }
    const auto nb = static_cast<Eigen::Index>(bounded_.size());
    n_slack_ = nb * L_;
    const auto nv = L_ * nu_ + n_slack_;

    QpProblem qp;
    qp.hessian = Matrix::Zero(nv, nv);
    qp.hessian.topLeftCorner(L_ * nu_, L_ * nu_) = 2.0 * (gamma_.transpose() * qbar_ * gamma_ + Rbar);
    if (n_slack_ > 0) qp.hessian.bottomRightCorner(n_slack_, n_slack_).diagonal().setConstant(2.0 * cfg_.slack_weight);
    qp.linear = Vector::Zero(nv);

    Vector lo(nv), hi(nv);
    for (Eigen::Index k = 0; k < L_; ++k) {
        lo.segment(k * nu_, nu_) = cfg_.input_box.lower;
        hi.segment(k * nu_, nu_) = cfg_.input_box.upper;
    }
    lo.tail(n_slack_).setZero();
    hi.tail(n_slack_).setConstant(std::numeric_limits<double>::infinity());
    qp.box = ConstraintBox(lo, hi);

    // Two rows per bounded component and stage: upper (G u - s <= ...) then
    // lower (G u + s >= ...).
    G_ = Matrix::Zero(2 * n_slack_, nv);
    for (Eigen::Index k = 0; k < L_; ++k) {
        for (Eigen::Index b = 0; b < nb; ++b) {
            const auto row = 2 * (k * nb + b);
            const auto state_row = k * nx_ + bounded_[static_cast<std::size_t>(b)];
            const auto slack = L_ * nu_ + k * nb + b;
            G_.row(row).head(L_ * nu_) = gamma_.row(state_row);
            G_(row, slack) = -1.0;
            G_.row(row + 1).head(L_ * nu_) = gamma_.row(state_row);
            G_(row + 1, slack) = 1.0;
        }
    }
    qp.G = G_;
    qp.lo = Vector::Constant(2 * n_slack_, -std::numeric_limits<double>::infinity());
    qp.hi = Vector::Constant(2 * n_slack_, std::numeric_limits<double>::infinity());
    qp_.setup(qp);
}

MpcSolution LinearMpc::solve(const Vector& x_hat, const LiftedDisturbance& d_hat, const PeriodicTargets& targets) {
    if (targets.period() <= L_) throw ModelError("horizon must be shorter than the target period");
    if (x_hat.size() != nx_ || d_hat.block_dim() != Bbar_.cols()) throw ModelError("MPC input dimension mismatch");

    const auto& A = model_.A();
    const auto nb = static_cast<Eigen::Index>(bounded_.size());
    constexpr double inf = std::numeric_limits<double>::infinity();

    // Free response with disturbance, and stacked target deviations.
    Vector free(L_ * nx_);
    Vector xbar(L_ * nx_);
    Vector ubar(L_ * nu_);
    Vector x = x_hat;
    for (Eigen::Index k = 0; k < L_; ++k) {
        x = A * x + Bbar_ * d_hat.block(k);
        free.segment(k * nx_, nx_) = x;
        xbar.segment(k * nx_, nx_) = targets.x_at(k + 1);
        ubar.segment(k * nu_, nu_) = targets.u_at(k);
    }

    const auto nv = L_ * nu_ + n_slack_;
    Vector q = Vector::Zero(nv);
    q.head(L_ * nu_) = 2.0 * gamma_.transpose() * (qbar_ * (free - xbar));
    for (Eigen::Index k = 0; k < L_; ++k) q.segment(k * nu_, nu_) -= 2.0 * cfg_.R * ubar.segment(k * nu_, nu_);

    Vector lo(nv), hi(nv);
    for (Eigen::Index k = 0; k < L_; ++k) {
        lo.segment(k * nu_, nu_) = cfg_.input_box.lower;
        hi.segment(k * nu_, nu_) = cfg_.input_box.upper;
    }
    lo.tail(n_slack_).setZero();
    hi.tail(n_slack_).setConstant(inf);
    Vector glo = Vector::Constant(2 * n_slack_, -inf);
    Vector ghi = Vector::Constant(2 * n_slack_, inf);
    for (Eigen::Index k = 0; k < L_; ++k) {
        for (Eigen::Index b = 0; b < nb; ++b) {
            const auto row = 2 * (k * nb + b);
            const auto i = bounded_[static_cast<std::size_t>(b)];
            const double f = free(k * nx_ + i);
            ghi(row) = cfg_.state_box.upper(i) - f;
            glo(row + 1) = cfg_.state_box.lower(i) - f;
        }
    }
    qp_.update(q, ConstraintBox(lo, hi), glo, ghi);

    MpcSolution out;
    out.qp = qp_.solve(warm_);

    const Vector& v = out.qp.primal;
    const Vector U = v.head(L_ * nu_);
    const Vector X = free + gamma_ * U;
    out.x.push_back(x_hat);
    for (Eigen::Index k = 0; k < L_; ++k) {
        out.u.emplace_back(U.segment(k * nu_, nu_));
        out.x.emplace_back(X.segment(k * nx_, nx_));
    }
    out.u0 = cfg_.input_box.project(out.u.front());
    out.max_slack = n_slack_ > 0 ? v.tail(n_slack_).maxCoeff() : 0.0;
    out.active_constraints = count_active(out.qp);

    // Shift by one stage for the next step, repeating the last stage.
    QpWarmStart next;
    next.primal = v;
    next.dual = out.qp.dual;
    auto shift_groups = [](Vector& vec, Eigen::Index offset, Eigen::Index stages, Eigen::Index width) {
        if (stages < 2 || width == 0) return;
        for (Eigen::Index k = 0; k + 1 < stages; ++k) {
            vec.segment(offset + k * width, width) = vec.segment(offset + (k + 1) * width, width);
        }
    };
    shift_groups(next.primal, 0, L_, nu_);
    shift_groups(next.primal, L_ * nu_, L_, nb);
    shift_groups(next.dual, 0, L_, nu_);
    shift_groups(next.dual, L_ * nu_, L_, nb);
    shift_groups(next.dual, nv, L_, 2 * nb);
    warm_ = std::move(next);
    return out;
}

}  // namespace pimpc
