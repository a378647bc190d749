#include "pimpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pimpc/numerics.hpp"

namespace pimpc {

namespace {

Matrix upper_cholesky(const Matrix& M, const char* what) {
    Eigen::LLT<Matrix> llt(0.5 * (M + M.transpose()));
    if (llt.info() != Eigen::Success) throw ModelError(std::string(what) + " must be positive definite");
    return llt.matrixU();
}

double box_violation_sq(const ConstraintBox& box, const Vector& x) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x(i) > box.upper(i)) v += (x(i) - box.upper(i)) * (x(i) - box.upper(i));
        if (x(i) < box.lower(i)) v += (box.lower(i) - x(i)) * (box.lower(i) - x(i));
    }
    return v;
}

}  // namespace

NonlinearMpc::NonlinearMpc(NominalDynamics model, Matrix H, Eigen::Index period, NmpcConfig config)
    : model_(std::move(model)), H_(std::move(H)), period_(period), cfg_(std::move(config)) {
    if (cfg_.horizon < 1) throw ModelError("horizon must be at least 1");
    if (period_ < 1) throw ModelError("period must be positive");
    if (!model_.f || !model_.h) throw ModelError("nominal dynamics need f and h");
    if (H_.cols() != model_.ny) throw ModelError("H column count must equal ny");
    if (cfg_.state_box.size() == 0) cfg_.state_box = ConstraintBox::unbounded(model_.nx);
    if (cfg_.input_box.size() == 0) cfg_.input_box = ConstraintBox::unbounded(model_.nu);
    Lz_ = upper_cholesky(cfg_.Qz, "Qz");
    Lr_ = upper_cholesky(cfg_.R, "R");
    if (Lz_.rows() != H_.rows() || Lr_.rows() != model_.nu) throw ModelError("Qz or R has the wrong size");
}

NonlinearMpc::Rollout NonlinearMpc::rollout(const Vector& x0, const Vector& U, const LiftedDisturbance& d,
                                            const std::vector<Vector>& ref) const {
    const auto L = static_cast<Eigen::Index>(cfg_.horizon);
    const auto nu = model_.nu;
    const auto nr = H_.rows();
    Rollout r;
    r.x.reserve(static_cast<std::size_t>(L + 1));
    r.x.push_back(x0);
    r.residual.resize(L * nr);
    for (Eigen::Index k = 0; k < L; ++k) {
        r.x.push_back(model_.f(r.x.back(), U.segment(k * nu, nu), d.block(k)));
        const Vector& next = r.x.back();
        r.residual.segment(k * nr, nr) = Lz_ * (H_ * model_.h(next, d.block(k + 1)) - ref[static_cast<std::size_t>(k)]);
        r.violation += box_violation_sq(cfg_.state_box, next);
    }
    return r;
}

NmpcSolution NonlinearMpc::solve(const Vector& x_hat, const LiftedDisturbance& d_hat,
                                 const std::vector<Vector>& reference, const InputHistory& history) {
    const auto L = static_cast<Eigen::Index>(cfg_.horizon);
    const auto nx = model_.nx;
    const auto nu = model_.nu;
    const auto nr = H_.rows();
    const auto N = static_cast<std::int64_t>(period_);
    const auto nU = L * nu;
    if (static_cast<Eigen::Index>(reference.size()) < L) throw ModelError("reference window shorter than horizon");
    if (x_hat.size() != nx || d_hat.block_dim() != model_.ny) throw ModelError("NMPC input dimension mismatch");

    NmpcSolution out;

    // Periodicity residuals are affine in U: Lr (D U + c) per stage.
    Matrix D = Matrix::Zero(nU, nU);
    Vector c = Vector::Zero(nU);
    const double boot = std::sqrt(cfg_.bootstrap_weight);
    for (Eigen::Index k = 0; k < L; ++k) {
        // Terms sum_j coeff_j u_{k + offset_j} with (offset, coeff) pairs.
        std::vector<std::pair<std::int64_t, double>> terms;
        if (cfg_.input_rate) {
            terms = {{0, 1.0}, {-1, -1.0}, {-N, -1.0}, {-N - 1, 1.0}};
        } else {
            terms = {{0, 1.0}, {-N, -1.0}};
        }
        Vector cst = Vector::Zero(nu);
        bool available = true;
        for (const auto& [offset, coeff] : terms) {
            const std::int64_t j = k + offset;
            if (j >= 0) continue;
            const auto past = history ? history(j) : std::nullopt;
            if (!past) {
                available = false;
                break;
            }
            cst += coeff * *past;
        }
        if (!available) {
            out.bootstrap = true;
            D.block(k * nu, k * nu, nu, nu) = boot * Lr_;
            continue;
        }
        for (const auto& [offset, coeff] : terms) {
            const std::int64_t j = k + offset;
            if (j < 0) continue;
            D.block(k * nu, j * nu, nu, nu) += coeff * Lr_;
        }
        c.segment(k * nu, nu) = Lr_ * cst;
    }

    // Initial guess: shifted previous solution, else hold the last input.
    Vector U(nU);
    if (warm_ && warm_->size() == nU) {
        U.head(nU - nu) = warm_->tail(nU - nu);
        U.tail(nu) = warm_->tail(nu);
    } else {
        const auto last = history ? history(-1) : std::nullopt;
        const Vector u_init = last ? *last : Vector::Zero(nu);
        for (Eigen::Index k = 0; k < L; ++k) U.segment(k * nu, nu) = u_init;
    }
    for (Eigen::Index k = 0; k < L; ++k) U.segment(k * nu, nu) = cfg_.input_box.project(U.segment(k * nu, nu));

    auto merit = [&](const Rollout& r, const Vector& Uc) {
        return r.residual.squaredNorm() + (D * Uc + c).squaredNorm() + cfg_.slack_weight * r.violation;
    };

    Rollout current = rollout(x_hat, U, d_hat, reference);
    double phi = merit(current, U);
    out.objective_history.push_back(phi);

    std::vector<Eigen::Index> bounded;
    for (Eigen::Index i = 0; i < nx; ++i) {
        if (cfg_.state_box.is_bounded(i)) bounded.push_back(i);
    }
    const auto nb = static_cast<Eigen::Index>(bounded.size());
    const auto n_slack = nb * L;
    constexpr double inf = std::numeric_limits<double>::infinity();

    QpSolution last_qp;
    for (int it = 0; it < cfg_.max_sqp_iterations; ++it) {
        // Forward sensitivities S_k = dx_k / dU and tracking Jacobian.
        Matrix Jz = Matrix::Zero(L * nr, nU);
        Matrix Sx = Matrix::Zero(L * nx, nU);  // x_1 .. x_L
        Matrix S = Matrix::Zero(nx, nU);
        for (Eigen::Index k = 0; k < L; ++k) {
            const Vector dk = d_hat.block(k);
            const Vector& xk = current.x[static_cast<std::size_t>(k)];
            const Vector uk = U.segment(k * nu, nu);
            const Matrix Fx = finite_difference_jacobian([&](const Vector& x) { return model_.f(x, uk, dk); }, xk);
            const Matrix Fu = finite_difference_jacobian([&](const Vector& u) { return model_.f(xk, u, dk); }, uk);
            S = Fx * S;
            S.middleCols(k * nu, nu) += Fu;
            Sx.middleRows(k * nx, nx) = S;
            const Vector dn = d_hat.block(k + 1);
            const Matrix Ch = finite_difference_jacobian([&](const Vector& x) { return model_.h(x, dn); },
                                                         current.x[static_cast<std::size_t>(k + 1)]);
            Jz.middleRows(k * nr, nr) = Lz_ * H_ * Ch * S;
        }
        const Vector rp = D * U + c;

        const auto nv = nU + n_slack;
        QpProblem qp;
        qp.hessian = Matrix::Zero(nv, nv);
        qp.hessian.topLeftCorner(nU, nU) = 2.0 * (Jz.transpose() * Jz + D.transpose() * D);
        if (n_slack > 0) qp.hessian.bottomRightCorner(n_slack, n_slack).diagonal().setConstant(2.0 * cfg_.slack_weight);
        qp.linear = Vector::Zero(nv);
        qp.linear.head(nU) = 2.0 * (Jz.transpose() * current.residual + D.transpose() * rp);
        Vector lo(nv), hi(nv);
        for (Eigen::Index k = 0; k < L; ++k) {
            lo.segment(k * nu, nu) = cfg_.input_box.lower - U.segment(k * nu, nu);
            hi.segment(k * nu, nu) = cfg_.input_box.upper - U.segment(k * nu, nu);
        }
        lo.tail(n_slack).setZero();
        hi.tail(n_slack).setConstant(inf);
        qp.box = ConstraintBox(lo.cwiseMin(0.0), hi.cwiseMax(0.0));
        qp.G = Matrix::Zero(2 * n_slack, nv);
        qp.lo = Vector::Constant(2 * n_slack, -inf);
        qp.hi = Vector::Constant(2 * n_slack, inf);
        for (Eigen::Index k = 0; k < L; ++k) {
            for (Eigen::Index b = 0; b < nb; ++b) {
                const auto row = 2 * (k * nb + b);
                const auto i = bounded[static_cast<std::size_t>(b)];
                const auto slack = nU + k * nb + b;
                const double xi = current.x[static_cast<std::size_t>(k + 1)](i);
                qp.G.row(row).head(nU) = Sx.row(k * nx + i);
                qp.G(row, slack) = -1.0;
                qp.hi(row) = cfg_.state_box.upper(i) - xi;
                qp.G.row(row + 1).head(nU) = Sx.row(k * nx + i);
                qp.G(row + 1, slack) = 1.0;
                qp.lo(row + 1) = cfg_.state_box.lower(i) - xi;
            }
        }
        last_qp = solve_qp(qp, std::nullopt, cfg_.qp);
        if (last_qp.status == QpStatus::infeasible) break;
        const Vector step = last_qp.primal.head(nU);

        // Predicted merit decrease of the Gauss-Newton model.
        const double model_value = (current.residual + Jz * step).squaredNorm() + (rp + D * step).squaredNorm();
        const double predicted = phi - model_value;
        out.iterations = it + 1;
        if (step.lpNorm<Eigen::Infinity>() <= cfg_.kkt_tolerance || predicted <= 0.0) {
            out.converged = step.lpNorm<Eigen::Infinity>() <= cfg_.kkt_tolerance || predicted <= 1e-14 * (1.0 + phi);
            break;
        }

        double alpha = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            Vector trial = U + alpha * step;
            for (Eigen::Index k = 0; k < L; ++k) {
                trial.segment(k * nu, nu) = cfg_.input_box.project(trial.segment(k * nu, nu));
            }
            Rollout r = rollout(x_hat, trial, d_hat, reference);
            const double phi_trial = merit(r, trial);
            if (std::isfinite(phi_trial) && phi_trial <= phi - 1e-4 * alpha * predicted) {
                U = std::move(trial);
                current = std::move(r);
                phi = phi_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            out.stagnated = true;
            break;
        }
        out.objective_history.push_back(phi);
    }

    out.objective = phi;
    out.active_constraints = count_active(last_qp);
    for (Eigen::Index k = 0; k < L; ++k) out.u.emplace_back(U.segment(k * nu, nu));
    out.x = current.x;
    out.u0 = cfg_.input_box.project(out.u.front());
    warm_ = U;
    return out;
}

}  // namespace pimpc
