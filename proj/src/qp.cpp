#include "pimpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pimpc/numerics.hpp"

namespace pimpc {

std::string_view to_string(QpStatus status) {
    switch (status) {
        case QpStatus::solved: return "solved";
        case QpStatus::max_iter: return "max_iter";
        case QpStatus::infeasible: return "infeasible";
    }
    return "unknown";
}

namespace {

double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

}  // namespace

void QpSolver::setup(const QpProblem& problem) {
    const auto n = problem.num_variables();
    if (n == 0) throw NumericsError("QP has no variables");
    if (problem.hessian.rows() != n || problem.hessian.cols() != n) throw NumericsError("QP Hessian size mismatch");
    if (problem.box.size() != n) throw NumericsError("QP variable box size mismatch");
    const auto mg = problem.G.rows();
    if (mg > 0 && (problem.G.cols() != n || problem.lo.size() != mg || problem.hi.size() != mg)) {
        throw NumericsError("QP general constraint size mismatch");
    }
    P_ = 0.5 * (problem.hessian + problem.hessian.transpose());
    kkt_unconstrained_.compute(P_);
    if (kkt_unconstrained_.info() != Eigen::Success) throw NumericsError("QP Hessian must be positive definite");

    n_ = n;
    m_ = n + mg;
    A_.resize(m_, n_);
    A_.topRows(n_).setIdentity();
    if (mg > 0) A_.bottomRows(mg) = problem.G;
    update(problem.linear, problem.box, mg > 0 ? problem.lo : Vector(), mg > 0 ? problem.hi : Vector());
    factorize(settings_.rho);
}

void QpSolver::update(const Vector& linear, const ConstraintBox& box, const Vector& lo, const Vector& hi) {
    if (linear.size() != n_ || box.size() != n_ || lo.size() != m_ - n_ || hi.size() != m_ - n_) {
        throw NumericsError("QP update size mismatch");
    }
    q_ = linear;
    l_.resize(m_);
    u_.resize(m_);
    l_ << box.lower, lo;
    u_ << box.upper, hi;
}

void QpSolver::factorize(double rho) {
    rho_ = rho;
    Matrix K = P_ + rho_ * A_.transpose() * A_;
    K.diagonal().array() += settings_.sigma;
    kkt_.compute(K);
    if (kkt_.info() != Eigen::Success) throw NumericsError("QP system factorization failed");
}

void QpSolver::residuals(const Vector& x, const Vector& z, const Vector& y, double& prim, double& dual,
                         double& prim_scale, double& dual_scale) const {
    const Vector Ax = A_ * x;
    const Vector Px = P_ * x;
    const Vector Aty = A_.transpose() * y;
    prim = inf_norm(Ax - z);
    dual = inf_norm(Px + q_ + Aty);
    prim_scale = std::max(inf_norm(Ax), inf_norm(z));
    dual_scale = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(q_)});
}

QpSolution QpSolver::solve(const std::optional<QpWarmStart>& warm) {
    if (!is_setup()) throw NumericsError("QP solver used before setup");
    QpSolution sol;
    for (Eigen::Index i = 0; i < m_; ++i) {
        if (l_(i) > u_(i)) {
            sol.status = QpStatus::infeasible;
            sol.primal = Vector::Zero(n_);
            sol.dual = Vector::Zero(m_);
            return sol;
        }
    }

    const auto& s = settings_;
    Vector x = Vector::Zero(n_);
    Vector y = Vector::Zero(m_);
    if (warm && warm->primal.size() == n_) x = warm->primal;
    if (warm && warm->dual.size() == m_) y = warm->dual;

    // A guessed active set (from the warm start, else the unconstrained
    // minimizer) that already satisfies the KKT conditions ends the solve.
    if (s.polish) {
        const double tol = s.eps_abs;
        QpSolution guess;
        guess.status = QpStatus::solved;
        guess.polished = true;
        bool ok = warm && active_set_solve(x, y, guess, tol, tol);
        if (!ok) ok = active_set_solve(kkt_unconstrained_.solve(-q_), Vector::Zero(m_), guess, tol, tol);
        if (ok) return guess;
    }

    Vector z = (A_ * x).cwiseMax(l_).cwiseMin(u_);

    double prim = 0, dual = 0, prim_scale = 0, dual_scale = 0;
    bool converged = false;
    int it = 0;
    for (it = 1; it <= s.max_iterations; ++it) {
        const Vector rhs = s.sigma * x - q_ + A_.transpose() * (rho_ * z - y);
        const Vector x_tilde = kkt_.solve(rhs);
        const Vector z_tilde = A_ * x_tilde;
        const Vector z_relax = s.alpha * z_tilde + (1.0 - s.alpha) * z;
        x = s.alpha * x_tilde + (1.0 - s.alpha) * x;
        const Vector z_next = (z_relax + y / rho_).cwiseMax(l_).cwiseMin(u_);
        y += rho_ * (z_relax - z_next);
        z = z_next;

        if (it % s.check_interval == 0 || it == s.max_iterations) {
            residuals(x, z, y, prim, dual, prim_scale, dual_scale);
            if (prim <= s.eps_abs + s.eps_rel * prim_scale && dual <= s.eps_abs + s.eps_rel * dual_scale) {
                converged = true;
                break;
            }
        }
        if (it % s.adapt_interval == 0) {
            residuals(x, z, y, prim, dual, prim_scale, dual_scale);
            const double p = prim / (prim_scale + 1e-30);
            const double d = dual / (dual_scale + 1e-30);
            if (p > 0.0 && d > 0.0) {
                const double rho_new = std::clamp(rho_ * std::sqrt(p / d), 1e-6, 1e6);
                if (rho_new > 5.0 * rho_ || rho_new < 0.2 * rho_) factorize(rho_new);
            }
        }
    }

    // Box rows are the identity, so projecting the iterate makes the
    // variable bounds hold exactly.
    x = x.cwiseMax(l_.head(n_)).cwiseMin(u_.head(n_));
    sol.primal = x;
    sol.dual = y;
    sol.iterations = std::min(it, s.max_iterations);
    sol.status = converged ? QpStatus::solved : QpStatus::max_iter;
    const Vector Ax = A_ * x;
    sol.primal_residual = inf_norm(Ax - Ax.cwiseMax(l_).cwiseMin(u_));
    sol.dual_residual = inf_norm(P_ * x + q_ + A_.transpose() * y);

    if (s.polish) sol.polished = polish(sol);
    return sol;
}

// Guesses the active set from a primal/dual pair and solves the equality
// constrained KKT system on it. The result replaces `sol` only if its
// multipliers are correctly signed and its residuals do not exceed the caps.
bool QpSolver::active_set_solve(const Vector& x_guess, const Vector& y_guess, QpSolution& sol, double prim_cap,
                                double dual_cap) const {
    const Vector Ax = A_ * x_guess;
    std::vector<Eigen::Index> rows;
    std::vector<double> targets;
    for (Eigen::Index i = 0; i < m_; ++i) {
        const bool lower = std::isfinite(l_(i)) && (Ax(i) - l_(i) < -y_guess(i));
        const bool upper = std::isfinite(u_(i)) && (u_(i) - Ax(i) < y_guess(i));
        if (lower || upper) {
            rows.push_back(i);
            targets.push_back(lower && !upper ? l_(i) : (upper && !lower ? u_(i) : (y_guess(i) < 0 ? l_(i) : u_(i))));
        }
    }
    const auto na = static_cast<Eigen::Index>(rows.size());
    Vector x;
    Vector y = Vector::Zero(m_);
    if (na == 0) {
        x = kkt_unconstrained_.solve(-q_);
    } else {
        Matrix K = Matrix::Zero(n_ + na, n_ + na);
        Vector rhs(n_ + na);
        K.topLeftCorner(n_, n_) = P_;
        rhs.head(n_) = -q_;
        for (Eigen::Index k = 0; k < na; ++k) {
            K.block(n_ + k, 0, 1, n_) = A_.row(rows[static_cast<std::size_t>(k)]);
            K.block(0, n_ + k, n_, 1) = A_.row(rows[static_cast<std::size_t>(k)]).transpose();
            rhs(n_ + k) = targets[static_cast<std::size_t>(k)];
        }
        Eigen::FullPivLU<Matrix> lu(K);
        if (!lu.isInvertible()) return false;
        Vector sol_kkt = lu.solve(rhs);
        for (int refine = 0; refine < 2; ++refine) sol_kkt += lu.solve(rhs - K * sol_kkt);
        x = sol_kkt.head(n_);
        for (Eigen::Index k = 0; k < na; ++k) {
            const auto i = rows[static_cast<std::size_t>(k)];
            const double yi = sol_kkt(n_ + k);
            const bool at_lower = targets[static_cast<std::size_t>(k)] == l_(i) && l_(i) != u_(i);
            const bool at_upper = targets[static_cast<std::size_t>(k)] == u_(i) && l_(i) != u_(i);
            if ((at_lower && yi > 1e-12) || (at_upper && yi < -1e-12)) return false;
            y(i) = yi;
        }
    }
    const Vector Axp = A_ * x;
    const double prim = inf_norm(Axp - Axp.cwiseMax(l_).cwiseMin(u_));
    const double dual = inf_norm(P_ * x + q_ + A_.transpose() * y);
    if (!(prim <= prim_cap) || !(dual <= dual_cap)) return false;

    sol.primal = x;
    sol.dual = y;
    sol.primal_residual = prim;
    sol.dual_residual = dual;
    return true;
}

bool QpSolver::polish(QpSolution& sol) const {
    const double tol = settings_.eps_abs;
    if (!active_set_solve(sol.primal, sol.dual, sol, std::max(sol.primal_residual, tol),
                          std::max(sol.dual_residual, tol))) {
        return false;
    }
    if (sol.status == QpStatus::max_iter && sol.primal_residual <= tol && sol.dual_residual <= tol) {
        sol.status = QpStatus::solved;
    }
    return true;
}

QpSolution solve_qp(const QpProblem& problem, const std::optional<QpWarmStart>& warm, const QpSettings& settings) {
    QpSolver solver(settings);
    solver.setup(problem);
    return solver.solve(warm);
}

int count_active(const QpSolution& sol, double tol) {
    int count = 0;
    for (Eigen::Index i = 0; i < sol.dual.size(); ++i) {
        if (std::abs(sol.dual(i)) > tol) ++count;
    }
    return count;
}

}  // namespace pimpc
