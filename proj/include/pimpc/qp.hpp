#pragma once

#include <optional>
#include <string_view>

#include "pimpc/model.hpp"

namespace pimpc {

/// min 1/2 x'Px + q'x  s.t.  box.lower <= x <= box.upper,  lo <= G x <= hi.
struct QpProblem {
    Matrix hessian;
    Vector linear;
    ConstraintBox box;
    Matrix G;  // optional general rows; zero rows when absent
    Vector lo;
    Vector hi;

    [[nodiscard]] Eigen::Index num_variables() const { return linear.size(); }
    [[nodiscard]] Eigen::Index num_general_rows() const { return G.rows(); }
};

enum class QpStatus { solved, max_iter, infeasible };

std::string_view to_string(QpStatus status);

struct QpSolution {
    Vector primal;
    /// One multiplier per constraint row, box rows first. Positive at an
    /// active upper bound, negative at an active lower bound.
    Vector dual;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    int iterations = 0;
    bool polished = false;
    QpStatus status = QpStatus::solved;
};

struct QpSettings {
    double eps_abs = 1e-8;
    double eps_rel = 1e-8;
    int max_iterations = 20000;
    double alpha = 1.6;  // over-relaxation
    double sigma = 1e-6;
    double rho = 0.1;
    int check_interval = 5;
    int adapt_interval = 25;
    bool polish = true;
};

struct QpWarmStart {
    Vector primal;
    Vector dual;
};

/// Operator-splitting QP solver (ADMM on the split Ax = z, z in [l, u]).
///
/// Before iterating, an active set guessed from the warm start is tried
/// with one KKT solve; ADMM runs only if that guess is not optimal.
///
/// The solver keeps a factorization of P + sigma I + rho A'A and reuses it
/// while the Hessian, constraint matrix and penalty are unchanged, so the
/// receding-horizon pattern of setup once / update vectors every step is
/// cheap. One instance is single-threaded.
class QpSolver {
public:
    explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

    void setup(const QpProblem& problem);
    /// Replaces the vectors only; the matrices must be unchanged.
    void update(const Vector& linear, const ConstraintBox& box, const Vector& lo, const Vector& hi);

    [[nodiscard]] QpSolution solve(const std::optional<QpWarmStart>& warm = std::nullopt);

    [[nodiscard]] const QpSettings& settings() const { return settings_; }
    [[nodiscard]] bool is_setup() const { return n_ > 0; }

private:
    void factorize(double rho);
    [[nodiscard]] bool polish(QpSolution& sol) const;
    bool active_set_solve(const Vector& x_guess, const Vector& y_guess, QpSolution& sol, double prim_cap,
                          double dual_cap) const;
    void residuals(const Vector& x, const Vector& z, const Vector& y, double& prim, double& dual, double& prim_scale,
                   double& dual_scale) const;

    QpSettings settings_;
    Eigen::Index n_ = 0;
    Eigen::Index m_ = 0;
    Matrix P_;
    Matrix A_;  // [I; G]
    Vector q_;
    Vector l_;
    Vector u_;
    double rho_ = 0.1;
    Eigen::LLT<Matrix> kkt_;
    Eigen::LLT<Matrix> kkt_unconstrained_;  // of P alone
};

/// One-shot convenience wrapper.
QpSolution solve_qp(const QpProblem& problem, const std::optional<QpWarmStart>& warm = std::nullopt,
                    const QpSettings& settings = {});

/// Number of constraint rows whose multiplier or slack marks them active.
int count_active(const QpSolution& sol, double tol = 1e-7);

}  // namespace pimpc
