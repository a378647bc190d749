#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "pimpc/model.hpp"
#include "pimpc/observer.hpp"
#include "pimpc/qp.hpp"
#include "pimpc/target.hpp"

namespace pimpc {

/// Which disturbance estimate reaches the controller. All variants share
/// the same MPC solve path.
enum class ControllerVariant {
    standard,     // nominal model only, disturbance forced to zero
    offset_free,  // constant disturbance observer (period 1)
    pi_mpc,       // lifted observer with the reference period
};

std::string_view to_string(ControllerVariant v);
std::optional<ControllerVariant> parse_variant(std::string_view name);

/// Observer period used by a variant; 0 means no disturbance estimate.
Eigen::Index observer_period(ControllerVariant v, Eigen::Index reference_period);

/// Disturbance handed to the MPC: zero for `standard`, otherwise the
/// observer estimate re-lifted to the reference period.
LiftedDisturbance controller_disturbance(ControllerVariant v, const LiftedDisturbance& estimate,
                                         Eigen::Index reference_period, Eigen::Index ny);

struct MpcConfig {
    Matrix Q;
    Matrix R;
    int horizon = 1;
    ConstraintBox state_box;
    ConstraintBox input_box;
    double slack_weight = 1e6;
    QpSettings qp;
};

struct TerminalCost {
    Matrix P;
    Matrix K;  // u = K x
};

/// LQR terminal cost from the DARE; rejects (A, Q) that is not detectable.
TerminalCost build_terminal(const LtiModel& model, const Matrix& Q, const Matrix& R);

struct MpcSolution {
    Vector u0;
    std::vector<Vector> u;  // u_0 .. u_{L-1}
    std::vector<Vector> x;  // x_0 .. x_L
    QpSolution qp;
    int active_constraints = 0;
    double max_slack = 0.0;
};

/// Target-tracking MPC with disturbance-affected prediction
///   x_{k+1} = A x_k + B u_k + Bbar d_k,  x_0 = x_hat,
/// stage cost |x_k - xbar_k|_Q^2 + |u_k - ubar_k|_R^2, terminal |x_L - xbar_L|_P^2,
/// hard input box and soft state box. Condensed onto the inputs; the QP
/// matrices are built once and only vectors change between steps.
class LinearMpc {
public:
    LinearMpc(LtiModel model, Matrix Bbar, MpcConfig config, TerminalCost terminal);

    /// `d_hat` and `targets` must have block 0 at the current step.
    MpcSolution solve(const Vector& x_hat, const LiftedDisturbance& d_hat, const PeriodicTargets& targets);

    void reset_warm_start() { warm_.reset(); }
    [[nodiscard]] const MpcConfig& config() const { return cfg_; }
    [[nodiscard]] const TerminalCost& terminal() const { return term_; }

private:
    LtiModel model_;
    Matrix Bbar_;
    MpcConfig cfg_;
    TerminalCost term_;
    Eigen::Index nx_, nu_, L_;
    Matrix gamma_;       // (L nx) x (L nu), x_{1..L} response to inputs
    Matrix qbar_;        // blkdiag(Q, ..., Q, P) over x_{1..L}
    std::vector<Eigen::Index> bounded_;  // bounded state components
    Eigen::Index n_slack_ = 0;
    Matrix G_;
    QpSolver qp_;
    std::optional<QpWarmStart> warm_;
};

struct NmpcConfig {
    Matrix Qz;
    Matrix R;
    int horizon = 1;
    ConstraintBox state_box;
    ConstraintBox input_box;
    int max_sqp_iterations = 10;
    double kkt_tolerance = 1e-6;
    /// Penalize non-periodicity of input differences instead of inputs.
    bool input_rate = false;
    /// Weight (relative to R) of the input-magnitude term used while a full
    /// period of past inputs is not yet available.
    double bootstrap_weight = 1e-2;
    double slack_weight = 1e6;
    QpSettings qp;
};

struct NominalDynamics {
    std::function<Vector(const Vector& x, const Vector& u, const Vector& d0)> f;
    std::function<Vector(const Vector& x, const Vector& d0)> h;
    Eigen::Index nx = 0;
    Eigen::Index nu = 0;
    Eigen::Index ny = 0;
};

/// Past applied input u(t + offset) for offset < 0, if known.
using InputHistory = std::function<std::optional<Vector>(std::int64_t offset)>;

struct NmpcSolution {
    Vector u0;
    std::vector<Vector> u;
    std::vector<Vector> x;
    double objective = 0.0;
    std::vector<double> objective_history;  // merit after each accepted iterate
    int iterations = 0;
    bool converged = false;
    bool stagnated = false;
    bool bootstrap = false;
    int active_constraints = 0;
};

/// Periodicity-regularized tracking MPC
///   min sum_k |H h(x_{k+1}, d_{k+1}) - r_{k+1}|_Qz^2 + |u_k - u_{k-N}|_R^2
/// over nonlinear dynamics x_{k+1} = f(x_k, u_k, d_k), solved by
/// Gauss-Newton SQP with a backtracking line search on the merit function.
/// Disturbance indices wrap modulo the lifted period, so the horizon may
/// exceed it.
class NonlinearMpc {
public:
    NonlinearMpc(NominalDynamics model, Matrix H, Eigen::Index period, NmpcConfig config);

    /// `reference` holds r_1 .. r_L, the samples one to L steps ahead.
    NmpcSolution solve(const Vector& x_hat, const LiftedDisturbance& d_hat, const std::vector<Vector>& reference,
                       const InputHistory& history);

    void reset_warm_start() { warm_.reset(); }
    [[nodiscard]] const NmpcConfig& config() const { return cfg_; }

private:
    struct Rollout {
        std::vector<Vector> x;
        Vector residual;  // tracking part
        double violation = 0.0;
    };
    Rollout rollout(const Vector& x0, const Vector& U, const LiftedDisturbance& d, const std::vector<Vector>& ref) const;

    NominalDynamics model_;
    Matrix H_;
    Eigen::Index period_;
    NmpcConfig cfg_;
    Matrix Lz_;  // Qz = Lz' Lz
    Matrix Lr_;  // R = Lr' Lr
    std::optional<Vector> warm_;
};

}  // namespace pimpc
