#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>

#include "pimpc/model.hpp"

namespace pimpc {

/// A design-time check failed. `check` names the failed condition.
class DesignError : public std::runtime_error {
public:
    DesignError(std::string check, const std::string& detail)
        : std::runtime_error(check + ": " + detail), check_(std::move(check)) {}

    [[nodiscard]] const std::string& check() const { return check_; }

private:
    std::string check_;
};

struct ObserverGains {
    Matrix Lx;  // nx x ny
    Matrix Ld;  // (ny N) x ny
};

struct ObserverState {
    Vector x_hat;
    LiftedDisturbance d_hat;
    std::int64_t t = 0;
};

/// Zero disturbance prior; x_hat from the first state measurement if known.
ObserverState initial_observer_state(const AugmentedModel& aug, const Vector& x0 = Vector());

/// -y_f + C x_hat + Cbar d_hat_0
Vector innovation(const ObserverState& state, const Vector& y_f, const AugmentedModel& aug);

/// Luenberger update on the augmented model:
///   x_hat+ = A x_hat + Bbar d_hat_0 + B u + Lx e
///   d_hat+ = S_d d_hat + Ld e
/// with e the innovation above.
ObserverState observer_step(const ObserverState& state, const Vector& u, const Vector& y_f, const AugmentedModel& aug,
                            const ObserverGains& gains);

/// Estimator closed-loop matrix A_aug + [Lx; Ld] C_aug.
Matrix estimator_matrix(const AugmentedModel& aug, const ObserverGains& gains);

struct ObserverWeights {
    double state = 1e-4;        // W_x = state * I
    double disturbance = 1e-2;  // W_d = disturbance * I
    double measurement = 1e-4;  // V = measurement * I
};

/// Steady-state Kalman design on the augmented pair. Throws DesignError if
/// the augmentation is unobservable, the Riccati iteration fails, or the
/// resulting estimator is unstable or fails check_gain_controllability.
ObserverGains design_gains(const AugmentedModel& aug, const ObserverWeights& weights = {});

/// Full row rank of [S_d^{N-1} L_d, ..., S_d L_d, L_d].
bool check_gain_controllability(const Matrix& Sd, const Matrix& Ld);

struct PeriodSample {
    Vector u;
    Vector y_f;
    Vector x_hat;
};

struct SteadyStateResidual {
    double dynamics = 0.0;  // || (A_N - S_x) x_hat + B_N u + Bbar_N d_hat ||_inf
    double output = 0.0;    // || C_N x_hat + Cbar_N d_hat - y_f ||_inf
};

/// Residuals of the periodic steady-state relations over one period.
/// `d_hat_start` is the lifted estimate at the first sample; block k is the
/// disturbance predicted for sample k.
SteadyStateResidual verify_steady_state(const AugmentedModel& aug, std::span<const PeriodSample> period,
                                        const LiftedDisturbance& d_hat_start);

/// Nominal nonlinear model with the current disturbance block d0 entering
/// dynamics and output.
struct NonlinearAugmentedModel {
    std::function<Vector(const Vector& x, const Vector& u, const Vector& d0)> f;
    std::function<Vector(const Vector& x, const Vector& d0)> h;
};

/// Correction l(y_f, x_hat, d_hat_0) returning the stacked [l_x; l_d] with
/// l_d of lifted length.
using ObserverCorrection = std::function<Vector(const Vector& y_f, const Vector& x_hat, const Vector& d0)>;

/// x_hat+ = f(x_hat, u, d_hat_0) + l_x;  d_hat+ = S_d d_hat + l_d.
ObserverState nonlinear_observer_step(const ObserverState& state, const Vector& u, const Vector& y_f,
                                      const NonlinearAugmentedModel& model, const ObserverCorrection& correction);

/// Correction reproducing the linear innovation [Lx; Ld] (h(x, d0) - y_f).
ObserverCorrection linear_correction(const NonlinearAugmentedModel& model, const ObserverGains& gains);

/// EKF-style correction: Jacobians of (f, h) by forward differences at a
/// design point, frozen, and a steady-state Kalman gain on the resulting
/// lifted linearisation.
ObserverCorrection frozen_ekf_correction(const NonlinearAugmentedModel& model, const Vector& x_design,
                                         const Vector& u_design, Eigen::Index ny, Eigen::Index period,
                                         const ObserverWeights& weights = {});

/// Forward-difference Jacobian with step 1e-6 (1 + |x_i|).
Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& fn, const Vector& x);

/// Additive-disturbance observer for full state measurement,
/// x+ = f(x, u) + d_0. The innovation f(x_t, u_t) + d_hat_0 - x_{t+1} corrects
/// the block that was just used, which then rotates to the back:
///   d_hat+ = S_d (d_hat + S_sel' L_d innovation).
LiftedDisturbance state_measurement_observer_step(const LiftedDisturbance& d_hat, const Vector& x_t,
                                                  const Vector& u_t, const Vector& x_next,
                                                  const std::function<Vector(const Vector&, const Vector&)>& f,
                                                  const Matrix& Ld);

/// Lifted gain equivalent to the state-measurement update, for the
/// controllability check: S_d S_sel' L_d.
Matrix lifted_state_measurement_gain(const Matrix& Ld, Eigen::Index period);

}  // namespace pimpc
