#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>

#include "pimpc/model.hpp"

namespace pimpc {

/// Non-finite plant state or output.
class SimulationFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// True system x+ = f(x, u), y = g(x). Steps are pure functions of
/// (state, input).
class Plant {
public:
    virtual ~Plant() = default;

    [[nodiscard]] virtual Eigen::Index state_dim() const = 0;
    [[nodiscard]] virtual Eigen::Index input_dim() const = 0;
    [[nodiscard]] virtual Eigen::Index output_dim() const = 0;
    [[nodiscard]] virtual Vector step(const Vector& x, const Vector& u) const = 0;
    [[nodiscard]] virtual Vector output(const Vector& x) const = 0;
    [[nodiscard]] virtual std::unique_ptr<Plant> clone() const = 0;

    /// Actuator range; inputs outside are clamped by plant_step.
    [[nodiscard]] const ConstraintBox& actuator_box() const { return actuator_; }
    void set_actuator_box(ConstraintBox box);

protected:
    ConstraintBox actuator_;
};

using ContinuousDynamics = std::function<Vector(const Vector& x, const Vector& u)>;

/// Classical RK4 step with the input held constant.
Vector rk4_step(const ContinuousDynamics& f, const Vector& x, const Vector& u, double dt);

/// Exact zero-order-hold discretization through the matrix exponential of
/// [[A_c, B_c], [0, 0]] dt.
std::pair<Matrix, Matrix> zoh_discretize(const Matrix& Ac, const Matrix& Bc, double dt);

struct LinearPlantOptions {
    double input_gain = 1.0;      // true input is gain * u
    bool input_delay = false;     // input acts one step late
    bool delayed_output = false;  // output [C x(t); C x(t-1)]
};

/// Linear true plant (A_f, B_f, C_f), possibly larger than the nominal model.
/// Delay states, when enabled, are appended after the modal states.
class LinearMismatchPlant final : public Plant {
public:
    LinearMismatchPlant(Matrix A, Matrix B, Matrix C, LinearPlantOptions options = {});

    [[nodiscard]] Eigen::Index state_dim() const override { return A_.rows(); }
    [[nodiscard]] Eigen::Index input_dim() const override { return B_.cols(); }
    [[nodiscard]] Eigen::Index output_dim() const override { return C_.rows(); }
    [[nodiscard]] Vector step(const Vector& x, const Vector& u) const override;
    [[nodiscard]] Vector output(const Vector& x) const override;
    [[nodiscard]] std::unique_ptr<Plant> clone() const override;

    /// Full lifted matrices including delay states.
    [[nodiscard]] const Matrix& A() const { return A_; }
    [[nodiscard]] const Matrix& B() const { return B_; }
    [[nodiscard]] const Matrix& C() const { return C_; }

private:
    Matrix A_, B_, C_;
};

/// Continuous modal description: each mode q obeys
///   q'' + 2 zeta omega q' + omega^2 q = b' u
/// and contributes c q + c_rate q' to the output (c_rate empty means zero).
/// States are [q_1, q_1', q_2, ...].
struct Mode {
    double omega = 1.0;
    double zeta = 0.1;
    Vector b;
    Vector c;
    Vector c_rate;
};

struct ContinuousLti {
    Matrix A, B, C;
};

ContinuousLti modal_system(const std::vector<Mode>& modes);

struct SpringParameters {
    double mass = 1.0;
    double stiffness = 1.0;
    double cubic = 0.0;
    double damping = 0.1;
    double dt = 0.05;
    int substeps = 4;
};

/// Mass on a hardening spring, m q'' = u - k q - k3 q^3 - c q'. State
/// [q, q'], output q.
class NonlinearSpringPlant final : public Plant {
public:
    explicit NonlinearSpringPlant(SpringParameters p);

    [[nodiscard]] Eigen::Index state_dim() const override { return 2; }
    [[nodiscard]] Eigen::Index input_dim() const override { return 1; }
    [[nodiscard]] Eigen::Index output_dim() const override { return 1; }
    [[nodiscard]] Vector step(const Vector& x, const Vector& u) const override;
    [[nodiscard]] Vector output(const Vector& x) const override;
    [[nodiscard]] std::unique_ptr<Plant> clone() const override;

    [[nodiscard]] const SpringParameters& parameters() const { return p_; }
    /// Continuous linearization at the origin.
    [[nodiscard]] ContinuousLti linearization() const;

private:
    SpringParameters p_;
};

struct BicycleParameters {
    double lr = 0.05;
    double lf = 0.05;
    double dt = 0.04;
    int substeps = 4;
};

/// Kinematic bicycle, state [p_x, p_y, psi, v], input [delta, a]:
///   beta = atan(lr / (lr + lf) tan delta)
///   p_x' = v cos(psi + beta), p_y' = v sin(psi + beta)
///   psi' = v / lr sin beta,   v' = a
Vector kinematic_bicycle_rhs(const BicycleParameters& p, const Vector& x, const Vector& u);

/// Discrete nominal bicycle (RK4 with substeps).
Vector kinematic_bicycle_step(const BicycleParameters& p, const Vector& x, const Vector& u);

struct BicycleMismatch {
    double steer_lag = 0.0;     // first-order steering time constant [s]
    double steer_gain = 1.0;    // static steering gain at zero speed
    double gain_slope = 0.0;    // gain reduction per unit speed
    double slip = 0.0;          // extra slip angle per v^2 delta
    double accel_gain = 1.0;
    double drag = 0.0;          // v' = accel_gain a - drag v
};

/// Bicycle with steering actuator lag, speed-dependent steering gain and a
/// lateral slip perturbation. State [p_x, p_y, psi, v, delta_actual],
/// output the first four states. With zero lag and neutral perturbations
/// it coincides with the kinematic model.
class TrueBicyclePlant final : public Plant {
public:
    TrueBicyclePlant(BicycleParameters p, BicycleMismatch m);

    [[nodiscard]] Eigen::Index state_dim() const override { return 5; }
    [[nodiscard]] Eigen::Index input_dim() const override { return 2; }
    [[nodiscard]] Eigen::Index output_dim() const override { return 4; }
    [[nodiscard]] Vector step(const Vector& x, const Vector& u) const override;
    [[nodiscard]] Vector output(const Vector& x) const override;
    [[nodiscard]] std::unique_ptr<Plant> clone() const override;

    [[nodiscard]] const BicycleParameters& parameters() const { return p_; }
    [[nodiscard]] const BicycleMismatch& mismatch() const { return m_; }

private:
    [[nodiscard]] double commanded_steer(double delta, double v) const;
    BicycleParameters p_;
    BicycleMismatch m_;
};

/// Standard normal sample keyed by (seed, t, channel). Stateless.
double gaussian_noise(std::uint64_t seed, std::int64_t t, std::int64_t channel);

struct PlantStepResult {
    Vector x_next;
    Vector y;          // measured output of the current state (noisy)
    Vector y_true;     // noise-free output of the current state
    Vector u_applied;  // after clamping
    bool clamped = false;
};

/// Measures y(t) from x, clamps u into the actuator box and advances the
/// plant. Noise with standard deviation `noise_std` is added to y only.
/// Throws SimulationFault on non-finite values.
PlantStepResult plant_step(const Plant& plant, const Vector& x, const Vector& u, std::int64_t t, std::uint64_t seed,
                           double noise_std);

struct PeriodicOrbit {
    Vector x0;
    std::vector<Vector> u;
    double residual = 0.0;  // max of periodicity and tracking residuals
    bool within_actuator_box = false;
    int iterations = 0;
};

/// Searches for an N-periodic input sequence under which the plant output
/// tracks the reference exactly: x_N = x_0 and H y(x_k) = r_k. Levenberg-
/// Marquardt over (x_0, u_0 .. u_{N-1}) with finite-difference Jacobians,
/// started from the given guess.
PeriodicOrbit find_periodic_orbit(const Plant& plant, const Matrix& H, const PeriodicReference& reference,
                                  const Vector& x_guess, const std::vector<Vector>& u_guess,
                                  int max_iterations = 50);

}  // namespace pimpc
