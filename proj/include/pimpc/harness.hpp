#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pimpc/model.hpp"
#include "pimpc/mpc.hpp"
#include "pimpc/observer.hpp"
#include "pimpc/plants.hpp"
#include "pimpc/target.hpp"

namespace pimpc {

/// Linear target-tracking controller on an LTI nominal model.
struct LinearController {
    LtiModel nominal;
    ChannelKind channels = ChannelKind::output;
    ObserverWeights observer;
    MpcConfig mpc;
    double target_threshold = 1e-10;
};

/// Periodicity-regularized nonlinear controller for a fully measured
/// plant. The nominal model is x+ = f(x, u) + d_0 and the measurement is
/// the state itself.
struct NonlinearController {
    std::function<Vector(const Vector& x, const Vector& u)> f;
    Eigen::Index nx = 0;
    Eigen::Index nu = 0;
    double observer_lambda = 0.5;  // L_d = -lambda I
    NmpcConfig nmpc;
};

enum class InitialState { zero, target_orbit, given };
enum class InitialEstimate { zero, plant_state, measurement };

struct Scenario {
    std::string name;
    std::shared_ptr<const Plant> plant;
    SelectionMatrix H;
    PeriodicReference reference;
    std::variant<LinearController, NonlinearController> controller;
    int periods = 10;
    std::uint64_t seed = 0;
    double noise_std = 0.0;
    InitialState initial_state = InitialState::zero;
    Vector x0;  // used with InitialState::given
    InitialEstimate initial_estimate = InitialEstimate::zero;
    /// Observer period for the pi-mpc variant; 0 means the reference period.
    Eigen::Index observer_period = 0;

    [[nodiscard]] bool is_linear() const { return std::holds_alternative<LinearController>(controller); }
    [[nodiscard]] Eigen::Index period() const { return reference.period(); }
};

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Offline design artifacts for one variant.
struct Design {
    ControllerVariant variant = ControllerVariant::pi_mpc;
    Eigen::Index observer_period = 0;  // 0 for the standard variant
    std::vector<CheckResult> checks;

    // Linear formulation.
    std::optional<AugmentedModel> aug;  // observer augmentation (period 1 for standard)
    DisturbanceChannels channels;       // channels used by targets and prediction
    ObserverGains gains;
    TerminalCost terminal;

    // Nonlinear formulation.
    Matrix Ld;

    [[nodiscard]] bool passed() const;
    /// Throws DesignError naming the first failed check.
    void require() const;
};

/// Runs every applicable design-time check and builds the artifacts. Checks
/// that fail are recorded, not thrown.
Design run_design(const Scenario& scenario, ControllerVariant variant);

/// run_design followed by require().
Design design(const Scenario& scenario, ControllerVariant variant);

struct StepRecord {
    std::int64_t t = 0;
    std::int64_t phase = 0;
    Vector x_f;
    Vector y;       // measured
    Vector y_true;  // noise-free
    Vector z;       // H y_true
    Vector r;
    Vector u;       // applied
    Vector x_hat;
    Vector xbar0;   // empty for the nonlinear formulation
    Vector ubar0;
    double error = 0.0;            // |z - r|_2
    double innovation = 0.0;       // |e|_2
    double d_hat_norm = 0.0;       // |d_hat|_2
    double lqr_deviation = std::numeric_limits<double>::quiet_NaN();
    int active_constraints = 0;
    int solver_iterations = 0;
    std::string solver_status;
    bool targets_recomputed = false;
    bool clamped = false;
};

struct PeriodMetrics {
    int period = 0;
    double mean_error = 0.0;
    double peak_error = 0.0;
    double mean_innovation = 0.0;
};

struct ScenarioResult {
    std::string scenario;
    ControllerVariant variant = ControllerVariant::pi_mpc;
    Eigen::Index period = 0;
    Eigen::Index observer_period = 0;
    std::vector<StepRecord> steps;
    std::vector<PeriodMetrics> periods;
    std::vector<double> d_hat_period_norms;  // |d_hat| at each period start
    std::optional<SteadyStateResidual> steady_state;  // over the last observer period
    bool completed = false;
    std::string fault;
    int clamped_steps = 0;

    [[nodiscard]] double final_error() const { return periods.empty() ? 0.0 : periods.back().mean_error; }
};

/// Per-period metrics recomputed from the raw series.
std::vector<PeriodMetrics> compute_period_metrics(const std::vector<StepRecord>& steps, Eigen::Index period);

/// Online loop: targets, MPC, apply u, measure, observer update. A
/// simulation fault ends the run early with `completed == false`.
ScenarioResult run_closed_loop(const Scenario& scenario, const Design& design);

/// Max over the last `tail_periods` periods of |u(t+N) - u(t)|_inf and
/// |y(t+N) - y(t)|_inf. Requires at least 2 tail_periods of data.
double periodicity_check(const ScenarioResult& result, int tail_periods);

/// Periodicity residual at or below `tol` over `consecutive` successive
/// trailing periods.
bool is_converged(const ScenarioResult& result, double tol = 1e-6, int consecutive = 2);

struct VariantOutcome {
    ControllerVariant variant;
    std::optional<Design> design;
    std::optional<ScenarioResult> result;
    std::string error;  // design or run failure
};

struct Comparison {
    std::string scenario;
    std::vector<VariantOutcome> outcomes;  // standard, offset-free, pi-mpc

    /// error(pi-mpc) < error(offset-free) < error(standard) in the final period.
    [[nodiscard]] bool strict_ordering() const;
    /// All final-period errors within `tol` of each other.
    [[nodiscard]] bool equivalent(double tol = 1e-6) const;
};

Comparison compare_variants(const Scenario& scenario);

/// Nominal targets for d = 0 at phase 0; used for InitialState::target_orbit.
PeriodicTargets nominal_targets(const Scenario& scenario);

}  // namespace pimpc
