#include "pimpc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pimpc/numerics.hpp"

namespace pimpc {

namespace {

Eigen::Index effective_observer_period(const Scenario& s, ControllerVariant v) {
    if (v == ControllerVariant::pi_mpc && s.observer_period > 0) return s.observer_period;
    return observer_period(v, s.period());
}

void record(Design& d, std::string name, bool passed, std::string detail = {}) {
    d.checks.push_back({std::move(name), passed, std::move(detail)});
}

void design_linear(const Scenario& s, const LinearController& c, Design& d) {
    const auto& model = c.nominal;
    const auto Nref = s.period();
    const auto Nobs = d.observer_period;

    if (s.H.ny() != model.ny()) {
        record(d, "dimensions", false, "H columns must equal the nominal output dimension");
        return;
    }
    if (c.mpc.horizon >= Nref) {
        record(d, "dimensions", false, "horizon must be shorter than the reference period");
        return;
    }

    // Disturbance channels and the observer augmentation.
    const auto channel_period = Nobs > 0 ? Nobs : Nref;
    try {
        d.channels = default_channels(c.channels, model, channel_period);
    } catch (const ModelError& e) {
        record(d, "disturbance-channels", false, e.what());
        return;
    }

    if (Nobs > 0) {
        d.aug.emplace(model, d.channels, Nobs);
        const auto obs = check_augmented_observability(*d.aug);
        record(d, "augmented-observability", obs.passed, obs.passed ? "" : obs.describe());
        if (obs.passed) {
            try {
                d.gains = design_gains(*d.aug, c.observer);
                const double rho = spectral_radius(estimator_matrix(*d.aug, d.gains));
                record(d, "observer-riccati", true);
                record(d, "observer-stability", true, "spectral radius " + std::to_string(rho));
                record(d, "observer-controllability", check_gain_controllability(d.aug->Sd(), d.gains.Ld));
            } catch (const DesignError& e) {
                record(d, e.check(), false, e.what());
            }
        }
    } else {
        // Nominal Kalman predictor; the disturbance estimate stays zero.
        DisturbanceChannels none{Matrix::Zero(model.nx(), model.ny()), Matrix::Zero(model.ny(), model.ny())};
        d.aug.emplace(model, none, 1);
        try {
            const Matrix W = c.observer.state * Matrix::Identity(model.nx(), model.nx());
            const Matrix V = c.observer.measurement * Matrix::Identity(model.ny(), model.ny());
            const auto kf = solve_dual_dare_kalman(model.A(), model.C(), W, V);
            d.gains = {kf.L, Matrix::Zero(model.ny(), model.ny())};
            const double rho = spectral_radius(model.A() + kf.L * model.C());
            record(d, "observer-riccati", true);
            record(d, "observer-stability", rho < 1.0, "spectral radius " + std::to_string(rho));
        } catch (const NumericsError& e) {
            record(d, "observer-riccati", false, e.what());
        }
    }

    const auto feas = check_target_feasibility(model, s.H, Nref);
    std::string feas_detail;
    if (s.H.nr() > model.nu()) {
        feas_detail = "more tracked outputs than inputs (nr=" + std::to_string(s.H.nr()) +
                      " > nu=" + std::to_string(model.nu()) + ")";
    } else if (!feas.passed) {
        feas_detail = feas.describe();
    }
    record(d, "target-feasibility", feas.passed, feas_detail);

    try {
        d.terminal = build_terminal(model, c.mpc.Q, c.mpc.R);
        record(d, "terminal-cost", true, "spectral radius " +
                                             std::to_string(spectral_radius(model.A() + model.B() * d.terminal.K)));
    } catch (const DesignError& e) {
        record(d, "terminal-cost", false, e.what());
    }
}

void design_nonlinear(const Scenario& s, const NonlinearController& c, Design& d) {
    if (!c.f || c.nx < 1 || c.nu < 1) {
        record(d, "dimensions", false, "nonlinear nominal model is incomplete");
        return;
    }
    if (s.plant->output_dim() != c.nx || s.H.ny() != c.nx || s.plant->input_dim() != c.nu) {
        record(d, "dimensions", false, "plant must measure the full nominal state");
        return;
    }
    try {
        NonlinearMpc probe({[](const Vector& x, const Vector&, const Vector&) { return x; },
                            [](const Vector& x, const Vector&) { return x; }, c.nx, c.nu, c.nx},
                           s.H.H(), s.period(), c.nmpc);
        record(d, "cost-weights", true);
    } catch (const ModelError& e) {
        record(d, "cost-weights", false, e.what());
    }
    const auto Nobs = d.observer_period;
    if (Nobs == 0) return;
    const double lambda = c.observer_lambda;
    const bool stable = lambda > 0.0 && lambda < 1.0;
    record(d, "observer-stability", stable, "per-period contraction " + std::to_string(1.0 - lambda));
    d.Ld = -lambda * Matrix::Identity(c.nx, c.nx);
    const auto shift = build_shift(Nobs, c.nx);
    record(d, "observer-controllability", check_gain_controllability(shift.Sd, lifted_state_measurement_gain(d.Ld, Nobs)));
}

double inf_dist(const LiftedDisturbance& a, const LiftedDisturbance& b) {
    return (a.stack() - b.stack()).lpNorm<Eigen::Infinity>();
}

Vector initial_plant_state(const Scenario& s) {
    const auto n = s.plant->state_dim();
    switch (s.initial_state) {
        case InitialState::zero: return Vector::Zero(n);
        case InitialState::given:
            if (s.x0.size() != n) throw ModelError("initial state has the wrong dimension");
            return s.x0;
        case InitialState::target_orbit: {
            const Vector x = nominal_targets(s).x_at(0);
            if (x.size() != n) throw ModelError("target-orbit start needs equal plant and nominal dimensions");
            return x;
        }
    }
    return Vector::Zero(n);
}

Vector initial_estimate(const Scenario& s, const Vector& x_f0, Eigen::Index nx) {
    switch (s.initial_estimate) {
        case InitialEstimate::zero: return Vector::Zero(nx);
        case InitialEstimate::plant_state:
            if (x_f0.size() != nx) throw ModelError("plant-state estimate needs equal plant and nominal dimensions");
            return x_f0;
        case InitialEstimate::measurement: {
            const Vector y = s.plant->output(x_f0);
            if (y.size() != nx) throw ModelError("measurement estimate needs a full-state output");
            return y;
        }
    }
    return Vector::Zero(nx);
}

void finish_record(StepRecord& rec, const Scenario& s, const PlantStepResult& ps, std::int64_t t) {
    rec.t = t;
    rec.phase = t % s.period();
    rec.y = ps.y;
    rec.y_true = ps.y_true;
    rec.z = s.H.H() * ps.y_true;
    rec.r = s.reference.at(t);
    rec.error = (rec.z - rec.r).norm();
    rec.u = ps.u_applied;
    rec.clamped = ps.clamped;
}

void run_linear(const Scenario& s, const LinearController& c, const Design& d, ScenarioResult& res) {
    const auto& model = c.nominal;
    const auto Nref = s.period();
    const auto T = static_cast<std::int64_t>(s.periods) * Nref;
    const auto& aug = *d.aug;

    TargetSolver targets_solver(model, d.channels, s.H, Nref);
    LinearMpc mpc(model, d.channels.Bbar, c.mpc, d.terminal);

    Vector x_f = initial_plant_state(s);
    ObserverState obs = initial_observer_state(aug, initial_estimate(s, x_f, model.nx()));
    std::optional<PeriodicTargets> cached;
    LiftedDisturbance cached_d;
    std::int64_t cached_t = 0;
    const std::int64_t window_start = T - aug.period();
    ObserverState window_obs;
    std::vector<PeriodSample> window;

    for (std::int64_t t = 0; t < T; ++t) {
        if (t % Nref == 0) res.d_hat_period_norms.push_back(obs.d_hat.stack().norm());
        const LiftedDisturbance d_ctrl = controller_disturbance(d.variant, obs.d_hat, Nref, model.ny());

        StepRecord rec;
        if (!cached || inf_dist(d_ctrl, cached_d.shifted(t - cached_t)) > c.target_threshold) {
            cached = targets_solver.compute(d_ctrl, s.reference, t);
            cached_d = d_ctrl;
            cached_t = t;
            rec.targets_recomputed = true;
        }
        const PeriodicTargets targets = t == cached_t ? *cached : rotate_targets(*cached, t - cached_t);
        if (targets.phase != t % Nref) throw ModelError("target phase out of alignment");

        const MpcSolution sol = mpc.solve(obs.x_hat, d_ctrl, targets);
        rec.x_f = x_f;
        rec.x_hat = obs.x_hat;
        rec.xbar0 = targets.x_at(0);
        rec.ubar0 = targets.u_at(0);
        rec.active_constraints = sol.active_constraints;
        rec.solver_iterations = sol.qp.iterations;
        rec.solver_status = std::string(to_string(sol.qp.status));
        if (sol.active_constraints == 0) {
            const Vector lqr = rec.ubar0 + d.terminal.K * (obs.x_hat - rec.xbar0);
            rec.lqr_deviation = (sol.u0 - lqr).lpNorm<Eigen::Infinity>();
        }
        rec.d_hat_norm = obs.d_hat.stack().norm();

        const PlantStepResult ps = plant_step(*s.plant, x_f, sol.u0, t, s.seed, s.noise_std);
        finish_record(rec, s, ps, t);
        rec.innovation = innovation(obs, ps.y, aug).norm();

        if (t == window_start) window_obs = obs;
        if (t >= window_start) window.push_back({ps.u_applied, ps.y, obs.x_hat});

        obs = observer_step(obs, ps.u_applied, ps.y, aug, d.gains);
        x_f = ps.x_next;
        if (rec.clamped) ++res.clamped_steps;
        res.steps.push_back(std::move(rec));
    }
    if (d.observer_period > 0 && static_cast<Eigen::Index>(window.size()) == aug.period()) {
        res.steady_state = verify_steady_state(aug, window, window_obs.d_hat);
    }
}

void run_nonlinear(const Scenario& s, const NonlinearController& c, const Design& d, ScenarioResult& res) {
    const auto Nref = s.period();
    const auto T = static_cast<std::int64_t>(s.periods) * Nref;
    const auto nx = c.nx;
    const auto L = c.nmpc.horizon;

    NominalDynamics dyn{[f = c.f](const Vector& x, const Vector& u, const Vector& d0) { return Vector(f(x, u) + d0); },
                        [](const Vector& x, const Vector&) { return x; }, nx, c.nu, nx};
    NonlinearMpc nmpc(dyn, s.H.H(), Nref, c.nmpc);

    Vector x_f = initial_plant_state(s);
    const Eigen::Index Nobs = std::max<Eigen::Index>(d.observer_period, 1);
    LiftedDisturbance d_hat(nx, Nobs);
    std::vector<Vector> u_hist;
    Vector x_prev;
    double last_innovation = 0.0;

    for (std::int64_t t = 0; t < T; ++t) {
        const Vector y = s.plant->output(x_f) + [&] {
            Vector n = Vector::Zero(s.plant->output_dim());
            if (s.noise_std > 0.0) {
                for (Eigen::Index i = 0; i < n.size(); ++i) n(i) = s.noise_std * gaussian_noise(s.seed, t, i);
            }
            return n;
        }();
        if (t > 0 && d.observer_period > 0) {
            const Vector e = c.f(x_prev, u_hist.back()) + d_hat.block(0) - y;
            last_innovation = e.norm();
            d_hat = state_measurement_observer_step(d_hat, x_prev, u_hist.back(), y, c.f, d.Ld);
        } else if (t > 0) {
            last_innovation = (c.f(x_prev, u_hist.back()) - y).norm();
        }
        if (t % Nref == 0) res.d_hat_period_norms.push_back(d_hat.stack().norm());

        const LiftedDisturbance d_ctrl = controller_disturbance(d.variant, d_hat, Nref, nx);
        std::vector<Vector> window;
        window.reserve(static_cast<std::size_t>(L));
        for (int k = 1; k <= L; ++k) window.push_back(s.reference.at(t + k));
        const InputHistory history = [&u_hist, t](std::int64_t offset) -> std::optional<Vector> {
            const auto j = t + offset;
            if (j < 0 || j >= static_cast<std::int64_t>(u_hist.size())) return std::nullopt;
            return u_hist[static_cast<std::size_t>(j)];
        };
        const NmpcSolution sol = nmpc.solve(y, d_ctrl, window, history);

        StepRecord rec;
        rec.x_f = x_f;
        rec.x_hat = y;
        rec.active_constraints = sol.active_constraints;
        rec.solver_iterations = sol.iterations;
        rec.solver_status = sol.converged ? "converged" : (sol.stagnated ? "stagnated" : "max_iter");
        rec.d_hat_norm = d_hat.stack().norm();
        rec.innovation = last_innovation;

        const PlantStepResult ps = plant_step(*s.plant, x_f, sol.u0, t, s.seed, s.noise_std);
        finish_record(rec, s, ps, t);
        u_hist.push_back(ps.u_applied);
        x_prev = y;
        x_f = ps.x_next;
        if (rec.clamped) ++res.clamped_steps;
        res.steps.push_back(std::move(rec));
    }
}

}  // namespace

bool Design::passed() const {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

void Design::require() const {
    for (const auto& c : checks) {
        if (!c.passed) throw DesignError(c.name, c.detail.empty() ? "check failed" : c.detail);
    }
    if (checks.empty()) throw DesignError("design", "no checks were run");
}

Design run_design(const Scenario& scenario, ControllerVariant variant) {
    if (!scenario.plant) throw ModelError("scenario has no plant");
    Design d;
    d.variant = variant;
    d.observer_period = effective_observer_period(scenario, variant);
    if (scenario.H.nr() != scenario.reference.dim()) {
        record(d, "dimensions", false, "reference dimension must equal the rows of H");
        return d;
    }
    if (const auto* lin = std::get_if<LinearController>(&scenario.controller)) {
        design_linear(scenario, *lin, d);
    } else {
        design_nonlinear(scenario, std::get<NonlinearController>(scenario.controller), d);
    }
    return d;
}

Design design(const Scenario& scenario, ControllerVariant variant) {
    Design d = run_design(scenario, variant);
    d.require();
    return d;
}

PeriodicTargets nominal_targets(const Scenario& scenario) {
    const auto& c = std::get<LinearController>(scenario.controller);
    const auto N = scenario.period();
    const auto channels = default_channels(ChannelKind::output, c.nominal, N);
    TargetSolver solver(c.nominal, channels, scenario.H, N);
    return solver.compute(LiftedDisturbance(c.nominal.ny(), N), scenario.reference, 0);
}

std::vector<PeriodMetrics> compute_period_metrics(const std::vector<StepRecord>& steps, Eigen::Index period) {
    std::vector<PeriodMetrics> out;
    const auto N = static_cast<std::size_t>(period);
    for (std::size_t start = 0; start + N <= steps.size(); start += N) {
        PeriodMetrics m;
        m.period = static_cast<int>(start / N) + 1;
        double sum = 0.0, sum_e = 0.0;
        for (std::size_t k = start; k < start + N; ++k) {
            sum += steps[k].error;
            sum_e += steps[k].innovation;
            m.peak_error = std::max(m.peak_error, steps[k].error);
        }
        m.mean_error = sum / static_cast<double>(N);
        m.mean_innovation = sum_e / static_cast<double>(N);
        out.push_back(m);
    }
    return out;
}

ScenarioResult run_closed_loop(const Scenario& scenario, const Design& design) {
    design.require();
    ScenarioResult res;
    res.scenario = scenario.name;
    res.variant = design.variant;
    res.period = scenario.period();
    res.observer_period = design.observer_period;
    try {
        if (const auto* lin = std::get_if<LinearController>(&scenario.controller)) {
            run_linear(scenario, *lin, design, res);
        } else {
            run_nonlinear(scenario, std::get<NonlinearController>(scenario.controller), design, res);
        }
        res.completed = true;
    } catch (const SimulationFault& e) {
        res.fault = e.what();
    } catch (const NumericsError& e) {
        res.fault = std::string("solver failure: ") + e.what();
    }
    res.periods = compute_period_metrics(res.steps, res.period);
    return res;
}

double periodicity_check(const ScenarioResult& result, int tail_periods) {
    const auto N = static_cast<std::size_t>(result.period);
    const auto T = result.steps.size();
    if (tail_periods < 1 || T < 2 * N * static_cast<std::size_t>(tail_periods)) {
        throw ModelError("periodicity check needs at least two tail windows of data");
    }
    double worst = 0.0;
    for (std::size_t t = T - (static_cast<std::size_t>(tail_periods) + 1) * N; t + N < T; ++t) {
        const auto& a = result.steps[t];
        const auto& b = result.steps[t + N];
        worst = std::max(worst, (b.u - a.u).lpNorm<Eigen::Infinity>());
        worst = std::max(worst, (b.y - a.y).lpNorm<Eigen::Infinity>());
    }
    return worst;
}

bool is_converged(const ScenarioResult& result, double tol, int consecutive) {
    const auto N = static_cast<std::size_t>(result.period);
    if (result.steps.size() < N * static_cast<std::size_t>(consecutive + 1)) return false;
    return periodicity_check(result, consecutive) <= tol;
}

bool Comparison::strict_ordering() const {
    double e[3];
    for (std::size_t i = 0; i < 3; ++i) {
        if (i >= outcomes.size() || !outcomes[i].result || !outcomes[i].result->completed) return false;
        e[i] = outcomes[i].result->final_error();
    }
    return e[2] < e[1] && e[1] < e[0];
}

bool Comparison::equivalent(double tol) const {
    std::vector<double> e;
    for (const auto& o : outcomes) {
        if (!o.result || !o.result->completed) return false;
        e.push_back(o.result->final_error());
    }
    if (e.empty()) return false;
    const auto [lo, hi] = std::minmax_element(e.begin(), e.end());
    return *hi - *lo <= tol;
}

Comparison compare_variants(const Scenario& scenario) {
    Comparison cmp;
    cmp.scenario = scenario.name;
    for (auto v : {ControllerVariant::standard, ControllerVariant::offset_free, ControllerVariant::pi_mpc}) {
        VariantOutcome o{v, std::nullopt, std::nullopt, {}};
        try {
            o.design = design(scenario, v);
            o.result = run_closed_loop(scenario, *o.design);
            if (!o.result->completed) o.error = o.result->fault;
        } catch (const std::exception& e) {
            o.error = e.what();
        }
        cmp.outcomes.push_back(std::move(o));
    }
    return cmp;
}

}  // namespace pimpc
