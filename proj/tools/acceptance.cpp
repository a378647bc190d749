// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed here.
// Exits 1 if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <iostream>
#include <optional>
#include <string>

#include "pimpc/config.hpp"
#include "pimpc/harness.hpp"
#include "pimpc/model.hpp"
#include "pimpc/numerics.hpp"
#include "pimpc/observer.hpp"
#include "pimpc/qp.hpp"
#include "random_instances.hpp"
#include "support.hpp"

using namespace pimpc;
namespace ts = testing_support;

namespace {

// Tolerances.
constexpr double kConvergedError = 1e-6;
constexpr double kMonotoneSlack = 1e-12;
constexpr double kRuntimeSeconds = 30.0;
constexpr double kOrderingFactor = 100.0;
constexpr double kBicycleRatio = 3.0;
constexpr int kBicyclePeriods = 10;
constexpr int kObservabilityInstances = 200;
constexpr double kSteadyState = 1e-6;
constexpr double kLqrDeviation = 1e-6;
constexpr double kDareResidual = 1e-9;
constexpr double kKkt = 1e-6;
constexpr double kKktFeasibility = 1e-8;
constexpr double kNoiseSigma = 1e-3;
constexpr double kNoiseCeiling = 100.0 * kNoiseSigma;
constexpr int kNoiseTailPeriods = 10;

struct Verdict {
    bool passed = false;
    std::string detail;
};

Scenario scenario(const std::string& rel) { return load_scenario(std::string(PIMPC_SOURCE_DIR) + "/" + rel); }

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

/// Softarm comparison, shared by the first two criteria.
struct SoftarmRuns {
    Comparison cmp;
    double pi_seconds = 0.0;
};

const SoftarmRuns& softarm_runs() {
    static const SoftarmRuns runs = [] {
        SoftarmRuns r;
        const auto s = scenario("scenarios/softarm-analog.json");
        const auto t0 = std::chrono::steady_clock::now();
        (void)run_closed_loop(s, design(s, ControllerVariant::pi_mpc));
        r.pi_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.cmp = compare_variants(s);
        return r;
    }();
    return runs;
}

const ScenarioResult& softarm_pi() { return softarm_runs().cmp.outcomes.at(2).result.value(); }

double final_error_of(const Comparison& c, ControllerVariant v) {
    for (const auto& o : c.outcomes)
        if (o.variant == v && o.result) return o.result->final_error();
    return std::numeric_limits<double>::quiet_NaN();
}

Verdict convergence() {
    const auto& runs = softarm_runs();
    const auto& r = softarm_pi();
    bool monotone = true;
    for (std::size_t p = 3; p < r.periods.size(); ++p)
        monotone = monotone && r.periods[p].mean_error <= r.periods[p - 1].mean_error + kMonotoneSlack;
    const bool ok = r.completed && r.periods.size() <= 100 && r.final_error() <= kConvergedError && monotone &&
                    runs.pi_seconds <= kRuntimeSeconds;
    return {ok, "final " + fmt("%.3g", r.final_error()) + " after " + std::to_string(r.periods.size()) +
                    " periods, monotone " + (monotone ? "yes" : "no") + ", " + fmt("%.2f s", runs.pi_seconds)};
}

Verdict ordering() {
    const auto& c = softarm_runs().cmp;
    const double es = final_error_of(c, ControllerVariant::standard);
    const double eo = final_error_of(c, ControllerVariant::offset_free);
    const double ep = final_error_of(c, ControllerVariant::pi_mpc);
    const bool ok = ep < eo && eo < es && ep * kOrderingFactor <= es;
    return {ok, "standard " + fmt("%.3g", es) + ", offset-free " + fmt("%.3g", eo) + ", pi-mpc " + fmt("%.3g", ep)};
}

Verdict bicycle() {
    auto s = scenario("scenarios/bicycle-analog.json");
    s.periods = kBicyclePeriods;
    const auto c = compare_variants(s);
    const double es = final_error_of(c, ControllerVariant::standard);
    const double eo = final_error_of(c, ControllerVariant::offset_free);
    const double ep = final_error_of(c, ControllerVariant::pi_mpc);
    const double ratio = es / ep;
    return {ratio >= kBicycleRatio, "standard/pi-mpc " + fmt("%.2f", ratio) + " (standard " + fmt("%.3g", es) +
                                        ", offset-free " + fmt("%.3g", eo) + ", pi-mpc " + fmt("%.3g", ep) + ")"};
}

Verdict observability() {
    std::mt19937 rng(2024);
    int done = 0, passes = 0, disagreements = 0;
    while (done < kObservabilityInstances) {
        const auto in = ts::random_instance(rng);
        std::optional<LtiModel> m;
        try {
            m.emplace(in.A, in.B, in.C);
        } catch (const ModelError&) {
            continue;
        }
        const AugmentedModel aug(*m, in.ch, in.N);
        const bool hautus = check_augmented_observability(aug).passed;
        if (hautus != ts::oracle_augmented_observable(in) || hautus != brute_force_augmented_observability(aug))
            ++disagreements;
        passes += hautus ? 1 : 0;
        ++done;
    }
    const bool mixed = passes > 0 && passes < done;
    return {disagreements == 0 && mixed, std::to_string(disagreements) + " disagreements, " + std::to_string(passes) +
                                             " observable of " + std::to_string(done)};
}

Verdict steady_state() {
    double worst = 0.0;
    int converged = 0;
    bool ok = true;
    for (const char* name : {"scenarios/softarm-analog.json", "scenarios/spring-analog.json", "scenarios/zero-mismatch.json",
                             "tests/data/scalar.json"}) {
        const auto s = scenario(name);
        const auto r = run_closed_loop(s, design(s, ControllerVariant::pi_mpc));
        if (!is_converged(r)) continue;
        ++converged;
        if (!r.steady_state) {
            ok = false;
            continue;
        }
        worst = std::max({worst, r.steady_state->dynamics, r.steady_state->output});
    }
    ok = ok && converged > 0 && worst <= kSteadyState;
    return {ok, std::to_string(converged) + " converged runs, worst residual " + fmt("%.3g", worst)};
}

/// Controllability rank of (S_d, L_d) from a plain SVD.
bool pair_controllable(const Matrix& Sd, const Matrix& Ld) {
    const auto n = Sd.rows();
    Matrix K(n, Ld.cols() * n);
    Matrix blk = Ld;
    for (Eigen::Index k = 0; k < n; ++k) {
        K.middleCols(k * Ld.cols(), Ld.cols()) = blk;
        blk = Sd * blk;
    }
    return ts::svd_rank(K) == n;
}

Verdict gain_controllability() {
    int designed = 0, failed = 0;
    bool corrupted_rejected = true;
    for (const char* name : {"scenarios/softarm-analog.json", "scenarios/spring-analog.json", "scenarios/zero-mismatch.json",
                             "tests/data/scalar.json"}) {
        const auto s = scenario(name);
        for (auto v : {ControllerVariant::offset_free, ControllerVariant::pi_mpc}) {
            const auto d = design(s, v);
            const Matrix Sd = d.aug->Sd();
            const Matrix& Ld = d.gains.Ld;
            ++designed;
            if (!check_gain_controllability(Sd, Ld) || !pair_controllable(Sd, Ld)) ++failed;
            // Zero the gain column of the first output channel.
            Matrix bad = Ld;
            bad.col(0).setZero();
            corrupted_rejected = corrupted_rejected && !check_gain_controllability(Sd, bad) && !pair_controllable(Sd, bad);
        }
    }
    {
        const auto s = scenario("scenarios/bicycle-analog.json");
        const auto d = design(s, ControllerVariant::pi_mpc);
        const Matrix Sd = build_shift(d.observer_period, d.Ld.cols()).Sd;
        const Matrix lifted = lifted_state_measurement_gain(d.Ld, d.observer_period);
        ++designed;
        if (!check_gain_controllability(Sd, lifted) || !pair_controllable(Sd, lifted)) ++failed;
        Matrix bad = d.Ld;
        bad.col(0).setZero();
        const Matrix lifted_bad = lifted_state_measurement_gain(bad, d.observer_period);
        corrupted_rejected = corrupted_rejected && !check_gain_controllability(Sd, lifted_bad) && !pair_controllable(Sd, lifted_bad);
    }
    return {failed == 0 && corrupted_rejected, std::to_string(designed - failed) + "/" + std::to_string(designed) +
                                                   " designs pass, corrupted gains rejected " +
                                                   (corrupted_rejected ? "yes" : "no")};
}

Verdict lqr_equivalence() {
    const auto& r = softarm_pi();
    double worst = 0.0;
    int unconstrained = 0;
    for (const auto& st : r.steps) {
        if (st.active_constraints != 0) continue;
        ++unconstrained;
        worst = std::isnan(st.lqr_deviation) ? std::numeric_limits<double>::infinity()
                                             : std::max(worst, st.lqr_deviation);
    }
    const bool ok = is_converged(r) && unconstrained > 0 && worst <= kLqrDeviation;
    return {ok, std::to_string(unconstrained) + " unconstrained steps, max deviation " + fmt("%.3g", worst)};
}

Verdict kernels() {
    double dare_worst = 0.0;
    {
        std::mt19937 rng(77);
        for (int i = 0; i < 50; ++i) {
            const Eigen::Index nx = 2 + i % 7, nu = 1 + i % 3;
            const Matrix A = ts::random_stable(rng, nx, 0.5 + 0.03 * i);
            const Matrix B = ts::random_matrix(rng, nx, nu);
            const Matrix C = ts::random_matrix(rng, nx, nx);
            const Matrix Q = C.transpose() * C + 1e-3 * Matrix::Identity(nx, nx);
            const Matrix R = Matrix::Identity(nu, nu) * (0.1 + 0.05 * i);
            const auto sol = solve_dare(A, B, Q, R);
            dare_worst = std::max(dare_worst, ts::riccati_residual(A, B, Q, R, sol.P) / (1.0 + sol.P.norm()));
        }
    }
    int kkt_pass = 0;
    {
        std::mt19937 rng(100);
        for (int i = 0; i < 100; ++i) {
            const Matrix M = ts::random_matrix(rng, 10, 10);
            const Matrix H = M * M.transpose() + 0.5 * Matrix::Identity(10, 10);
            const Vector g = ts::random_vector(rng, 10, 3.0);
            const Vector lo = -Vector::Constant(10, 0.5) - ts::random_vector(rng, 10).cwiseAbs();
            const Vector hi = Vector::Constant(10, 0.5) + ts::random_vector(rng, 10).cwiseAbs();
            const auto sol = solve_qp({H, g, ConstraintBox(lo, hi), Matrix::Zero(0, 10), Vector(), Vector()});
            const auto rep = ts::box_kkt(H, g, lo, hi, sol.primal, kKkt);
            const bool ok = sol.status == QpStatus::solved && rep.stationarity <= kKkt && rep.sign <= kKkt &&
                            rep.feasibility <= kKktFeasibility;
            kkt_pass += ok ? 1 : 0;
        }
    }
    bool shift_ok = true;
    for (Eigen::Index ny = 1; ny <= 4; ++ny) {
        for (Eigen::Index N = 1; N <= 64; ++N) {
            const Eigen::MatrixXi Sd = build_shift(N, ny).Sd.cast<int>();
            Eigen::MatrixXi P = Eigen::MatrixXi::Identity(N * ny, N * ny);
            for (Eigen::Index k = 0; k < N; ++k) P = P * Sd;
            shift_ok = shift_ok && P == Eigen::MatrixXi::Identity(N * ny, N * ny);
        }
    }
    const bool ok = dare_worst <= kDareResidual && kkt_pass == 100 && shift_ok;
    return {ok, "DARE worst " + fmt("%.3g", dare_worst) + ", KKT " + std::to_string(kkt_pass) + "/100, S_d^N = I " +
                    (shift_ok ? "yes" : "no")};
}

Verdict reduction() {
    auto s = scenario("scenarios/softarm-analog.json");
    s.observer_period = 1;
    const auto a = run_closed_loop(s, design(s, ControllerVariant::offset_free));
    const auto b = run_closed_loop(s, design(s, ControllerVariant::pi_mpc));
    bool same = a.steps.size() == b.steps.size();
    for (std::size_t k = 0; same && k < a.steps.size(); ++k)
        same = a.steps[k].u == b.steps[k].u && a.steps[k].y == b.steps[k].y && a.steps[k].x_hat == b.steps[k].x_hat;
    return {same, std::to_string(a.steps.size()) + " steps compared, identical " + (same ? "yes" : "no")};
}

Verdict noise() {
    const auto s = scenario("scenarios/softarm-analog-noisy.json");
    const auto r = run_closed_loop(s, design(s, ControllerVariant::pi_mpc));
    const auto n = r.periods.size();
    double plateau = 0.0, peak = 0.0;
    const std::size_t start = n > kNoiseTailPeriods ? n - kNoiseTailPeriods : 0;
    for (std::size_t p = start; p < n; ++p) {
        plateau += r.periods[p].mean_error;
        peak = std::max(peak, r.periods[p].mean_error);
    }
    plateau /= static_cast<double>(n - start);
    const bool ok = r.completed && s.noise_std == kNoiseSigma && peak <= kNoiseCeiling;
    return {ok, "plateau " + fmt("%.3g", plateau) + " (" + fmt("%.2f", plateau / kNoiseSigma) + " sigma), tail peak " +
                    fmt("%.3g", peak)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"convergence on softarm analog", convergence},
        {"variant ordering on softarm analog", ordering},
        {"bicycle analog error ratio", bicycle},
        {"observability check vs brute force", observability},
        {"steady-state residual on converged runs", steady_state},
        {"observer controllability of designed gains", gain_controllability},
        {"LQR equivalence on unconstrained steps", lqr_equivalence},
        {"numeric kernels", kernels},
        {"offset-free reduction at period 1", reduction},
        {"noise plateau", noise},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += v.passed ? 0 : 1;
        std::cout << (v.passed ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
