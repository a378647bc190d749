#include <doctest.h>

#include <optional>

#include "pimpc/config.hpp"
#include "pimpc/harness.hpp"
#include "pimpc/numerics.hpp"
#include "pimpc/observer.hpp"
#include "pimpc/plants.hpp"
#include "support.hpp"

using namespace pimpc;
namespace ts = testing_support;

namespace {

LtiModel two_state() {
    return LtiModel((Matrix(2, 2) << 0.8, 0.2, -0.1, 0.7).finished(), (Matrix(2, 1) << 0.0, 1.0).finished(),
                    (Matrix(1, 2) << 1.0, 0.0).finished());
}

AugmentedModel output_aug(const LtiModel& m, Eigen::Index N) {
    return AugmentedModel(m, default_channels(ChannelKind::output, m, N), N);
}

/// Stable linear plant with one extra mode beyond the nominal, driven by an
/// N-periodic input; returns (u, y) over `steps` samples. With `on_orbit`
/// the plant starts on its periodic orbit instead of at rest.
struct Trace {
    std::vector<Vector> u, y;
};

Trace periodic_trace(const Matrix& Af, const Matrix& Bf, const Matrix& Cf, Eigen::Index N, int steps, std::mt19937& rng,
                     bool on_orbit = false) {
    std::vector<Vector> pattern;
    for (Eigen::Index k = 0; k < N; ++k) pattern.push_back(ts::random_vector(rng, Bf.cols()));
    Trace tr;
    Vector x = Vector::Zero(Af.rows());
    if (on_orbit) {
        Matrix AN = Matrix::Identity(Af.rows(), Af.cols());
        for (Eigen::Index k = 0; k < N; ++k) {
            x = Af * x + Bf * pattern[static_cast<std::size_t>(k)];
            AN = Af * AN;
        }
        x = (Matrix::Identity(Af.rows(), Af.cols()) - AN).lu().solve(x);
    }
    for (int t = 0; t < steps; ++t) {
        const Vector& u = pattern[static_cast<std::size_t>(t % N)];
        tr.u.push_back(u);
        tr.y.push_back(Cf * x);
        x = Af * x + Bf * u;
    }
    return tr;
}

double residual_max(const SteadyStateResidual& r) { return std::max(r.dynamics, r.output); }

/// Runs the linear observer over a trace and returns the steady-state
/// residual of each complete period.
std::vector<double> period_residuals(const AugmentedModel& aug, const ObserverGains& g, const Trace& tr) {
    const auto N = aug.period();
    ObserverState st = initial_observer_state(aug);
    std::vector<double> out;
    std::vector<PeriodSample> buf;
    LiftedDisturbance d_start = st.d_hat;
    for (std::size_t t = 0; t < tr.u.size(); ++t) {
        if (static_cast<Eigen::Index>(t) % N == 0) {
            buf.clear();
            d_start = st.d_hat;
        }
        buf.push_back({tr.u[t], tr.y[t], st.x_hat});
        st = observer_step(st, tr.u[t], tr.y[t], aug, g);
        if (static_cast<Eigen::Index>(buf.size()) == N) out.push_back(residual_max(verify_steady_state(aug, buf, d_start)));
    }
    return out;
}

}  // namespace

TEST_CASE("zero gains on an exact model reproduce the nominal rollout") {
    const auto m = two_state();
    const auto aug = output_aug(m, 4);
    const ObserverGains zero{Matrix::Zero(2, 1), Matrix::Zero(4, 1)};
    ObserverState st = initial_observer_state(aug, (Vector(2) << 1.0, -1.0).finished());
    Vector x = st.x_hat;
    for (int t = 0; t < 20; ++t) {
        const Vector u = Vector::Constant(1, std::sin(0.3 * t));
        st = observer_step(st, u, m.C() * x, aug, zero);
        x = m.A() * x + m.B() * u;
        CHECK((st.x_hat - x).norm() == 0.0);
        CHECK(st.d_hat.stack().isZero());
    }
}

TEST_CASE("N=1 update equals the constant-disturbance observer") {
    const auto m = two_state();
    const auto aug = output_aug(m, 1);
    const auto g = design_gains(aug);
    std::mt19937 rng(3);
    ObserverState st = initial_observer_state(aug);
    Vector xh = Vector::Zero(2), dh = Vector::Zero(1);
    for (int t = 0; t < 30; ++t) {
        const Vector u = ts::random_vector(rng, 1), y = ts::random_vector(rng, 1);
        st = observer_step(st, u, y, aug, g);
        // Classical form with an integrating disturbance.
        const Vector e = -y + m.C() * xh + dh;
        const Vector xn = m.A() * xh + m.B() * u + g.Lx * e;
        dh = dh + g.Ld * e;
        xh = xn;
        CHECK((st.x_hat - xh).lpNorm<Eigen::Infinity>() <= 1e-14);
        CHECK((st.d_hat.stack() - dh).lpNorm<Eigen::Infinity>() <= 1e-14);
    }
}

TEST_CASE("periodic forced response drives innovation and steady-state residual to zero") {
    std::mt19937 rng(17);
    const auto m = two_state();
    const Eigen::Index N = 6;
    const auto aug = output_aug(m, N);
    const auto g = design_gains(aug);
    Matrix Af = Matrix::Zero(3, 3);
    Af.topLeftCorner(2, 2) = m.A() + 0.05 * ts::random_matrix(rng, 2, 2);
    Af(2, 2) = -0.6;
    Af(2, 0) = 0.3;
    const Matrix Bf = (Matrix(3, 1) << 0.0, 1.1, 0.4).finished();
    const Matrix Cf = (Matrix(1, 3) << 1.0, 0.0, 0.5).finished();
    const auto tr = periodic_trace(Af, Bf, Cf, N, static_cast<int>(200 * N), rng);

    ObserverState st = initial_observer_state(aug);
    double first_innov = 0.0, last_innov = 0.0;
    for (std::size_t t = 0; t < tr.u.size(); ++t) {
        const double e = innovation(st, tr.y[t], aug).norm();
        if (t == 0) first_innov = std::abs(tr.y[0](0)) + 1.0;
        last_innov = e;
        st = observer_step(st, tr.u[t], tr.y[t], aug, g);
    }
    CHECK(last_innov <= 1e-8);
    CHECK(last_innov < first_innov);
    const auto res = period_residuals(aug, g, tr);
    CHECK(res.back() <= 1e-8);
}

TEST_CASE("mid-transient residual exceeds the converged residual") {
    std::mt19937 rng(18);
    const auto m = two_state();
    const Eigen::Index N = 5;
    const auto aug = output_aug(m, N);
    const auto g = design_gains(aug);
    Matrix Af = m.A();
    Af(0, 1) += 0.1;
    const auto tr = periodic_trace(Af, m.B() * 1.2, m.C(), N, static_cast<int>(100 * N), rng);
    const auto res = period_residuals(aug, g, tr);
    CHECK(res.front() > res.back());
    CHECK(res[1] > 1e3 * res.back());
}

TEST_CASE("hand-built periodic solution has zero residual") {
    std::mt19937 rng(2);
    const auto m = two_state();
    const Eigen::Index N = 4;
    AugmentedModel aug(m, {ts::random_matrix(rng, 2, 1), ts::random_matrix(rng, 1, 1)}, N);
    // Choose u and d, solve for the periodic state orbit, then define y.
    std::vector<Vector> u, d;
    for (Eigen::Index k = 0; k < N; ++k) {
        u.push_back(ts::random_vector(rng, 1));
        d.push_back(ts::random_vector(rng, 1));
    }
    // x_0 = (I - A^N)^{-1} sum_k A^{N-1-k} (B u_k + Bbar d_k)
    Vector acc = Vector::Zero(2);
    Matrix AN = Matrix::Identity(2, 2);
    for (Eigen::Index k = 0; k < N; ++k) {
        acc = m.A() * acc + m.B() * u[k] + aug.channels().Bbar * d[k];
        AN = m.A() * AN;
    }
    std::vector<Vector> x{(Matrix::Identity(2, 2) - AN).lu().solve(acc)};
    for (Eigen::Index k = 0; k + 1 < N; ++k) x.push_back(m.A() * x[k] + m.B() * u[k] + aug.channels().Bbar * d[k]);
    std::vector<PeriodSample> samples;
    Vector stack(N);
    for (Eigen::Index k = 0; k < N; ++k) {
        samples.push_back({u[k], m.C() * x[k] + aug.channels().Cbar * d[k], x[k]});
        stack(k) = d[k](0);
    }
    const auto r = verify_steady_state(aug, samples, LiftedDisturbance(stack, 1));
    CHECK(r.dynamics <= 1e-14);
    CHECK(r.output <= 1e-14);
}

TEST_CASE("gain design: small, soft-robot-like and unobservable cases") {
    SUBCASE("2-state, N=5") {
        const auto aug = output_aug(two_state(), 5);
        const auto g = design_gains(aug);
        CHECK(spectral_radius(estimator_matrix(aug, g)) < 1.0);
        CHECK(check_gain_controllability(aug.Sd(), g.Ld));
    }
    SUBCASE("6-state delayed-output model, N=50") {
        // Two lightly damped modes, position output, plus the delayed copy.
        Matrix Ac = Matrix::Zero(4, 4), Bc = Matrix::Zero(4, 2), C = Matrix::Zero(1, 4);
        const double w1 = 7.0, w2 = 15.0;
        Ac(0, 1) = Ac(2, 3) = 1.0;
        Ac(1, 0) = -w1 * w1;
        Ac(1, 1) = -2 * 0.2 * w1;
        Ac(3, 2) = -w2 * w2;
        Ac(3, 3) = -2 * 0.2 * w2;
        Bc(1, 0) = 20.0;
        Bc(1, 1) = 6.0;
        Bc(3, 0) = -10.0;
        Bc(3, 1) = 40.0;
        Matrix C2(2, 4);  // two markers mixing both modes
        C2 << 1, 0, 0.2, 0, 0.15, 0, 1, 0;
        const auto [Ad, Bd] = zoh_discretize(Ac, Bc, 0.02);
        const auto m = with_delayed_output(LtiModel(Ad, Bd, C2));
        REQUIRE(m.nx() == 6);
        const auto aug = output_aug(m, 50);
        const auto g = design_gains(aug);
        const Eigen::VectorXcd ev = estimator_matrix(aug, g).eigenvalues();
        const double rho = ev.cwiseAbs().maxCoeff();
        MESSAGE("estimator eigenvalue magnitudes in [" << ev.cwiseAbs().minCoeff() << ", " << rho << "]");
        CHECK(rho < 1.0);
        CHECK(check_gain_controllability(aug.Sd(), g.Ld));
    }
    SUBCASE("no disturbance channel") {
        const auto m = two_state();
        const AugmentedModel aug(m, {Matrix::Zero(2, 1), Matrix::Zero(1, 1)}, 3);
        CHECK_THROWS_AS(design_gains(aug), DesignError);
        try {
            (void)design_gains(aug);
        } catch (const DesignError& e) {
            CHECK(e.check() == "augmented-observability");
        }
    }
}

TEST_CASE("designed observers are stable and pass the (S_d, L_d) rank check on random systems") {
    std::mt19937 rng(101);
    int done = 0;
    while (done < 100) {
        const Eigen::Index nx = 1 + done % 4, ny = 1 + done % 2, N = 1 + done % 7;
        if (ny > nx) {
            ++done;
            continue;
        }
        std::optional<LtiModel> m;
        try {
            m.emplace(ts::random_stable(rng, nx, 0.9), ts::random_matrix(rng, nx, ny), ts::random_matrix(rng, ny, nx));
        } catch (const ModelError&) {
            continue;
        }
        const AugmentedModel aug(*m, default_channels(ChannelKind::output, *m, N), N);
        if (!check_augmented_observability(aug).passed) continue;
        const auto g = design_gains(aug);
        CHECK(spectral_radius(estimator_matrix(aug, g)) < 1.0);
        CHECK(check_gain_controllability(aug.Sd(), g.Ld));
        ++done;
    }
}

TEST_CASE("controllability rank check of (S_d, L_d)") {
    const auto aug = output_aug(two_state(), 5);
    const auto g = design_gains(aug);
    CHECK(check_gain_controllability(aug.Sd(), g.Ld));
    CHECK_FALSE(check_gain_controllability(aug.Sd(), Matrix::Zero(5, 1)));

    // Two outputs; zeroing the second component of every block leaves that
    // channel's cyclic subspace unreachable.
    std::mt19937 rng(6);
    const Eigen::Index N = 4, ny = 2;
    Matrix Ld = ts::random_matrix(rng, N * ny, ny);
    const Matrix Sd = build_shift(N, ny).Sd;
    for (Eigen::Index k = 0; k < N; ++k) Ld.row(k * ny + 1).setZero();
    Matrix ctrb(N * ny, N * ny);
    Matrix blk = Ld;
    for (Eigen::Index k = 0; k < N; ++k) {
        ctrb.middleCols(k * ny, ny) = blk;
        blk = Sd * blk;
    }
    CHECK(ts::svd_rank(ctrb) < N * ny);
    CHECK_FALSE(check_gain_controllability(Sd, Ld));
}

TEST_CASE("steady-state residual decays geometrically at the estimator rate") {
    std::mt19937 rng(404);
    for (int inst = 0; inst < 20; ++inst) {
        const Eigen::Index N = 3 + inst % 4;
        std::optional<LtiModel> m;
        while (!m) {
            try {
                m.emplace(ts::random_stable(rng, 2, 0.8), ts::random_matrix(rng, 2, 1), ts::random_matrix(rng, 1, 2));
            } catch (const ModelError&) {
            }
        }
        const auto aug = output_aug(*m, N);
        ObserverWeights w;
        w.disturbance = 1e-3;
        w.measurement = 1e-2;
        const auto g = design_gains(aug, w);
        const double rate = std::pow(spectral_radius(estimator_matrix(aug, g)), static_cast<double>(N));

        Matrix Af = Matrix::Zero(3, 3);
        Af.topLeftCorner(2, 2) = m->A() + 0.05 * ts::random_matrix(rng, 2, 2);
        Af(2, 2) = 0.5;
        Af(2, 1) = 0.2;
        Matrix Bf(3, 1), Cf(1, 3);
        Bf << m->B(), 0.3;
        Cf << m->C(), 0.4;
        const auto tr = periodic_trace(Af, Bf, Cf, N, static_cast<int>(60 * N), rng, true);
        const auto res = period_residuals(aug, g, tr);
        // Compare period p against period 2, staying well above roundoff.
        std::size_t p = 2;
        while (p + 1 < res.size() && res[p + 1] > 1e-9) ++p;
        REQUIRE(p > 4);
        const double bound = 100.0 * res[2] * std::pow(rate, static_cast<double>(p - 2));
        CHECK(res[p] <= bound);
    }
}

TEST_CASE("nonlinear observer with linear maps reproduces the linear observer bit-for-bit") {
    const auto m = two_state();
    const auto aug = output_aug(m, 5);
    const auto g = design_gains(aug);
    const auto& ch = aug.channels();
    NonlinearAugmentedModel nl{
        [&](const Vector& x, const Vector& u, const Vector& d0) -> Vector { return m.A() * x + ch.Bbar * d0 + m.B() * u; },
        [&](const Vector& x, const Vector& d0) -> Vector { return m.C() * x + ch.Cbar * d0; }};
    const auto corr = linear_correction(nl, g);
    std::mt19937 rng(8);
    ObserverState a = initial_observer_state(aug), b = a;
    for (int t = 0; t < 40; ++t) {
        const Vector u = ts::random_vector(rng, 1), y = ts::random_vector(rng, 1);
        a = observer_step(a, u, y, aug, g);
        b = nonlinear_observer_step(b, u, y, nl, corr);
        REQUIRE(a.x_hat == b.x_hat);
        REQUIRE(a.d_hat.stack() == b.d_hat.stack());
    }
}

TEST_CASE("nonlinear observer without correction rotates the disturbance") {
    NonlinearAugmentedModel nl{[](const Vector& x, const Vector& u, const Vector& d0) -> Vector { return 0.5 * x + u + d0; },
                               [](const Vector& x, const Vector&) -> Vector { return x; }};
    ObserverState st;
    st.x_hat = Vector::Constant(1, 1.0);
    st.d_hat = LiftedDisturbance((Vector(3) << 1, 2, 3).finished(), 1);
    const auto next = nonlinear_observer_step(st, Vector::Zero(1), Vector::Zero(1), nl, nullptr);
    CHECK(next.d_hat.stack() == (Vector(3) << 2, 3, 1).finished());
    CHECK(next.x_hat(0) == doctest::Approx(1.5));
}

TEST_CASE("state-measurement observer") {
    const auto f = [](const Vector& x, const Vector& u) -> Vector { return 0.9 * x + u; };

    SUBCASE("contraction of I + L_d") {
        for (double lambda : {0.1, 0.5, 0.9}) {
            const Matrix Ld = -lambda * Matrix::Identity(3, 3);
            CHECK(spectral_radius(Matrix::Identity(3, 3) + Ld) == doctest::Approx(1.0 - lambda));
        }
    }
    SUBCASE("exact model gives a pure rotation") {
        const LiftedDisturbance d((Vector(4) << 0.1, 0.2, 0.3, 0.4).finished(), 1);
        const Vector x = Vector::Constant(1, 2.0), u = Vector::Constant(1, 0.5);
        const Vector xn = f(x, u) + d.block(0);
        const auto next = state_measurement_observer_step(d, x, u, xn, f, -0.5 * Matrix::Identity(1, 1));
        CHECK(next.stack() == d.shifted().stack());
    }
    SUBCASE("constant disturbance, N=1, rate one half") {
        const double w = 0.7;
        LiftedDisturbance d(1, 1);
        Vector x = Vector::Zero(1);
        double err = w;
        for (int t = 0; t < 30; ++t) {
            const Vector u = Vector::Constant(1, std::cos(t));
            const Vector xn = f(x, u) + Vector::Constant(1, w);
            d = state_measurement_observer_step(d, x, u, xn, f, -0.5 * Matrix::Identity(1, 1));
            const double e = std::abs(w - d.block(0)(0));
            CHECK(e == doctest::Approx(0.5 * err).epsilon(1e-12));
            err = e;
            x = xn;
        }
    }
    SUBCASE("periodic disturbance: each block contracts by 1 - lambda per period") {
        const Eigen::Index N = 5;
        const double lambda = 0.3;
        std::vector<double> w{0.4, -0.2, 0.9, 0.0, -0.5};
        LiftedDisturbance d(1, N);
        Vector x = Vector::Zero(1);
        std::vector<double> prev(N, 0.0);
        for (Eigen::Index k = 0; k < N; ++k) prev[static_cast<std::size_t>(k)] = std::abs(w[static_cast<std::size_t>(k)]);
        for (int period = 0; period < 8; ++period) {
            for (Eigen::Index k = 0; k < N; ++k) {
                const Vector u = Vector::Constant(1, 0.1 * static_cast<double>(k));
                const Vector xn = f(x, u) + Vector::Constant(1, w[static_cast<std::size_t>(k)]);
                d = state_measurement_observer_step(d, x, u, xn, f, -lambda * Matrix::Identity(1, 1));
                x = xn;
            }
            // After a whole period block k again refers to phase k.
            for (Eigen::Index k = 0; k < N; ++k) {
                const double e = std::abs(w[static_cast<std::size_t>(k)] - d.block(k)(0));
                CHECK(e == doctest::Approx((1.0 - lambda) * prev[static_cast<std::size_t>(k)]).epsilon(1e-9));
                prev[static_cast<std::size_t>(k)] = e;
            }
        }
    }
    SUBCASE("lifted equivalent gain sits in the last block") {
        const Matrix L = lifted_state_measurement_gain(-0.5 * Matrix::Identity(2, 2), 3);
        const auto sh = build_shift(3, 2);
        CHECK(L == sh.Sd * sh.Ssel.transpose() * (-0.5 * Matrix::Identity(2, 2)));
    }
}

TEST_CASE("frozen-Jacobian EKF innovation decreases over periods on the bicycle scenario") {
    Scenario s = load_scenario(std::string(PIMPC_SOURCE_DIR) + "/scenarios/bicycle-analog.json");
    s.periods = 4;
    const auto d = design(s, ControllerVariant::pi_mpc);
    const auto res = run_closed_loop(s, d);
    REQUIRE(res.completed);

    const auto& ctl = std::get<NonlinearController>(s.controller);
    const Eigen::Index N = s.period(), ny = 4;
    NonlinearAugmentedModel nl{[&](const Vector& x, const Vector& u, const Vector& d0) -> Vector { return ctl.f(x, u) + d0; },
                               [](const Vector& x, const Vector&) -> Vector { return x; }};
    const Vector x_design = res.steps.front().y;
    ObserverWeights w;
    w.state = 1e-6;
    w.disturbance = 1e-4;
    w.measurement = 1e-4;
    const auto corr = frozen_ekf_correction(nl, x_design, Vector::Zero(2), ny, N, w);

    ObserverState st;
    st.x_hat = x_design;
    st.d_hat = LiftedDisturbance(ny, N);
    std::vector<double> per_period(static_cast<std::size_t>(s.periods), 0.0);
    for (std::size_t t = 0; t < res.steps.size(); ++t) {
        const auto& rec = res.steps[t];
        per_period[t / static_cast<std::size_t>(N)] += (nl.h(st.x_hat, st.d_hat.block(0)) - rec.y).norm() / N;
        st = nonlinear_observer_step(st, rec.u, rec.y, nl, corr);
    }
    MESSAGE("EKF mean innovation per period: " << per_period[0] << " " << per_period[1] << " " << per_period[2] << ' '
                                                << per_period[3]);
    for (std::size_t p = 1; p < per_period.size(); ++p) CHECK(per_period[p] < per_period[p - 1]);
}
