#include "pimpc/plants.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/MatrixFunctions>

#include "pimpc/observer.hpp"

namespace pimpc {

namespace {

void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw SimulationFault(std::string("non-finite ") + what);
}

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double unit_interval(std::uint64_t bits) {
    // 53 random bits into (0, 1).
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

void Plant::set_actuator_box(ConstraintBox box) {
    if (box.size() != input_dim()) throw ModelError("actuator box size must equal the input dimension");
    actuator_ = std::move(box);
}

Vector rk4_step(const ContinuousDynamics& f, const Vector& x, const Vector& u, double dt) {
    if (!(dt > 0.0)) throw ModelError("integration step must be positive");
    const Vector k1 = f(x, u);
    const Vector k2 = f(x + 0.5 * dt * k1, u);
    const Vector k3 = f(x + 0.5 * dt * k2, u);
    const Vector k4 = f(x + dt * k3, u);
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

std::pair<Matrix, Matrix> zoh_discretize(const Matrix& Ac, const Matrix& Bc, double dt) {
    if (!(dt > 0.0)) throw ModelError("sampling time must be positive");
    if (Ac.rows() != Ac.cols() || Bc.rows() != Ac.rows()) throw ModelError("zoh: inconsistent dimensions");
    const auto n = Ac.rows();
    const auto m = Bc.cols();
    Matrix M = Matrix::Zero(n + m, n + m);
    M.topLeftCorner(n, n) = Ac * dt;
    M.topRightCorner(n, m) = Bc * dt;
    const Matrix E = M.exp();
    return {E.topLeftCorner(n, n), E.topRightCorner(n, m)};
}

// ---------------------------------------------------------------------------

LinearMismatchPlant::LinearMismatchPlant(Matrix A, Matrix B, Matrix C, LinearPlantOptions options) {
    if (A.rows() != A.cols() || B.rows() != A.rows() || C.cols() != A.rows()) {
        throw ModelError("linear plant: inconsistent dimensions");
    }
    B *= options.input_gain;
    if (options.input_delay) {
        // Extra state holds the previous input.
        const auto n = A.rows();
        const auto m = B.cols();
        Matrix Ad = Matrix::Zero(n + m, n + m);
        Ad.topLeftCorner(n, n) = A;
        Ad.topRightCorner(n, m) = B;
        Matrix Bd = Matrix::Zero(n + m, m);
        Bd.bottomRows(m).setIdentity();
        Matrix Cd = Matrix::Zero(C.rows(), n + m);
        Cd.leftCols(n) = C;
        A = std::move(Ad);
        B = std::move(Bd);
        C = std::move(Cd);
    }
    if (options.delayed_output) {
        const auto n = A.rows();
        const auto ny = C.rows();
        Matrix Ad = Matrix::Zero(n + ny, n + ny);
        Ad.topLeftCorner(n, n) = A;
        Ad.bottomLeftCorner(ny, n) = C;
        Matrix Bd = Matrix::Zero(n + ny, B.cols());
        Bd.topRows(n) = B;
        Matrix Cd = Matrix::Zero(2 * ny, n + ny);
        Cd.topLeftCorner(ny, n) = C;
        Cd.bottomRightCorner(ny, ny).setIdentity();
        A = std::move(Ad);
        B = std::move(Bd);
        C = std::move(Cd);
    }
    A_ = std::move(A);
    B_ = std::move(B);
    C_ = std::move(C);
    actuator_ = ConstraintBox::unbounded(B_.cols());
}

Vector LinearMismatchPlant::step(const Vector& x, const Vector& u) const { return A_ * x + B_ * u; }
Vector LinearMismatchPlant::output(const Vector& x) const { return C_ * x; }
std::unique_ptr<Plant> LinearMismatchPlant::clone() const { return std::make_unique<LinearMismatchPlant>(*this); }

ContinuousLti modal_system(const std::vector<Mode>& modes) {
    if (modes.empty()) throw ModelError("modal system needs at least one mode");
    const auto nu = modes.front().b.size();
    const auto ny = modes.front().c.size();
    const auto n = static_cast<Eigen::Index>(2 * modes.size());
    ContinuousLti sys{Matrix::Zero(n, n), Matrix::Zero(n, nu), Matrix::Zero(ny, n)};
    for (std::size_t i = 0; i < modes.size(); ++i) {
        const auto& m = modes[i];
        if (m.b.size() != nu || m.c.size() != ny) throw ModelError("modes disagree on input or output dimension");
        if (m.c_rate.size() != 0 && m.c_rate.size() != ny) throw ModelError("mode c_rate has the wrong length");
        if (!(m.omega > 0.0) || m.zeta < 0.0) throw ModelError("mode needs omega > 0 and zeta >= 0");
        const auto k = static_cast<Eigen::Index>(2 * i);
        sys.A(k, k + 1) = 1.0;
        sys.A(k + 1, k) = -m.omega * m.omega;
        sys.A(k + 1, k + 1) = -2.0 * m.zeta * m.omega;
        sys.B.row(k + 1) = m.b.transpose();
        sys.C.col(k) = m.c;
        if (m.c_rate.size() != 0) sys.C.col(k + 1) = m.c_rate;
    }
    return sys;
}

// ---------------------------------------------------------------------------

NonlinearSpringPlant::NonlinearSpringPlant(SpringParameters p) : p_(p) {
    if (!(p_.mass > 0.0) || !(p_.dt > 0.0) || p_.substeps < 1) throw ModelError("spring: invalid parameters");
    actuator_ = ConstraintBox::unbounded(1);
}

Vector NonlinearSpringPlant::step(const Vector& x, const Vector& u) const {
    const auto rhs = [this](const Vector& s, const Vector& f) {
        Vector d(2);
        const double q = s(0);
        d(0) = s(1);
        d(1) = (f(0) - p_.stiffness * q - p_.cubic * q * q * q - p_.damping * s(1)) / p_.mass;
        return d;
    };
    Vector s = x;
    const double h = p_.dt / p_.substeps;
    for (int i = 0; i < p_.substeps; ++i) s = rk4_step(rhs, s, u, h);
    return s;
}

Vector NonlinearSpringPlant::output(const Vector& x) const { return x.head(1); }
std::unique_ptr<Plant> NonlinearSpringPlant::clone() const { return std::make_unique<NonlinearSpringPlant>(*this); }

ContinuousLti NonlinearSpringPlant::linearization() const {
    ContinuousLti sys{Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(1, 2)};
    sys.A << 0.0, 1.0, -p_.stiffness / p_.mass, -p_.damping / p_.mass;
    sys.B << 0.0, 1.0 / p_.mass;
    sys.C << 1.0, 0.0;
    return sys;
}

// ---------------------------------------------------------------------------

Vector kinematic_bicycle_rhs(const BicycleParameters& p, const Vector& x, const Vector& u) {
    const double beta = std::atan(p.lr / (p.lr + p.lf) * std::tan(u(0)));
    Vector d(4);
    d(0) = x(3) * std::cos(x(2) + beta);
    d(1) = x(3) * std::sin(x(2) + beta);
    d(2) = x(3) / p.lr * std::sin(beta);
    d(3) = u(1);
    return d;
}

Vector kinematic_bicycle_step(const BicycleParameters& p, const Vector& x, const Vector& u) {
    const auto rhs = [&p](const Vector& s, const Vector& v) { return kinematic_bicycle_rhs(p, s, v); };
    Vector s = x;
    const double h = p.dt / p.substeps;
    for (int i = 0; i < p.substeps; ++i) s = rk4_step(rhs, s, u, h);
    return s;
}

TrueBicyclePlant::TrueBicyclePlant(BicycleParameters p, BicycleMismatch m) : p_(p), m_(m) {
    if (!(p_.lr > 0.0) || !(p_.lf >= 0.0) || !(p_.dt > 0.0) || p_.substeps < 1 || m_.steer_lag < 0.0) {
        throw ModelError("bicycle: invalid parameters");
    }
    actuator_ = ConstraintBox::unbounded(2);
}

double TrueBicyclePlant::commanded_steer(double delta, double v) const {
    return (m_.steer_gain - m_.gain_slope * v) * delta;
}

Vector TrueBicyclePlant::step(const Vector& x, const Vector& u) const {
    const bool lagged = m_.steer_lag > 0.0;
    const auto rhs = [&](const Vector& s, const Vector& cmd) {
        const double v = s(3);
        const double target = commanded_steer(cmd(0), v);
        const double delta = lagged ? s(4) : target;
        Vector kin_u(2);
        kin_u << delta, m_.accel_gain * cmd(1) - m_.drag * v;
        Vector d(5);
        d.head(4) = kinematic_bicycle_rhs(p_, s.head(4), kin_u);
        if (m_.slip != 0.0) {
            // Lateral slip reduces the effective side-slip angle.
            const double beta = std::atan(p_.lr / (p_.lr + p_.lf) * std::tan(delta)) - m_.slip * v * v * delta;
            d(0) = v * std::cos(s(2) + beta);
            d(1) = v * std::sin(s(2) + beta);
            d(2) = v / p_.lr * std::sin(beta);
        }
        d(4) = lagged ? (target - s(4)) / m_.steer_lag : 0.0;
        return d;
    };
    Vector s = x;
    const double h = p_.dt / p_.substeps;
    for (int i = 0; i < p_.substeps; ++i) s = rk4_step(rhs, s, u, h);
    if (!lagged) s(4) = commanded_steer(u(0), s(3));
    return s;
}

Vector TrueBicyclePlant::output(const Vector& x) const { return x.head(4); }
std::unique_ptr<Plant> TrueBicyclePlant::clone() const { return std::make_unique<TrueBicyclePlant>(*this); }

// ---------------------------------------------------------------------------

double gaussian_noise(std::uint64_t seed, std::int64_t t, std::int64_t channel) {
    std::uint64_t key = splitmix64(seed);
    key = splitmix64(key ^ static_cast<std::uint64_t>(t));
    key = splitmix64(key ^ static_cast<std::uint64_t>(channel));
    const double u1 = unit_interval(splitmix64(key ^ 0x1ULL));
    const double u2 = unit_interval(splitmix64(key ^ 0x2ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

PlantStepResult plant_step(const Plant& plant, const Vector& x, const Vector& u, std::int64_t t, std::uint64_t seed,
                           double noise_std) {
    require_finite(x, "plant state");
    require_finite(u, "input");
    PlantStepResult r;
    r.y_true = plant.output(x);
    require_finite(r.y_true, "plant output");
    r.y = r.y_true;
    if (noise_std > 0.0) {
        for (Eigen::Index i = 0; i < r.y.size(); ++i) r.y(i) += noise_std * gaussian_noise(seed, t, i);
    }
    const auto& box = plant.actuator_box();
    r.u_applied = box.size() == u.size() ? box.project(u) : u;
    r.clamped = (r.u_applied - u).lpNorm<Eigen::Infinity>() > 0.0;
    r.x_next = plant.step(x, r.u_applied);
    require_finite(r.x_next, "plant state");
    return r;
}

// ---------------------------------------------------------------------------

PeriodicOrbit find_periodic_orbit(const Plant& plant, const Matrix& H, const PeriodicReference& reference,
                                  const Vector& x_guess, const std::vector<Vector>& u_guess, int max_iterations) {
    const auto n = plant.state_dim();
    const auto nu = plant.input_dim();
    const auto N = reference.period();
    const auto nr = H.rows();
    if (static_cast<Eigen::Index>(u_guess.size()) != N || x_guess.size() != n || H.cols() != plant.output_dim()) {
        throw ModelError("periodic orbit: guess does not match plant or period");
    }
    const auto nv = n + N * nu;
    const auto nres = n + N * nr;

    Vector w(nv);
    w.head(n) = x_guess;
    for (Eigen::Index k = 0; k < N; ++k) w.segment(n + k * nu, nu) = u_guess[static_cast<std::size_t>(k)];

    auto residual = [&](const Vector& v, std::vector<Vector>* states) {
        Vector r(nres);
        Vector x = v.head(n);
        if (states) states->assign(1, x);
        for (Eigen::Index k = 0; k < N; ++k) {
            r.segment(n + k * nr, nr) = H * plant.output(x) - reference.at(k);
            x = plant.step(x, v.segment(n + k * nu, nu));
            if (states) states->push_back(x);
        }
        r.head(n) = x - v.head(n);
        return r;
    };

    std::vector<Vector> xs;
    Vector r = residual(w, &xs);
    double cost = r.squaredNorm();
    double mu = 1e-6;
    PeriodicOrbit out;
    for (int it = 0; it < max_iterations && r.lpNorm<Eigen::Infinity>() > 1e-11; ++it) {
        out.iterations = it + 1;
        // Forward sensitivities along the current rollout.
        Matrix J = Matrix::Zero(nres, nv);
        Matrix S = Matrix::Zero(n, nv);
        S.leftCols(n).setIdentity();
        for (Eigen::Index k = 0; k < N; ++k) {
            const Vector& xk = xs[static_cast<std::size_t>(k)];
            const Vector uk = w.segment(n + k * nu, nu);
            const Matrix G = finite_difference_jacobian([&](const Vector& s) { return Vector(H * plant.output(s)); }, xk);
            J.middleRows(n + k * nr, nr) = G * S;
            const Matrix Fx = finite_difference_jacobian([&](const Vector& s) { return plant.step(s, uk); }, xk);
            const Matrix Fu = finite_difference_jacobian([&](const Vector& a) { return plant.step(xk, a); }, uk);
            S = Fx * S;
            S.middleCols(n + k * nu, nu) += Fu;
        }
        J.topRows(n) = S;
        J.topLeftCorner(n, n) -= Matrix::Identity(n, n);

        const Matrix JtJ = J.transpose() * J;
        const Vector g = J.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 20; ++tries) {
            Matrix M = JtJ;
            M.diagonal().array() += mu * (1.0 + JtJ.diagonal().array());
            const Vector step = M.ldlt().solve(-g);
            const Vector trial = w + step;
            std::vector<Vector> trial_states;
            const Vector rt = residual(trial, &trial_states);
            const double ct = rt.squaredNorm();
            if (std::isfinite(ct) && ct < cost) {
                w = trial;
                r = rt;
                xs = std::move(trial_states);
                cost = ct;
                mu = std::max(mu * 0.1, 1e-12);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if (!improved) break;
    }

    out.x0 = w.head(n);
    out.residual = r.lpNorm<Eigen::Infinity>();
    out.within_actuator_box = true;
    for (Eigen::Index k = 0; k < N; ++k) {
        out.u.emplace_back(w.segment(n + k * nu, nu));
        if (plant.actuator_box().size() == nu && !plant.actuator_box().contains(out.u.back())) {
            out.within_actuator_box = false;
        }
    }
    return out;
}

}  // namespace pimpc
