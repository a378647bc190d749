#include "pimpc/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pimpc {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Object view that rejects unknown keys.
class Obj {
public:
    Obj(const json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected an object");
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [key, value] : j_.items()) {
            if (!ok.count(key)) fail(join(path_, key), "unknown key");
        }
    }

    [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }
    [[nodiscard]] std::string path(const char* key) const { return join(path_, key); }

    [[nodiscard]] const json& at(const char* key) const {
        if (!j_.contains(key)) fail(path(key), "missing required key");
        return j_.at(key);
    }

    [[nodiscard]] double number(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number()) fail(path(key), "expected a number");
        return v.get<double>();
    }
    [[nodiscard]] double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }

    [[nodiscard]] long long integer(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number_integer()) fail(path(key), "expected an integer");
        return v.get<long long>();
    }
    [[nodiscard]] long long integer(const char* key, long long fallback) const {
        return has(key) ? integer(key) : fallback;
    }

    [[nodiscard]] bool boolean(const char* key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) fail(path(key), "expected true or false");
        return v.get<bool>();
    }

    [[nodiscard]] std::string string(const char* key) const {
        const auto& v = at(key);
        if (!v.is_string()) fail(path(key), "expected a string");
        return v.get<std::string>();
    }
    [[nodiscard]] std::string string(const char* key, const std::string& fallback) const {
        return has(key) ? string(key) : fallback;
    }

private:
    const json& j_;
    std::string path_;
};

Vector to_vector(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        // Strings allow infinite bounds: "inf" or "-inf".
        if (j[i].is_string() && (j[i] == "inf" || j[i] == "-inf")) {
            v(static_cast<Eigen::Index>(i)) = (j[i] == "inf" ? 1.0 : -1.0) * std::numeric_limits<double>::infinity();
            continue;
        }
        if (!j[i].is_number()) fail(path + "[" + std::to_string(i) + "]", "expected a number");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

/// Row-major nested arrays.
Matrix to_matrix(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) fail(path, "expected a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix M(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto rp = path + "[" + std::to_string(r) + "]";
        const Vector row = to_vector(j[static_cast<std::size_t>(r)], rp);
        if (row.size() != cols) fail(rp, "rows have different lengths");
        M.row(r) = row.transpose();
    }
    if (!M.allFinite()) fail(path, "matrix entries must be finite");
    return M;
}

/// Matrix, or a flat array read as the diagonal.
Matrix to_weight(const json& j, const std::string& path) {
    if (j.is_array() && !j.empty() && j[0].is_number()) return to_vector(j, path).asDiagonal();
    return to_matrix(j, path);
}

std::vector<Vector> to_vectors(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array");
    std::vector<Vector> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(to_vector(j[i], path + "[" + std::to_string(i) + "]"));
    for (const auto& v : out) {
        if (v.size() != out.front().size()) fail(path, "entries have different lengths");
    }
    return out;
}

ConstraintBox read_box(const Obj& o, const char* lo_key, const char* hi_key, Eigen::Index n) {
    Vector lo = Vector::Constant(n, -std::numeric_limits<double>::infinity());
    Vector hi = Vector::Constant(n, std::numeric_limits<double>::infinity());
    if (o.has(lo_key)) lo = to_vector(o.at(lo_key), o.path(lo_key));
    if (o.has(hi_key)) hi = to_vector(o.at(hi_key), o.path(hi_key));
    if (lo.size() != n) fail(o.path(lo_key), "expected " + std::to_string(n) + " entries");
    if (hi.size() != n) fail(o.path(hi_key), "expected " + std::to_string(n) + " entries");
    try {
        return ConstraintBox(lo, hi);
    } catch (const ModelError& e) {
        fail(o.path(lo_key), e.what());
    }
}

std::vector<Mode> read_modes(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of modes");
    std::vector<Mode> modes;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto p = path + "[" + std::to_string(i) + "]";
        Obj o(j[i], p, {"omega", "zeta", "b", "c", "c_rate"});
        Mode m;
        m.omega = o.number("omega");
        m.zeta = o.number("zeta");
        m.b = to_vector(o.at("b"), o.path("b"));
        m.c = to_vector(o.at("c"), o.path("c"));
        if (o.has("c_rate")) m.c_rate = to_vector(o.at("c_rate"), o.path("c_rate"));
        modes.push_back(std::move(m));
    }
    return modes;
}

/// Discrete (A, B, C) from a "linear" or "modal" description.
ContinuousLti read_discrete_lti(const Obj& o, const std::string& type) {
    ContinuousLti sys;
    bool continuous = false;
    if (type == "modal") {
        sys = modal_system(read_modes(o.at("modes"), o.path("modes")));
        continuous = true;
    } else {
        sys.A = to_matrix(o.at("A"), o.path("A"));
        sys.B = to_matrix(o.at("B"), o.path("B"));
        sys.C = to_matrix(o.at("C"), o.path("C"));
        continuous = o.boolean("continuous", false);
    }
    if (sys.A.rows() != sys.A.cols() || sys.B.rows() != sys.A.rows() || sys.C.cols() != sys.A.rows()) {
        fail(o.path("A"), "inconsistent A, B, C dimensions");
    }
    if (continuous) {
        const double dt = o.number("dt");
        if (!(dt > 0.0)) fail(o.path("dt"), "must be positive");
        auto [A, B] = zoh_discretize(sys.A, sys.B, dt);
        sys.A = std::move(A);
        sys.B = std::move(B);
    }
    return sys;
}

std::shared_ptr<Plant> read_plant(const json& j, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
    const auto type = j.value("type", std::string());
    std::shared_ptr<Plant> plant;
    if (type == "linear" || type == "modal") {
        Obj o(j, path,
              {"type", "A", "B", "C", "continuous", "dt", "modes", "input_gain", "input_delay", "delayed_output",
               "input_lower", "input_upper"});
        const auto sys = read_discrete_lti(o, type);
        LinearPlantOptions opt;
        opt.input_gain = o.number("input_gain", 1.0);
        opt.input_delay = o.boolean("input_delay", false);
        opt.delayed_output = o.boolean("delayed_output", false);
        plant = std::make_shared<LinearMismatchPlant>(sys.A, sys.B, sys.C, opt);
        plant->set_actuator_box(read_box(o, "input_lower", "input_upper", plant->input_dim()));
    } else if (type == "spring") {
        Obj o(j, path, {"type", "mass", "stiffness", "cubic", "damping", "dt", "substeps", "input_lower", "input_upper"});
        SpringParameters p;
        p.mass = o.number("mass");
        p.stiffness = o.number("stiffness");
        p.cubic = o.number("cubic", 0.0);
        p.damping = o.number("damping");
        p.dt = o.number("dt");
        p.substeps = static_cast<int>(o.integer("substeps", 4));
        plant = std::make_shared<NonlinearSpringPlant>(p);
        plant->set_actuator_box(read_box(o, "input_lower", "input_upper", 1));
    } else if (type == "bicycle") {
        Obj o(j, path,
              {"type", "lr", "lf", "dt", "substeps", "steer_lag", "steer_gain", "gain_slope", "slip", "accel_gain",
               "drag", "input_lower", "input_upper"});
        BicycleParameters p;
        p.lr = o.number("lr");
        p.lf = o.number("lf");
        p.dt = o.number("dt");
        p.substeps = static_cast<int>(o.integer("substeps", 4));
        BicycleMismatch m;
        m.steer_lag = o.number("steer_lag", 0.0);
        m.steer_gain = o.number("steer_gain", 1.0);
        m.gain_slope = o.number("gain_slope", 0.0);
        m.slip = o.number("slip", 0.0);
        m.accel_gain = o.number("accel_gain", 1.0);
        m.drag = o.number("drag", 0.0);
        plant = std::make_shared<TrueBicyclePlant>(p, m);
        plant->set_actuator_box(read_box(o, "input_lower", "input_upper", 2));
    } else {
        fail(join(path, "type"), "expected one of linear, modal, spring, bicycle");
    }
    return plant;
}

PeriodicReference read_reference(const json& j, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
    const auto type = j.value("type", std::string());
    if (type == "samples") {
        Obj o(j, path, {"type", "samples"});
        return PeriodicReference(to_vectors(o.at("samples"), o.path("samples")));
    }
    if (type == "sinusoid") {
        Obj o(j, path, {"type", "period", "offset", "terms"});
        const auto N = o.integer("period");
        if (N < 1) fail(o.path("period"), "must be positive");
        const Vector offset = to_vector(o.at("offset"), o.path("offset"));
        std::vector<SinusoidTerm> terms;
        if (o.has("terms")) {
            const auto& arr = o.at("terms");
            if (!arr.is_array()) fail(o.path("terms"), "expected an array");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const auto p = o.path("terms") + "[" + std::to_string(i) + "]";
                Obj t(arr[i], p, {"harmonic", "amplitude", "phase"});
                SinusoidTerm term;
                term.harmonic = static_cast<int>(t.integer("harmonic"));
                term.amplitude = to_vector(t.at("amplitude"), t.path("amplitude"));
                term.phase = t.has("phase") ? to_vector(t.at("phase"), t.path("phase"))
                                            : Vector::Zero(term.amplitude.size());
                if (term.amplitude.size() != offset.size() || term.phase.size() != offset.size()) {
                    fail(p, "amplitude and phase must match the offset dimension");
                }
                terms.push_back(std::move(term));
            }
        }
        return sinusoid_reference(static_cast<Eigen::Index>(N), offset, terms);
    }
    fail(join(path, "type"), "expected samples or sinusoid");
}

QpSettings read_qp(const Obj& parent) {
    QpSettings s;
    if (!parent.has("qp")) return s;
    Obj o(parent.at("qp"), parent.path("qp"), {"eps_abs", "eps_rel", "max_iterations", "rho", "polish"});
    s.eps_abs = o.number("eps_abs", s.eps_abs);
    s.eps_rel = o.number("eps_rel", s.eps_rel);
    s.max_iterations = static_cast<int>(o.integer("max_iterations", s.max_iterations));
    s.rho = o.number("rho", s.rho);
    s.polish = o.boolean("polish", s.polish);
    return s;
}

ChannelKind read_channel_kind(const Obj& o) {
    const auto k = o.string("channels", "output");
    if (k == "output") return ChannelKind::output;
    if (k == "input") return ChannelKind::input;
    if (k == "full_state") return ChannelKind::full_state;
    fail(o.path("channels"), "expected output, input or full_state");
}

LinearController read_linear_controller(const Obj& o) {
    const auto& nj = o.at("nominal");
    const auto np = o.path("nominal");
    if (!nj.is_object()) fail(np, "expected an object");
    const auto type = nj.value("type", std::string());
    if (type != "linear" && type != "modal") fail(join(np, "type"), "expected linear or modal");
    Obj n(nj, np, {"type", "A", "B", "C", "continuous", "dt", "modes", "delayed_output"});
    const auto sys = read_discrete_lti(n, type);

    std::optional<LtiModel> model;
    try {
        model.emplace(sys.A, sys.B, sys.C);
        if (n.boolean("delayed_output", false)) model.emplace(with_delayed_output(*model));
    } catch (const ModelError& e) {
        fail(np, e.what());
    }

    LinearController c{*model, read_channel_kind(o), {}, {}, 1e-10};
    if (o.has("observer")) {
        Obj w(o.at("observer"), o.path("observer"), {"state_weight", "disturbance_weight", "measurement_weight"});
        c.observer.state = w.number("state_weight", c.observer.state);
        c.observer.disturbance = w.number("disturbance_weight", c.observer.disturbance);
        c.observer.measurement = w.number("measurement_weight", c.observer.measurement);
    }
    c.mpc.horizon = static_cast<int>(o.integer("horizon"));
    c.mpc.Q = to_weight(o.at("Q"), o.path("Q"));
    c.mpc.R = to_weight(o.at("R"), o.path("R"));
    if (c.mpc.Q.rows() != model->nx() || c.mpc.Q.cols() != model->nx()) fail(o.path("Q"), "must be nx by nx");
    if (c.mpc.R.rows() != model->nu() || c.mpc.R.cols() != model->nu()) fail(o.path("R"), "must be nu by nu");
    c.mpc.state_box = read_box(o, "state_lower", "state_upper", model->nx());
    c.mpc.input_box = read_box(o, "input_lower", "input_upper", model->nu());
    c.mpc.slack_weight = o.number("slack_weight", c.mpc.slack_weight);
    c.mpc.qp = read_qp(o);
    c.target_threshold = o.number("target_threshold", c.target_threshold);
    return c;
}

NonlinearController read_nonlinear_controller(const Obj& o) {
    const auto np = o.path("nominal");
    Obj n(o.at("nominal"), np, {"type", "lr", "lf", "dt", "substeps"});
    if (n.string("type") != "bicycle") fail(n.path("type"), "expected bicycle");
    BicycleParameters p;
    p.lr = n.number("lr");
    p.lf = n.number("lf");
    p.dt = n.number("dt");
    p.substeps = static_cast<int>(n.integer("substeps", 4));
    if (!(p.lr > 0.0) || !(p.dt > 0.0) || p.substeps < 1) fail(np, "invalid bicycle parameters");

    NonlinearController c;
    c.f = [p](const Vector& x, const Vector& u) { return kinematic_bicycle_step(p, x, u); };
    c.nx = 4;
    c.nu = 2;
    if (o.has("observer")) {
        Obj w(o.at("observer"), o.path("observer"), {"lambda"});
        c.observer_lambda = w.number("lambda", c.observer_lambda);
    }
    auto& m = c.nmpc;
    m.horizon = static_cast<int>(o.integer("horizon"));
    m.Qz = to_weight(o.at("Qz"), o.path("Qz"));
    m.R = to_weight(o.at("R"), o.path("R"));
    if (m.R.rows() != 2 || m.R.cols() != 2) fail(o.path("R"), "must be 2 by 2");
    m.state_box = read_box(o, "state_lower", "state_upper", 4);
    m.input_box = read_box(o, "input_lower", "input_upper", 2);
    m.max_sqp_iterations = static_cast<int>(o.integer("max_sqp_iterations", m.max_sqp_iterations));
    m.kkt_tolerance = o.number("kkt_tolerance", m.kkt_tolerance);
    m.input_rate = o.boolean("input_rate", m.input_rate);
    m.bootstrap_weight = o.number("bootstrap_weight", m.bootstrap_weight);
    m.slack_weight = o.number("slack_weight", m.slack_weight);
    m.qp = read_qp(o);
    return c;
}

std::variant<LinearController, NonlinearController> read_controller(const json& j, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
    const auto f = j.value("formulation", std::string("linear"));
    if (f == "linear") {
        Obj o(j, path,
              {"formulation", "nominal", "channels", "observer", "horizon", "Q", "R", "state_lower", "state_upper",
               "input_lower", "input_upper", "slack_weight", "target_threshold", "qp"});
        return read_linear_controller(o);
    }
    if (f == "nonlinear") {
        Obj o(j, path,
              {"formulation", "nominal", "observer", "horizon", "Qz", "R", "state_lower", "state_upper", "input_lower",
               "input_upper", "max_sqp_iterations", "kkt_tolerance", "input_rate", "bootstrap_weight", "slack_weight",
               "qp"});
        return read_nonlinear_controller(o);
    }
    fail(join(path, "formulation"), "expected linear or nonlinear");
}

int line_of(std::string_view text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

PeriodicReference sinusoid_reference(Eigen::Index period, const Vector& offset, const std::vector<SinusoidTerm>& terms) {
    if (period < 1) throw ModelError("reference period must be positive");
    std::vector<Vector> samples;
    for (Eigen::Index k = 0; k < period; ++k) {
        Vector r = offset;
        for (const auto& term : terms) {
            const double angle = 2.0 * std::numbers::pi * term.harmonic * static_cast<double>(k) / static_cast<double>(period);
            for (Eigen::Index i = 0; i < r.size(); ++i) r(i) += term.amplitude(i) * std::sin(angle + term.phase(i));
        }
        samples.push_back(std::move(r));
    }
    return PeriodicReference(std::move(samples));
}

Scenario parse_scenario(std::string_view text, const std::string& source) {
    json j;
    try {
        j = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(source + ":" + std::to_string(line_of(text, e.byte)) + ": syntax error: " + e.what());
    }
    try {
        Obj o(j, "", {"name", "periods", "seed", "noise_std", "initial_state", "initial_estimate", "observer_period",
                      "reference", "H", "plant", "controller"});
        auto plant = read_plant(o.at("plant"), "plant");
        auto reference = read_reference(o.at("reference"), "reference");
        std::optional<SelectionMatrix> H;
        try {
            H.emplace(to_matrix(o.at("H"), "H"));
        } catch (const ModelError& e) {
            fail("H", e.what());
        }
        Scenario s{o.string("name"),
                   std::move(plant),
                   *H,
                   std::move(reference),
                   read_controller(o.at("controller"), "controller"),
                   10,
                   0,
                   0.0,
                   InitialState::zero,
                   Vector(),
                   InitialEstimate::zero,
                   0};
        if (s.name.empty()) fail("name", "must not be empty");
        s.periods = static_cast<int>(o.integer("periods"));
        if (s.periods < 1) fail("periods", "must be positive");
        const auto seed = o.integer("seed", 0);
        if (seed < 0) fail("seed", "must be non-negative");
        s.seed = static_cast<std::uint64_t>(seed);
        s.noise_std = o.number("noise_std", 0.0);
        if (s.noise_std < 0.0) fail("noise_std", "must be non-negative");
        s.observer_period = static_cast<Eigen::Index>(o.integer("observer_period", 0));
        if (s.observer_period < 0) fail("observer_period", "must be non-negative");

        if (o.has("initial_state")) {
            const auto& v = o.at("initial_state");
            if (v.is_string()) {
                if (v == "zero") {
                    s.initial_state = InitialState::zero;
                } else if (v == "target_orbit") {
                    s.initial_state = InitialState::target_orbit;
                } else {
                    fail("initial_state", "expected zero, target_orbit or an array");
                }
            } else {
                s.initial_state = InitialState::given;
                s.x0 = to_vector(v, "initial_state");
                if (s.x0.size() != s.plant->state_dim()) fail("initial_state", "must match the plant state dimension");
            }
        }
        const auto est = o.string("initial_estimate", "zero");
        if (est == "zero") {
            s.initial_estimate = InitialEstimate::zero;
        } else if (est == "plant_state") {
            s.initial_estimate = InitialEstimate::plant_state;
        } else if (est == "measurement") {
            s.initial_estimate = InitialEstimate::measurement;
        } else {
            fail("initial_estimate", "expected zero, plant_state or measurement");
        }
        if (s.H.nr() != s.reference.dim()) fail("H", "row count must equal the reference dimension");
        if (s.H.ny() != s.plant->output_dim()) fail("H", "column count must equal the plant output dimension");
        return s;
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    } catch (const ModelError& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path.string());
}

}  // namespace pimpc
