#include "pimpc/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pimpc {

namespace {

using json = nlohmann::ordered_json;

void header_group(std::ostringstream& os, const char* prefix, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << prefix << i;
}

void value_group(std::ostringstream& os, const Vector& v, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << (i < v.size() ? format_number(v(i)) : std::string());
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string series_csv(const ScenarioResult& result) {
    std::ostringstream os;
    os << "# " << kSeriesFormat << '\n';
    if (result.steps.empty()) {
        os << "t,phase\n";
        return os.str();
    }
    const auto& s0 = result.steps.front();
    const auto nz = s0.z.size(), nu = s0.u.size(), ny = s0.y.size();
    const auto nxb = s0.xbar0.size(), nub = s0.ubar0.size(), nx = s0.x_f.size();
    os << "t,phase";
    header_group(os, "z_", nz);
    header_group(os, "r_", nz);
    os << ",error";
    header_group(os, "u_", nu);
    header_group(os, "y_", ny);
    os << ",innovation,d_hat_norm,active,solver_iterations,solver_status,lqr_deviation";
    header_group(os, "xbar0_", nxb);
    header_group(os, "ubar0_", nub);
    header_group(os, "x_", nx);
    os << '\n';
    for (const auto& s : result.steps) {
        os << s.t << ',' << s.phase;
        value_group(os, s.z, nz);
        value_group(os, s.r, nz);
        os << ',' << format_number(s.error);
        value_group(os, s.u, nu);
        value_group(os, s.y, ny);
        os << ',' << format_number(s.innovation) << ',' << format_number(s.d_hat_norm) << ',' << s.active_constraints
           << ',' << s.solver_iterations << ',' << s.solver_status << ',' << format_number(s.lqr_deviation);
        value_group(os, s.xbar0, nxb);
        value_group(os, s.ubar0, nub);
        value_group(os, s.x_f, nx);
        os << '\n';
    }
    return os.str();
}

std::string summary_json(const ScenarioResult& result, const Design& design) {
    json j;
    j["scenario"] = result.scenario;
    j["variant"] = std::string(to_string(result.variant));
    j["period"] = result.period;
    j["observer_period"] = result.observer_period;
    j["steps"] = result.steps.size();
    j["completed"] = result.completed;
    j["fault"] = result.fault.empty() ? json(nullptr) : json(result.fault);
    if (!result.completed && !result.steps.empty()) j["last_good_step"] = result.steps.back().t;

    json checks = json::array();
    for (const auto& c : design.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    j["checks"] = checks;

    j["final_mean_error"] = number_or_null(result.final_error());
    const auto N = static_cast<std::size_t>(result.period);
    if (N > 0 && result.steps.size() >= 2 * N) {
        j["periodicity_residual"] = number_or_null(periodicity_check(result, 1));
        j["converged"] = is_converged(result);
    } else {
        j["periodicity_residual"] = nullptr;
        j["converged"] = false;
    }
    if (result.steady_state) {
        j["steady_state_residual"] = {{"dynamics", number_or_null(result.steady_state->dynamics)},
                                      {"output", number_or_null(result.steady_state->output)}};
    }
    int active_steps = 0;
    double max_lqr = 0.0;
    bool any_lqr = false;
    for (const auto& s : result.steps) {
        if (s.active_constraints > 0) ++active_steps;
        if (std::isfinite(s.lqr_deviation)) {
            any_lqr = true;
            max_lqr = std::max(max_lqr, s.lqr_deviation);
        }
    }
    j["steps_with_active_constraints"] = active_steps;
    j["clamped_steps"] = result.clamped_steps;
    j["max_lqr_deviation"] = any_lqr ? json(max_lqr) : json(nullptr);

    json periods = json::array();
    for (const auto& p : result.periods) {
        periods.push_back({{"period", p.period},
                           {"mean_error", number_or_null(p.mean_error)},
                           {"peak_error", number_or_null(p.peak_error)},
                           {"mean_innovation", number_or_null(p.mean_innovation)}});
    }
    j["periods"] = periods;
    json dnorms = json::array();
    for (double v : result.d_hat_period_norms) dnorms.push_back(number_or_null(v));
    j["d_hat_period_norms"] = dnorms;
    return j.dump(2) + "\n";
}

std::string comparison_csv(const Comparison& cmp) {
    std::ostringstream os;
    os << "period";
    std::size_t rows = 0;
    for (const auto& o : cmp.outcomes) {
        const auto name = std::string(to_string(o.variant));
        os << ',' << name << "_mean," << name << "_peak";
        if (o.result) rows = std::max(rows, o.result->periods.size());
    }
    os << '\n';
    for (std::size_t p = 0; p < rows; ++p) {
        os << p + 1;
        for (const auto& o : cmp.outcomes) {
            if (o.result && p < o.result->periods.size()) {
                os << ',' << format_number(o.result->periods[p].mean_error) << ','
                   << format_number(o.result->periods[p].peak_error);
            } else {
                os << ",,";
            }
        }
        os << '\n';
    }
    return os.str();
}

std::string comparison_json(const Comparison& cmp) {
    json j;
    j["scenario"] = cmp.scenario;
    json variants = json::array();
    for (const auto& o : cmp.outcomes) {
        json v;
        v["variant"] = std::string(to_string(o.variant));
        v["status"] = o.result && o.result->completed ? "completed" : "failed";
        v["error"] = o.error.empty() ? json(nullptr) : json(o.error);
        v["final_mean_error"] = o.result ? number_or_null(o.result->final_error()) : json(nullptr);
        variants.push_back(v);
    }
    j["variants"] = variants;
    j["strict_ordering"] = cmp.strict_ordering();
    j["equivalent"] = cmp.equivalent();
    return j.dump(2) + "\n";
}

std::filesystem::path write_run(const std::filesystem::path& outdir, const ScenarioResult& result,
                                const Design& design) {
    const auto dir = outdir / result.scenario / std::string(to_string(result.variant));
    std::filesystem::create_directories(dir);
    write_file(dir / "series.csv", series_csv(result));
    write_file(dir / "summary.json", summary_json(result, design));
    return dir;
}

void write_comparison(const std::filesystem::path& outdir, const Comparison& cmp) {
    const auto dir = outdir / cmp.scenario;
    std::filesystem::create_directories(dir);
    for (const auto& o : cmp.outcomes) {
        if (o.result && o.design) write_run(outdir, *o.result, *o.design);
    }
    write_file(dir / "comparison.csv", comparison_csv(cmp));
    write_file(dir / "comparison.json", comparison_json(cmp));
}

}  // namespace pimpc
