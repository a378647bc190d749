// Command-line entry point: design checks, single runs and variant
// comparisons. Exit codes: 0 ok, 1 design check failed, 2 config error,
// 3 simulation fault.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pimpc/config.hpp"
#include "pimpc/report.hpp"

namespace {

using namespace pimpc;

constexpr int kOk = 0;
constexpr int kDesignFailure = 1;
constexpr int kConfigError = 2;
constexpr int kSimulationFault = 3;

void print_checks(const Design& d, bool verbose) {
    std::cout << "variant " << to_string(d.variant) << '\n';
    for (const auto& c : d.checks) {
        std::cout << "  " << (c.passed ? "pass " : "FAIL ") << c.name;
        if ((verbose || !c.passed) && !c.detail.empty()) std::cout << "  (" << c.detail << ')';
        std::cout << '\n';
    }
}

void apply_overrides(Scenario& s, std::optional<long long> seed, std::optional<int> periods) {
    if (seed) {
        if (*seed < 0) throw ConfigError("--seed must be non-negative");
        s.seed = static_cast<std::uint64_t>(*seed);
    }
    if (periods) {
        if (*periods < 1) throw ConfigError("--periods must be positive");
        s.periods = *periods;
    }
}

int cmd_check(const std::string& path, bool verbose) {
    const Scenario s = load_scenario(path);
    std::cout << "scenario " << s.name << '\n';
    bool ok = true;
    for (auto v : {ControllerVariant::standard, ControllerVariant::offset_free, ControllerVariant::pi_mpc}) {
        const Design d = run_design(s, v);
        print_checks(d, verbose);
        ok = ok && d.passed();
    }
    std::cout << (ok ? "all design checks passed\n" : "design checks failed\n");
    return ok ? kOk : kDesignFailure;
}

void print_run(const ScenarioResult& r, const std::filesystem::path& dir) {
    std::cout << "scenario " << r.scenario << " variant " << to_string(r.variant) << ": " << r.steps.size()
              << " steps, final-period mean error " << format_number(r.final_error()) << '\n';
    std::cout << "wrote " << dir.string() << '\n';
}

int cmd_run(const std::string& path, const std::string& variant_name, const std::string& out,
            std::optional<long long> seed, std::optional<int> periods, bool verbose) {
    Scenario s = load_scenario(path);
    apply_overrides(s, seed, periods);
    const auto variant = parse_variant(variant_name);
    if (!variant) throw ConfigError("unknown variant '" + variant_name + "'");
    const Design d = run_design(s, *variant);
    if (!d.passed()) {
        print_checks(d, true);
        return kDesignFailure;
    }
    if (verbose) print_checks(d, true);
    const ScenarioResult r = run_closed_loop(s, d);
    const auto dir = write_run(out, r, d);
    print_run(r, dir);
    if (!r.completed) {
        std::cerr << "simulation fault: " << r.fault << '\n';
        if (!r.steps.empty()) {
            const auto& last = r.steps.back();
            std::cerr << "last good step t=" << last.t << " x=";
            for (Eigen::Index i = 0; i < last.x_f.size(); ++i) std::cerr << (i ? "," : "") << format_number(last.x_f(i));
            std::cerr << '\n';
        }
        return kSimulationFault;
    }
    return kOk;
}

int cmd_compare(const std::string& path, const std::string& out, std::optional<long long> seed,
                std::optional<int> periods) {
    Scenario s = load_scenario(path);
    apply_overrides(s, seed, periods);
    const Comparison cmp = compare_variants(s);
    write_comparison(out, cmp);
    bool design_failed = false, faulted = false;
    std::cout << "scenario " << s.name << '\n';
    for (const auto& o : cmp.outcomes) {
        std::cout << "  " << to_string(o.variant) << ": ";
        if (o.result && o.result->completed) {
            std::cout << "final-period mean error " << format_number(o.result->final_error()) << '\n';
        } else {
            std::cout << "failed: " << o.error << '\n';
            if (o.result) {
                faulted = true;
            } else {
                design_failed = true;
            }
        }
    }
    if (cmp.equivalent()) {
        std::cout << "variants equivalent\n";
    } else {
        std::cout << "strict ordering pi-mpc < offset-free < standard: " << (cmp.strict_ordering() ? "yes" : "no")
                  << '\n';
    }
    std::cout << "wrote " << (std::filesystem::path(out) / s.name).string() << '\n';
    if (design_failed) return kDesignFailure;
    if (faulted) return kSimulationFault;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Periodic disturbance observer MPC: design checks and closed-loop simulation"};
    app.require_subcommand(1);
    bool verbose = false;

    std::string path, out = "out", variant = "pi-mpc";
    std::optional<long long> seed;
    std::optional<int> periods;

    auto* check = app.add_subcommand("check", "Run the offline design checks for every variant");
    check->add_option("scenario", path, "Scenario file")->required();
    check->add_flag("-v,--verbose", verbose, "Print check details");

    auto* run = app.add_subcommand("run", "Run one variant in closed loop");
    run->add_option("scenario", path, "Scenario file")->required();
    run->add_option("--variant", variant, "standard | offset-free | pi-mpc");
    run->add_option("--out", out, "Output directory");
    run->add_option("--seed", seed, "Noise seed override");
    run->add_option("--periods", periods, "Run length override in periods");
    run->add_flag("-v,--verbose", verbose, "Print check details");

    auto* compare = app.add_subcommand("compare", "Run all three variants with identical settings");
    compare->add_option("scenario", path, "Scenario file")->required();
    compare->add_option("--out", out, "Output directory");
    compare->add_option("--seed", seed, "Noise seed override");
    compare->add_option("--periods", periods, "Run length override in periods");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*check) return cmd_check(path, verbose);
        if (*run) return cmd_run(path, variant, out, seed, periods, verbose);
        if (*compare) return cmd_compare(path, out, seed, periods);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const DesignError& e) {
        std::cerr << "design check failed: " << e.what() << '\n';
        return kDesignFailure;
    } catch (const SimulationFault& e) {
        std::cerr << "simulation fault: " << e.what() << '\n';
        return kSimulationFault;
    } catch (const ModelError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }
    return kOk;
}
