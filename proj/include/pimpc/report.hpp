#pragma once

#include <filesystem>
#include <string>

#include "pimpc/harness.hpp"

namespace pimpc {

inline constexpr const char* kSeriesFormat = "pimpc-series v1";

/// One row per step. Header, after a `# pimpc-series v1` comment line:
///   t, phase, z_*, r_*, error, u_*, y_*, innovation, d_hat_norm,
///   active, solver_iterations, solver_status, lqr_deviation, xbar0_*, ubar0_*, x_*
/// Numbers use %.17g; output is byte-identical for identical results.
std::string series_csv(const ScenarioResult& result);

/// Summary document (JSON): per-period metrics, convergence flags,
/// steady-state residuals and the fault, if any.
std::string summary_json(const ScenarioResult& result, const Design& design);

/// Per-period mean and peak error for each variant, one row per period.
std::string comparison_csv(const Comparison& cmp);
std::string comparison_json(const Comparison& cmp);

/// Writes <outdir>/<scenario>/<variant>/{series.csv, summary.json}.
std::filesystem::path write_run(const std::filesystem::path& outdir, const ScenarioResult& result, const Design& design);

/// Writes every variant's run plus <outdir>/<scenario>/comparison.{csv,json}.
void write_comparison(const std::filesystem::path& outdir, const Comparison& cmp);

std::string format_number(double v);

}  // namespace pimpc
