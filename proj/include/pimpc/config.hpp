#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pimpc/harness.hpp"

namespace pimpc {

/// Malformed or inconsistent scenario document. The message carries the
/// key path (and line for syntax errors).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses a JSON scenario document. Unknown keys are rejected.
Scenario parse_scenario(std::string_view text, const std::string& source = "<string>");

Scenario load_scenario(const std::filesystem::path& path);

/// r_i(k) = offset_i + sum_j amplitude_ij sin(2 pi h_j k / N + phase_ij)
struct SinusoidTerm {
    int harmonic = 1;
    Vector amplitude;
    Vector phase;
};

PeriodicReference sinusoid_reference(Eigen::Index period, const Vector& offset, const std::vector<SinusoidTerm>& terms);

}  // namespace pimpc
