#pragma once

#include <stdexcept>
#include <string>

namespace singliq {

/// Configuration / input validation failure (CLI exit code 2).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// A verified invariant failed on a concrete run (CLI exit code 3).
struct invariant_error : std::runtime_error {
    explicit invariant_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical breakdown: NaN, failed tridiagonal solve, Newton divergence (exit code 4).
struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// Kernel evaluated outside its admissible region for q < 2.
struct singular_kernel_error : std::domain_error {
    explicit singular_kernel_error(const std::string& what) : std::domain_error(what) {}
};

} // namespace singliq
