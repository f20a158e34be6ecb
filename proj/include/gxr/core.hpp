#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gxr {

template <int N> using Vec = Eigen::Matrix<double, N, 1>;
template <int N> using Mat = Eigen::Matrix<double, N, N>;

inline constexpr double pi = std::numbers::pi;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A point fell outside the (extended) chart domain.
struct DomainError : Error {
    using Error::Error;
};

/// An operation was called with inputs violating its preconditions.
struct PreconditionError : Error {
    using Error::Error;
};

/// Integration exceeded the trapped-ray time budget.
struct TrappedGeodesicError : Error {
    using Error::Error;
};

/// A geodesic left the extended domain before the requested time.
struct RangeError : Error {
    using Error::Error;
};

/// Invalid experiment configuration.
struct ConfigError : Error {
    ConfigError(const std::string& msg, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line(line) {}
    int line;
};

/// Volume of the unit sphere S^{N-1}.
template <int N> constexpr double sphere_volume() {
    if constexpr (N == 2) return 2.0 * pi;
    else return 4.0 * pi;
}

}  // namespace gxr
