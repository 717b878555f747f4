#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace blochwp {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;

inline constexpr double pi = 3.14159265358979323846264338327950288;
inline constexpr cplx I{0.0, 1.0};

enum class ErrorKind {
    invalid_argument,
    aliasing,
    eigensolver,
    degenerate_band,
    gauge_continuation,
    linear_solve,
    gap_violation,
    blow_up,
    out_of_range,
    invariant_drift,
    boundary_mass,
    spectral_tail,
    resolution,
    grid_mismatch,
    unsupported_dimension,
    config,
    io,
    fit,
};

inline std::string_view to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::aliasing: return "aliasing";
    case ErrorKind::eigensolver: return "eigensolver";
    case ErrorKind::degenerate_band: return "degenerate_band";
    case ErrorKind::gauge_continuation: return "gauge_continuation";
    case ErrorKind::linear_solve: return "linear_solve";
    case ErrorKind::gap_violation: return "gap_violation";
    case ErrorKind::blow_up: return "blow_up";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::invariant_drift: return "invariant_drift";
    case ErrorKind::boundary_mass: return "boundary_mass";
    case ErrorKind::spectral_tail: return "spectral_tail";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::grid_mismatch: return "grid_mismatch";
    case ErrorKind::unsupported_dimension: return "unsupported_dimension";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::fit: return "fit";
    }
    return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
    if (!ok) fail(kind, what);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

/// Integer multi-index into the dual lattice.
using MultiIndex = std::vector<int>;

} // namespace blochwp
