#pragma once

#include "fft.hpp"

#include <cmath>
#include <functional>
#include <optional>

namespace blochwp {

/// Uniform periodic grid on [-L, L)^d with N points per axis, row-major.
struct PeriodicGrid {
    int dim = 1;
    double half_width = 16.0;
    int points = 512;

    double spacing() const { return 2.0 * half_width / points; }
    double coordinate(int i) const { return -half_width + i * spacing(); }
    std::size_t size() const {
        std::size_t n = 1;
        for (int j = 0; j < dim; ++j) n *= static_cast<std::size_t>(points);
        return n;
    }
    double cell() const { return std::pow(spacing(), dim); }
    std::vector<int> shape() const { return std::vector<int>(static_cast<std::size_t>(dim), points); }

    /// Per-axis integer coordinates of flat index i.
    std::vector<int> unflatten(std::size_t i) const {
        std::vector<int> idx(static_cast<std::size_t>(dim));
        for (int j = dim - 1; j >= 0; --j) {
            idx[static_cast<std::size_t>(j)] = static_cast<int>(i % static_cast<std::size_t>(points));
            i /= static_cast<std::size_t>(points);
        }
        return idx;
    }

    Vec point(std::size_t i) const {
        const auto idx = unflatten(i);
        Vec z(dim);
        for (int j = 0; j < dim; ++j) z[j] = coordinate(idx[static_cast<std::size_t>(j)]);
        return z;
    }

    /// Angular frequency vector of flat spectral index i.
    Vec frequency(std::size_t i) const {
        const auto k = wavenumbers(points, 2.0 * half_width);
        const auto idx = unflatten(i);
        Vec z(dim);
        for (int j = 0; j < dim; ++j) z[j] = k[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
        return z;
    }

    bool operator==(const PeriodicGrid& o) const {
        return dim == o.dim && points == o.points && half_width == o.half_width;
    }

    void validate() const {
        require(dim >= 1 && dim <= 3, ErrorKind::unsupported_dimension, "grid dimension must be 1, 2 or 3");
        require(points >= 4 && points % 2 == 0, ErrorKind::invalid_argument, "grid needs an even number >= 4 of points");
        require(half_width > 0 && std::isfinite(half_width), ErrorKind::invalid_argument, "grid half-width must be positive");
    }
};

inline cplx ipow(cplx base, int e) {
    cplx r{1.0, 0.0};
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}

inline double l2_norm(const PeriodicGrid& g, const std::vector<cplx>& v) {
    double s = 0;
    for (const auto& x : v) s += std::norm(x);
    return std::sqrt(s * g.cell());
}

inline cplx l2_inner(const PeriodicGrid& g, const std::vector<cplx>& a, const std::vector<cplx>& b) {
    cplx s{};
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s * g.cell();
}

/// Fraction of the squared norm located where some |z_j| > fraction * L.
inline double boundary_mass_fraction(const PeriodicGrid& g, const std::vector<cplx>& v, double fraction = 0.9) {
    double total = 0, outer = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double w = std::norm(v[i]);
        total += w;
        const auto idx = g.unflatten(i);
        for (int c : idx)
            if (std::abs(g.coordinate(c)) > fraction * g.half_width) {
                outer += w;
                break;
            }
    }
    return total > 0 ? outer / total : 0.0;
}

/// Spectral partial derivative d^beta of grid samples.
inline std::vector<cplx> spectral_derivative(const PeriodicGrid& g, const std::vector<cplx>& v, const std::vector<int>& order,
                                             const FourierTransform* fft = nullptr) {
    bool trivial = true;
    for (int o : order) trivial = trivial && o == 0;
    if (trivial) return v;
    std::optional<FourierTransform> own;
    if (!fft) fft = &own.emplace(g.shape());
    std::vector<cplx> w = v;
    fft->forward(w);
    const auto k = wavenumbers(g.points, 2.0 * g.half_width);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto idx = g.unflatten(i);
        cplx f{1.0, 0.0};
        for (int j = 0; j < g.dim; ++j) {
            const int o = order[static_cast<std::size_t>(j)];
            if (o == 0) continue;
            const int m = idx[static_cast<std::size_t>(j)];
            // odd derivatives of the Nyquist mode are not representable
            if (m == g.points / 2 && o % 2 == 1) f = 0.0;
            f *= ipow(I * k[static_cast<std::size_t>(m)], o);
        }
        w[i] *= f;
    }
    fft->backward(w);
    return w;
}

/// Band-limited trigonometric interpolant of one-dimensional periodic samples.
/// Evaluation is periodic with period 2L; callers handle points outside the box.
class FourierInterpolant1D {
public:
    FourierInterpolant1D(const PeriodicGrid& g, const std::vector<cplx>& v, int derivative = 0)
        : n_(g.points), half_width_(g.half_width) {
        require(g.dim == 1, ErrorKind::unsupported_dimension, "Fourier interpolation is one-dimensional");
        std::vector<cplx> w = v;
        FourierTransform(g.shape()).forward(w);
        coeffs_.assign(static_cast<std::size_t>(n_ + 1), cplx{});
        const int half = n_ / 2;
        for (int i = 0; i < n_; ++i) {
            const int m = i < half ? i : i - n_;
            const cplx c = w[static_cast<std::size_t>(i)] / static_cast<double>(n_);
            if (m == -half) {
                add(-half, 0.5 * c, derivative);
                add(half, 0.5 * c, derivative);
            } else {
                add(m, c, derivative);
            }
        }
    }

    cplx operator()(double z) const {
        const double angle = pi * (z + half_width_) / half_width_;
        const cplx w = std::exp(I * angle);
        cplx acc{};
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * w + *it;
        return acc * std::exp(-I * (angle * (n_ / 2)));
    }

private:
    void add(int m, cplx c, int derivative) {
        const double zeta = pi * m / half_width_;
        coeffs_[static_cast<std::size_t>(m + n_ / 2)] += c * ipow(I * zeta, derivative);
    }

    int n_;
    double half_width_;
    std::vector<cplx> coeffs_; ///< index m + N/2 for m in [-N/2, N/2]
};

inline std::vector<cplx> sample_on(const PeriodicGrid& g, const std::function<cplx(const Vec&)>& f) {
    std::vector<cplx> out(g.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(g.point(i));
    return out;
}

} // namespace blochwp
