#pragma once

#include "assembly.hpp"

namespace blochwp {

struct SolverParams {
    double dt = 0;                     ///< time step; 0 selects dt_factor * epsilon
    double dt_factor = 0.01;           ///< default dt = dt_factor * epsilon
    double max_dt_factor = 0.1;        ///< stability budget dt <= max_dt_factor * epsilon
    double boundary_threshold = 1e-8;  ///< allowed mass fraction beyond 0.9 L_x
    double self_check_tol = 0;         ///< > 0: compare against a dt/2 run, fail above this
};

namespace detail {

/// Strang split-step propagator for i psi_t = -(eps/2) psi'' + (1/eps)(V_Gamma(x/eps) + V(x)) psi.
class SplitStep {
public:
    SplitStep(const PeriodicGrid& grid, double epsilon, const LatticeSpec& lattice, const FourierPotential& vg,
              const ExternalPotential& v)
        : grid_(grid), eps_(epsilon), fft_(grid.shape()) {
        potential_.resize(grid.size());
        xi2_.resize(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Vec x = grid.point(i);
            potential_[i] = (vg(lattice, x / epsilon) + v.value(x)) / epsilon;
            xi2_[i] = grid.frequency(i).squaredNorm();
        }
    }

    /// `steps` steps of size h with fused inner potential half-steps.
    void advance(std::vector<cplx>& psi, double h, std::size_t steps) const {
        if (steps == 0) return;
        std::vector<cplx> half(psi.size()), full(psi.size()), kin(psi.size());
        for (std::size_t i = 0; i < psi.size(); ++i) {
            half[i] = std::exp(-I * (0.5 * h * potential_[i]));
            full[i] = half[i] * half[i];
            kin[i] = std::exp(-I * (0.5 * h * eps_ * xi2_[i]));
        }
        for (std::size_t i = 0; i < psi.size(); ++i) psi[i] *= half[i];
        for (std::size_t s = 0; s < steps; ++s) {
            fft_.forward(psi);
            for (std::size_t i = 0; i < psi.size(); ++i) psi[i] *= kin[i];
            fft_.backward(psi);
            const auto& phase = s + 1 == steps ? half : full;
            for (std::size_t i = 0; i < psi.size(); ++i) psi[i] *= phase[i];
        }
    }

private:
    PeriodicGrid grid_;
    double eps_;
    FourierTransform fft_;
    std::vector<double> potential_;
    std::vector<double> xi2_;
};

inline std::vector<GridWaveField> run_split_step(const GridWaveField& psi0, const LatticeSpec& lattice,
                                                 const FourierPotential& vg, const ExternalPotential& v,
                                                 const std::vector<double>& times, double dt,
                                                 double boundary_threshold) {
    const SplitStep stepper(psi0.grid, psi0.epsilon, lattice, vg, v);
    std::vector<GridWaveField> out;
    GridWaveField cur = psi0;
    auto check = [&](const GridWaveField& f) {
        const double frac = boundary_mass_fraction(f.grid, f.values, 0.9);
        require(frac <= boundary_threshold, ErrorKind::boundary_mass,
                "wave mass fraction " + std::to_string(frac) + " beyond 0.9 L_x at t = " + std::to_string(f.time));
    };
    check(cur);
    for (double t : times) {
        require(t >= cur.time - 1e-12, ErrorKind::invalid_argument, "snapshot times must be nondecreasing");
        const double span = t - cur.time;
        const auto steps = static_cast<std::size_t>(std::max(0.0, std::ceil(span / dt - 1e-9)));
        if (steps > 0) stepper.advance(cur.values, span / static_cast<double>(steps), steps);
        cur.time = t;
        check(cur);
        out.push_back(cur);
    }
    return out;
}

} // namespace detail

/// Reference solution of the semiclassically scaled equation on the periodic box,
/// returned at the requested (nondecreasing) snapshot times.
inline std::vector<GridWaveField> solve_nls0(const GridWaveField& psi0, const LatticeSpec& lattice,
                                             const FourierPotential& vg, const ExternalPotential& v,
                                             const std::vector<double>& times, const SolverParams& params = {}) {
    psi0.grid.validate();
    require(psi0.values.size() == psi0.grid.size(), ErrorKind::grid_mismatch, "initial data do not match the grid");
    require(psi0.epsilon > 0 && psi0.epsilon < 1, ErrorKind::invalid_argument, "epsilon must lie in (0, 1)");
    require(lattice.dim() == psi0.grid.dim && v.dim() == psi0.grid.dim, ErrorKind::invalid_argument,
            "lattice, potential and grid dimensions differ");
    const double dt = params.dt > 0 ? params.dt : params.dt_factor * psi0.epsilon;
    require(dt <= params.max_dt_factor * psi0.epsilon * (1 + 1e-12), ErrorKind::invalid_argument,
            "time step exceeds the budget " + std::to_string(params.max_dt_factor) + " * epsilon");
    auto out = detail::run_split_step(psi0, lattice, vg, v, times, dt, params.boundary_threshold);
    if (params.self_check_tol > 0 && !out.empty()) {
        const auto fine = detail::run_split_step(psi0, lattice, vg, v, {times.back()}, dt / 2, params.boundary_threshold);
        double diff = 0;
        for (std::size_t i = 0; i < fine[0].values.size(); ++i)
            diff += std::norm(fine[0].values[i] - out.back().values[i]);
        diff = std::sqrt(diff * psi0.grid.cell()) / std::max(1e-300, psi0.norm());
        require(diff <= params.self_check_tol, ErrorKind::resolution,
                "dt self-convergence check failed (relative change " + std::to_string(diff) + " under halving)");
    }
    return out;
}

inline double l2_error(const GridWaveField& a, const GridWaveField& b) {
    require(a.grid == b.grid && a.values.size() == b.values.size(), ErrorKind::grid_mismatch,
            "wave fields live on different grids");
    require(a.epsilon == b.epsilon && std::abs(a.time - b.time) <= 1e-12 * std::max(1.0, std::abs(a.time)),
            ErrorKind::grid_mismatch, "wave fields differ in epsilon or time");
    double s = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::norm(a.values[i] - b.values[i]);
    return std::sqrt(s * a.grid.cell());
}

/// |(i eps d_t + eps^2/2 Delta - V_Gamma(x/eps) - V) psi(t)|_{L^2} from snapshots at
/// t - delta, t, t + delta. The time derivative is taken of e^{i omega t} psi, which
/// removes the fast carrier e^{-i omega t} from the difference quotient.
inline double pde_residual(const GridWaveField& before, const GridWaveField& now, const GridWaveField& after,
                           const LatticeSpec& lattice, const FourierPotential& vg, const ExternalPotential& v,
                           double omega = 0.0) {
    const double eps = now.epsilon;
    const double delta = 0.5 * (after.time - before.time);
    require(before.grid == now.grid && after.grid == now.grid, ErrorKind::grid_mismatch,
            "residual snapshots live on different grids");
    require(before.epsilon == eps && after.epsilon == eps, ErrorKind::grid_mismatch, "snapshots differ in epsilon");
    require(delta > 0 && std::abs((now.time - before.time) - delta) <= 1e-9 * delta &&
                std::abs((after.time - now.time) - delta) <= 1e-9 * delta,
            ErrorKind::invalid_argument, "snapshots must be equally spaced around t");
    require(delta <= eps / 10 * (1 + 1e-12), ErrorKind::resolution,
            "time offset does not resolve the e^{i phi/eps} oscillation (need delta <= eps/10)");
    const PeriodicGrid& g = now.grid;
    std::vector<int> order(static_cast<std::size_t>(g.dim), 0);
    std::vector<cplx> lap(g.size(), cplx{});
    FourierTransform fft(g.shape());
    for (int j = 0; j < g.dim; ++j) {
        order.assign(static_cast<std::size_t>(g.dim), 0);
        order[static_cast<std::size_t>(j)] = 2;
        const auto d2 = spectral_derivative(g, now.values, order, &fft);
        for (std::size_t i = 0; i < lap.size(); ++i) lap[i] += d2[i];
    }
    const cplx ep = std::exp(I * (omega * delta)), em = std::exp(-I * (omega * delta));
    double s = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec x = g.point(i);
        const cplx dt = (ep * after.values[i] - em * before.values[i]) / (2 * delta);
        const cplx r = I * eps * dt + eps * omega * now.values[i] + 0.5 * eps * eps * lap[i] -
                       (vg(lattice, x / eps) + v.value(x)) * now.values[i];
        s += std::norm(r);
    }
    return std::sqrt(s * g.cell());
}

} // namespace blochwp
