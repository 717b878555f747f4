#pragma once

#include "bands.hpp"
#include "potential.hpp"

#include <cmath>

namespace blochwp {

/// Point on the semiclassical trajectory. `p` is the unfolded crystal momentum
/// (continuous in time, used in the phase); `p_folded` = p - G_winding lies in Y*.
struct TrajectoryState {
    double t = 0;
    Vec q;
    Vec p;
    Vec p_folded;
    MultiIndex winding;
    double S = 0;     ///< action
    double theta = 0; ///< -i * integral of the Berry term (real)
};

struct FlowRates {
    Vec dq;
    Vec dp;
    double dS = 0;
    double dtheta = 0;
};

/// Peierls flow: q' = grad E(p), p' = -grad V(q), with the Lagrangian and the
/// Berry term integrated alongside.
inline FlowRates flow_rhs(const Vec& q, const Vec& p, const BandProvider& band, const ExternalPotential& v) {
    const auto bp = band.at(p);
    const Vec gv = v.gradient(q);
    FlowRates r;
    r.dq = bp->grad_E;
    r.dp = -gv;
    r.dS = p.dot(bp->grad_E) - bp->energy - v.value(q);
    // beta = <chi, grad_k chi> . grad V is imaginary; theta' = -i beta
    const cplx beta = bp->berry.transpose() * gv.cast<cplx>();
    r.dtheta = (-I * beta).real();
    return r;
}

inline FlowRates flow_rhs(const TrajectoryState& s, const BandProvider& band, const ExternalPotential& v) {
    return flow_rhs(s.q, s.p, band, v);
}

struct FlowOptions {
    double q_bound = 1e6;  ///< blow-up guard on |q|
    double min_gap = 0.0;  ///< extra gap requirement on top of the simple-band check
};

/// Dense trajectory on a uniform grid with cubic Hermite interpolation.
class Trajectory {
public:
    Trajectory(LatticeSpec lattice, std::vector<TrajectoryState> states, std::vector<FlowRates> rates)
        : lattice_(std::move(lattice)), states_(std::move(states)), rates_(std::move(rates)) {
        require(!states_.empty() && states_.size() == rates_.size(), ErrorKind::invalid_argument,
                "trajectory needs matching states and rates");
    }

    const std::vector<TrajectoryState>& states() const { return states_; }
    const std::vector<FlowRates>& rates() const { return rates_; }
    std::size_t size() const { return states_.size(); }
    const TrajectoryState& node(std::size_t i) const { return states_[i]; }
    double t_begin() const { return states_.front().t; }
    double t_end() const { return states_.back().t; }
    double t_min() const { return std::min(t_begin(), t_end()); }
    double t_max() const { return std::max(t_begin(), t_end()); }
    int dim() const { return static_cast<int>(states_.front().q.size()); }
    const LatticeSpec& lattice() const { return lattice_; }

    bool contains(double t) const {
        const double slack = 1e-12 * std::max(1.0, std::abs(t_max()));
        return t >= t_min() - slack && t <= t_max() + slack;
    }

    TrajectoryState at(double t) const {
        require(std::isfinite(t) && contains(t), ErrorKind::out_of_range,
                "time " + std::to_string(t) + " outside the trajectory range");
        if (states_.size() == 1) return states_.front();
        const double h = states_[1].t - states_[0].t;
        double s = (t - t_begin()) / h;
        auto i = static_cast<std::size_t>(std::clamp(std::floor(s), 0.0, static_cast<double>(states_.size() - 2)));
        s -= static_cast<double>(i);
        if (s <= 0.0) return states_[i];
        if (s >= 1.0) return states_[i + 1];
        const auto& a = states_[i];
        const auto& b = states_[i + 1];
        const auto& ra = rates_[i];
        const auto& rb = rates_[i + 1];
        const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
        const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
        TrajectoryState out;
        out.t = t;
        out.q = h00 * a.q + h10 * h * ra.dq + h01 * b.q + h11 * h * rb.dq;
        out.p = h00 * a.p + h10 * h * ra.dp + h01 * b.p + h11 * h * rb.dp;
        out.S = h00 * a.S + h10 * h * ra.dS + h01 * b.S + h11 * h * rb.dS;
        out.theta = h00 * a.theta + h10 * h * ra.dtheta + h01 * b.theta + h11 * h * rb.dtheta;
        auto f = lattice_.fold(out.p);
        out.p_folded = f.k;
        out.winding = f.winding;
        return out;
    }

    /// Time derivative of the interpolant (exact at nodes).
    FlowRates rates_at(double t) const {
        require(contains(t), ErrorKind::out_of_range, "time outside the trajectory range");
        if (states_.size() == 1) return rates_.front();
        const double h = states_[1].t - states_[0].t;
        double s = (t - t_begin()) / h;
        auto i = static_cast<std::size_t>(std::clamp(std::floor(s), 0.0, static_cast<double>(states_.size() - 2)));
        s -= static_cast<double>(i);
        if (s <= 0.0) return rates_[i];
        if (s >= 1.0) return rates_[i + 1];
        const auto& a = states_[i];
        const auto& b = states_[i + 1];
        const auto& ra = rates_[i];
        const auto& rb = rates_[i + 1];
        const double d00 = 6 * s * s - 6 * s, d10 = 3 * s * s - 4 * s + 1;
        const double d01 = -6 * s * s + 6 * s, d11 = 3 * s * s - 2 * s;
        FlowRates out;
        out.dq = (d00 * a.q + d01 * b.q) / h + d10 * ra.dq + d11 * rb.dq;
        out.dp = (d00 * a.p + d01 * b.p) / h + d10 * ra.dp + d11 * rb.dp;
        out.dS = (d00 * a.S + d01 * b.S) / h + d10 * ra.dS + d11 * rb.dS;
        out.dtheta = (d00 * a.theta + d01 * b.theta) / h + d10 * ra.dtheta + d11 * rb.dtheta;
        return out;
    }

private:
    LatticeSpec lattice_;
    std::vector<TrajectoryState> states_;
    std::vector<FlowRates> rates_;
};

/// Classical RK4 with fixed step |dt| from t = 0 to t = T (T may be negative).
inline Trajectory integrate_flow(const Vec& q0, const Vec& p0, double T, double dt, const BandProvider& band,
                                 const ExternalPotential& v, const FlowOptions& opt = {}) {
    const int d = band.dim();
    require(q0.size() == d && p0.size() == d && v.dim() == d, ErrorKind::invalid_argument,
            "initial data, band and potential dimensions differ");
    require(q0.allFinite() && p0.allFinite() && std::isfinite(T), ErrorKind::invalid_argument,
            "non-finite initial data or horizon");
    require(dt > 0 && std::isfinite(dt), ErrorKind::invalid_argument, "time step must be positive");
    const auto steps = static_cast<std::size_t>(std::max(0.0, std::ceil(std::abs(T) / dt - 1e-9)));
    const double h = steps == 0 ? 0.0 : T / static_cast<double>(steps);

    const int n = 2 * d + 2;
    auto pack = [&](const TrajectoryState& s) {
        Vec y(n);
        y << s.q, s.p, s.S, s.theta;
        return y;
    };
    auto rhs = [&](double t, const Vec& y) -> Vec {
        FlowRates r;
        try {
            r = flow_rhs(y.head(d), y.segment(d, d), band, v);
            if (opt.min_gap > 0 && band.at(y.segment(d, d))->gap < opt.min_gap)
                fail(ErrorKind::gap_violation, "gap below threshold");
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::degenerate_band || e.kind() == ErrorKind::gap_violation)
                fail(ErrorKind::gap_violation, "band gap violated at t = " + std::to_string(t) + ": " + e.what());
            throw;
        }
        Vec out(n);
        out << r.dq, r.dp, r.dS, r.dtheta;
        return out;
    };
    auto unpack_rates = [&](const Vec& f) {
        FlowRates r;
        r.dq = f.head(d);
        r.dp = f.segment(d, d);
        r.dS = f[2 * d];
        r.dtheta = f[2 * d + 1];
        return r;
    };
    auto make_state = [&](double t, const Vec& y) {
        TrajectoryState s;
        s.t = t;
        s.q = y.head(d);
        s.p = y.segment(d, d);
        s.S = y[2 * d];
        s.theta = y[2 * d + 1];
        auto f = band.lattice().fold(s.p);
        s.p_folded = f.k;
        s.winding = f.winding;
        return s;
    };

    std::vector<TrajectoryState> states;
    std::vector<FlowRates> rates;
    states.reserve(steps + 1);
    rates.reserve(steps + 1);
    TrajectoryState init;
    init.q = q0;
    init.p = p0;
    Vec y = pack(init);
    Vec k1 = rhs(0.0, y);
    states.push_back(make_state(0.0, y));
    rates.push_back(unpack_rates(k1));
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = h * static_cast<double>(i);
        const Vec k2 = rhs(t + h / 2, y + h / 2 * k1);
        const Vec k3 = rhs(t + h / 2, y + h / 2 * k2);
        const Vec k4 = rhs(t + h, y + h * k3);
        y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        const double tn = h * static_cast<double>(i + 1);
        if (!y.allFinite() || y.head(d).norm() > opt.q_bound)
            fail(ErrorKind::blow_up, "trajectory left the configured region at t = " + std::to_string(tn));
        k1 = rhs(tn, y);
        states.push_back(make_state(tn, y));
        rates.push_back(unpack_rates(k1));
    }
    return Trajectory(band.lattice(), std::move(states), std::move(rates));
}

/// phi(t, x) = S(t) + <p(t), x - q(t)> with the unfolded momentum.
inline double phase_at(const Trajectory& traj, double t, const Vec& x) {
    const auto s = traj.at(t);
    require(x.size() == s.q.size(), ErrorKind::invalid_argument, "phase point has wrong dimension");
    return s.S + s.p.dot(x - s.q);
}

/// Largest |E(p(t)) + V(q(t)) - E(p0) - V(q0)| over the trajectory nodes.
inline double energy_drift(const Trajectory& traj, const BandProvider& band, const ExternalPotential& v) {
    const auto& s0 = traj.node(0);
    const double e0 = band.energy(s0.p) + v.value(s0.q);
    double worst = 0;
    for (const auto& s : traj.states()) worst = std::max(worst, std::abs(band.energy(s.p) + v.value(s.q) - e0));
    return worst;
}

} // namespace blochwp
