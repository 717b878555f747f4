#pragma once

#include "../reference.hpp"

namespace blochwp {

/// Inputs of one semiclassical packet experiment.
struct PacketSetup {
    LatticeSpec lattice = LatticeSpec::cubic(1);
    FourierPotential lattice_potential = FourierPotential::cosine(1.0);
    std::shared_ptr<const ExternalPotential> potential = QuadraticPotential::harmonic(1);
    int band = 1;
    int cutoff = 12;
    bool free_band = false; ///< use the closed-form free dispersion (requires zero lattice potential)
    Vec q0 = Vec::Zero(1);
    Vec p0 = Vec::Constant(1, 0.3);
    CMat A = CMat::Identity(1, 1);
    CMat B = CMat::Identity(1, 1);
    std::vector<cplx> sampled_envelope; ///< if nonempty: initial envelope on `envelope_grid` (grid route)
    double horizon = 1.0;  ///< trajectory and coefficients are built on [0, horizon]
    double flow_dt = 1e-3;
    double envelope_dt = 1e-3;
    PeriodicGrid envelope_grid{1, 16.0, 512};
};

/// Trajectory, envelope coefficients and Bloch data of one packet, with
/// synthesis of phi^eps and psi_app on physical grids.
class PacketModel {
public:
    explicit PacketModel(PacketSetup setup) : setup_(std::move(setup)) {
        if (setup_.free_band) {
            require(setup_.lattice_potential.coeffs().empty(), ErrorKind::invalid_argument,
                    "free-band model needs a zero lattice potential");
            band_ = std::make_shared<FreeBand>(setup_.lattice, std::max(1, setup_.cutoff));
        } else {
            band_ = std::make_shared<BandModel>(BandModel::anchored_at(setup_.lattice, setup_.lattice_potential,
                                                                       setup_.band, setup_.cutoff, setup_.p0));
        }
        traj_ = std::make_shared<Trajectory>(
            integrate_flow(setup_.q0, setup_.p0, setup_.horizon, setup_.flow_dt, *band_, *setup_.potential));
        coeffs_ = std::make_shared<HomogenizedCoefficients>(coefficients_along(*traj_, *band_, *setup_.potential));
        if (setup_.sampled_envelope.empty()) {
            env0_.gauss = gaussian_init(setup_.A, setup_.B);
        } else {
            require(setup_.sampled_envelope.size() == setup_.envelope_grid.size(), ErrorKind::grid_mismatch,
                    "sampled envelope does not match the envelope grid");
            env0_.grid = GridEnvelope{setup_.envelope_grid, 0.0, setup_.sampled_envelope};
        }
    }

    /// Envelope at one time, carried either in closed Gaussian form or on the grid.
    struct Envelope {
        std::optional<GaussianEnvelope> gauss;
        std::optional<GridEnvelope> grid;

        double t() const { return gauss ? gauss->t : grid->t; }
        GridEnvelope sampled(const PeriodicGrid& g) const { return gauss ? sample_envelope(g, *gauss) : *grid; }
    };

    const PacketSetup& setup() const { return setup_; }
    const BandProvider& band() const { return *band_; }
    const Trajectory& trajectory() const { return *traj_; }
    const HomogenizedCoefficients& coefficients() const { return *coeffs_; }
    const Envelope& initial_envelope() const { return env0_; }

    Envelope envelope_at(double t) const {
        Envelope e;
        if (env0_.gauss) e.gauss = evolve_gaussian(*env0_.gauss, *coeffs_, 0.0, t, setup_.envelope_dt);
        else e.grid = evolve_grid_envelope(*env0_.grid, *coeffs_, 0.0, t, setup_.envelope_dt);
        return e;
    }

    /// Envelope at t + s obtained by one further step of size s (used for
    /// difference quotients in time, where a smooth dependence on s matters).
    Envelope envelope_near(const Envelope& at_t, double s) const {
        if (s == 0.0) return at_t;
        Envelope e;
        if (at_t.gauss) e.gauss = evolve_gaussian(*at_t.gauss, *coeffs_, at_t.t(), at_t.t() + s, std::abs(s));
        else e.grid = evolve_grid_envelope(*at_t.grid, *coeffs_, at_t.t(), at_t.t() + s, std::abs(s));
        return e;
    }

    CorrectorContext context(double t) const { return corrector_context(*traj_, t, *band_, *setup_.potential); }

    /// Semiclassical wave packet phi^eps at time t.
    GridWaveField phi(double t, double epsilon, const PeriodicGrid& grid) const {
        return phi(envelope_at(t), epsilon, grid);
    }

    GridWaveField phi(const Envelope& env, double epsilon, const PeriodicGrid& grid) const {
        const auto s = traj_->at(env.t());
        const auto point = band_->at(s.p);
        if (env.gauss) return synthesize_packet(*env.gauss, s, point->pair, epsilon, grid);
        return synthesize_packet(*env.grid, s, point->pair, epsilon, grid);
    }

    /// psi_app at time t; `correctors` false gives the U0-only ablation.
    GridWaveField app(const Envelope& env, double epsilon, const PeriodicGrid& grid, bool correctors = true) const {
        const auto ctx = context(env.t());
        const GridEnvelope u = env.sampled(setup_.envelope_grid);
        const auto U0 = build_U0(u, ctx);
        const auto s = traj_->at(env.t());
        if (!correctors) return synthesize_app(U0, nullptr, nullptr, s, epsilon, grid);
        const auto U1 = build_U1(u, ctx);
        const auto U2 = build_U2(u, ctx);
        return synthesize_app(U0, &U1, &U2, s, epsilon, grid);
    }

    GridWaveField app(double t, double epsilon, const PeriodicGrid& grid, bool correctors = true) const {
        return app(envelope_at(t), epsilon, grid, correctors);
    }

    /// Carrier frequency (E(p) + V(q)) / eps of the packet at time t.
    double carrier(double t, double epsilon) const {
        const auto s = traj_->at(t);
        return (band_->energy(s.p) + setup_.potential->value(s.q)) / epsilon;
    }

private:
    PacketSetup setup_;
    std::shared_ptr<BandProvider> band_;
    std::shared_ptr<Trajectory> traj_;
    std::shared_ptr<HomogenizedCoefficients> coeffs_;
    Envelope env0_;
};

/// Physical box [-pi, pi] sized for epsilon with `per_period` samples per lattice cell.
inline PeriodicGrid physical_grid(const LatticeSpec& lattice, double epsilon, int per_period = 32,
                                  double half_width = pi) {
    return PeriodicGrid{1, half_width, fine_grid_points(lattice, half_width, epsilon, per_period)};
}

} // namespace blochwp
