#pragma once

#include "corrector.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <filesystem>
#include <fstream>

namespace blochwp {

/// Complex samples of a wave function on the physical periodic box at one time.
struct GridWaveField {
    double epsilon = 0;
    double time = 0;
    PeriodicGrid grid;
    std::vector<cplx> values;

    double norm() const { return l2_norm(grid, values); }
};

/// Smallest even N such that the box holds `per_period` samples per epsilon-scaled
/// lattice period, rounded up to a power of two.
inline int fine_grid_points(const LatticeSpec& lattice, double half_width, double epsilon, int per_period = 16) {
    require(lattice.dim() == 1, ErrorKind::unsupported_dimension, "physical-grid synthesis is one-dimensional");
    require(epsilon > 0 && epsilon < 1, ErrorKind::invalid_argument, "epsilon must lie in (0, 1)");
    const double period = epsilon * lattice.basis()(0, 0);
    const double needed = 2.0 * half_width / period * per_period;
    int n = 4;
    while (n < needed) n *= 2;
    return n;
}

/// Resolution invariant of a physical grid for a given epsilon.
inline void check_resolution(const PeriodicGrid& grid, const LatticeSpec& lattice, double epsilon,
                             int per_period = 16) {
    grid.validate();
    require(grid.dim == lattice.dim(), ErrorKind::invalid_argument, "grid and lattice dimensions differ");
    const double h = grid.spacing();
    double period = std::numeric_limits<double>::infinity();
    for (int j = 0; j < lattice.dim(); ++j) period = std::min(period, epsilon * lattice.basis().col(j).norm());
    require(period / h >= per_period - 1e-9, ErrorKind::resolution,
            "grid has " + std::to_string(period / h) + " points per epsilon-period, need " +
                std::to_string(per_period));
    require(std::sqrt(epsilon) / h >= 4.0, ErrorKind::resolution, "grid does not resolve the sqrt(epsilon) scale");
}

namespace detail {

struct SynthesisFrame {
    std::vector<std::size_t> active; ///< grid indices with |z| <= L_z
    std::vector<double> z;
    std::vector<Vec> y;
    std::vector<cplx> carrier;       ///< eps^{-d/4} e^{i phi / eps}
};

inline SynthesisFrame synthesis_frame(const PeriodicGrid& grid, const TrajectoryState& s, double epsilon,
                                      double z_half_width) {
    require(grid.dim == 1 && s.q.size() == 1, ErrorKind::unsupported_dimension,
            "physical-grid synthesis is one-dimensional");
    SynthesisFrame f;
    const double se = std::sqrt(epsilon);
    const double amp = std::pow(epsilon, -0.25);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double x = grid.coordinate(static_cast<int>(i));
        const double z = (x - s.q[0]) / se;
        if (std::abs(z) > z_half_width) continue;
        f.active.push_back(i);
        f.z.push_back(z);
        f.y.push_back(Vec::Constant(1, x / epsilon));
        const double phi = s.S + s.p[0] * (x - s.q[0]);
        f.carrier.push_back(amp * std::exp(I * (phi / epsilon)));
    }
    return f;
}

/// Fraction of |u|^2 outside the z-interval covered by the physical box.
inline double outside_fraction(const GridEnvelope& u, double z_lo, double z_hi) {
    double total = 0, outside = 0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        const double z = u.grid.coordinate(static_cast<int>(i));
        const double w = std::norm(u.values[i]);
        total += w;
        if (z < z_lo || z > z_hi) outside += w;
    }
    return total > 0 ? outside / total : 0.0;
}

inline void check_support(double fraction) {
    require(fraction <= 1e-12, ErrorKind::boundary_mass,
            "envelope support exceeds the physical box (outside mass fraction " + std::to_string(fraction) + ")");
}

inline std::pair<double, double> box_in_z(const PeriodicGrid& grid, const TrajectoryState& s, double epsilon) {
    const double se = std::sqrt(epsilon);
    return {(-grid.half_width - s.q[0]) / se, (grid.half_width - s.q[0]) / se};
}

} // namespace detail

/// phi^eps(t, x) = eps^{-1/4} u((x - q)/sqrt(eps)) chi(x/eps, p) e^{i phi(t,x)/eps}
/// with a grid envelope (Fourier interpolation; zero outside its box).
inline GridWaveField synthesize_packet(const GridEnvelope& u, const TrajectoryState& s, const BlochEigenpair& pair,
                                       double epsilon, const PeriodicGrid& grid) {
    const auto [lo, hi] = detail::box_in_z(grid, s, epsilon);
    detail::check_support(detail::outside_fraction(u, lo, hi));
    const auto frame = detail::synthesis_frame(grid, s, epsilon, u.grid.half_width);
    const FourierInterpolant1D interp(u.grid, u.values);
    const auto chi = evaluate_bloch(pair, frame.y);
    GridWaveField out{epsilon, s.t, grid, std::vector<cplx>(grid.size(), cplx{})};
    for (std::size_t a = 0; a < frame.active.size(); ++a)
        out.values[frame.active[a]] = frame.carrier[a] * interp(frame.z[a]) * chi[a];
    return out;
}

/// Same with the closed-form Gaussian envelope.
inline GridWaveField synthesize_packet(const GaussianEnvelope& env, const TrajectoryState& s,
                                       const BlochEigenpair& pair, double epsilon, const PeriodicGrid& grid) {
    require(env.dim() == 1, ErrorKind::unsupported_dimension, "physical-grid synthesis is one-dimensional");
    const auto [lo, hi] = detail::box_in_z(grid, s, epsilon);
    // |u|^2 ~ exp(-Re(BA^{-1}) z^2)
    const double a = std::sqrt(env.width()(0, 0).real());
    detail::check_support(0.5 * std::erfc(a * hi) + 0.5 * std::erfc(-a * lo));
    const auto frame = detail::synthesis_frame(grid, s, epsilon, std::numeric_limits<double>::infinity());
    const auto chi = evaluate_bloch(pair, frame.y);
    const CMat w = env.width();
    GridWaveField out{epsilon, s.t, grid, std::vector<cplx>(grid.size(), cplx{})};
    for (std::size_t k = 0; k < frame.active.size(); ++k)
        out.values[frame.active[k]] =
            frame.carrier[k] * gaussian_eval(env, w, Vec::Constant(1, frame.z[k])) * chi[k];
    return out;
}

/// psi_app = eps^{-1/4} (U0 + sqrt(eps) U1 + eps U2)((x - q)/sqrt(eps), x/eps) e^{i phi/eps}.
/// Null fields are skipped, which gives the ablated ansatz.
inline GridWaveField synthesize_app(const CorrectorField& U0, const CorrectorField* U1, const CorrectorField* U2,
                                    const TrajectoryState& s, double epsilon, const PeriodicGrid& grid) {
    const PeriodicGrid& zg = U0.grid;
    const auto frame = detail::synthesis_frame(grid, s, epsilon, zg.half_width);
    {
        const auto [lo, hi] = detail::box_in_z(grid, s, epsilon);
        GridEnvelope probe{zg, U0.t, U0.terms.empty() ? std::vector<cplx>(zg.size()) : U0.terms.front().z};
        detail::check_support(detail::outside_fraction(probe, lo, hi));
    }
    std::vector<cplx> acc(frame.active.size(), cplx{});
    auto add = [&](const CorrectorField& f, double weight) {
        require(f.grid == zg, ErrorKind::grid_mismatch, "corrector fields use different envelope grids");
        for (const auto& term : f.terms) {
            const FourierInterpolant1D interp(zg, term.z);
            const auto g = evaluate_plane_waves(*f.basis, term.y, f.shift, frame.y);
            for (std::size_t a = 0; a < acc.size(); ++a) acc[a] += weight * interp(frame.z[a]) * g[a];
        }
    };
    add(U0, 1.0);
    if (U1) add(*U1, std::sqrt(epsilon));
    if (U2) add(*U2, epsilon);
    GridWaveField out{epsilon, s.t, grid, std::vector<cplx>(grid.size(), cplx{})};
    for (std::size_t a = 0; a < acc.size(); ++a) out.values[frame.active[a]] = frame.carrier[a] * acc[a];
    return out;
}

inline GridWaveField superpose(const std::vector<GridWaveField>& packets) {
    require(!packets.empty(), ErrorKind::invalid_argument, "superposition of no packets");
    GridWaveField out = packets.front();
    for (std::size_t k = 1; k < packets.size(); ++k) {
        const auto& p = packets[k];
        require(p.grid == out.grid && p.epsilon == out.epsilon && p.time == out.time, ErrorKind::grid_mismatch,
                "superposed packets must share grid, epsilon and time");
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += p.values[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Raw array + JSON sidecar export

inline nlohmann::json wavefield_sidecar(const GridWaveField& f) {
    nlohmann::json box = nlohmann::json::array();
    for (int j = 0; j < f.grid.dim; ++j) box.push_back({-f.grid.half_width, f.grid.half_width});
    return {{"dimension", f.grid.dim},
            {"epsilon", f.epsilon},
            {"time", f.time},
            {"box", box},
            {"shape", f.grid.shape()},
            {"byte_order", "little-endian"},
            {"dtype", "float64"},
            {"layout", "interleaved-complex"}};
}

/// Writes <base>.bin and <base>.json.
inline void write_wavefield(const std::filesystem::path& base, const GridWaveField& f) {
    static_assert(std::endian::native == std::endian::little, "raw export assumes a little-endian host");
    std::filesystem::path bin = base, meta = base;
    bin += ".bin";
    meta += ".json";
    std::ofstream out(bin, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot open " + bin.string());
    out.write(reinterpret_cast<const char*>(f.values.data()),
              static_cast<std::streamsize>(f.values.size() * sizeof(cplx)));
    require(static_cast<bool>(out), ErrorKind::io, "failed writing " + bin.string());
    std::ofstream js(meta);
    require(static_cast<bool>(js), ErrorKind::io, "cannot open " + meta.string());
    js << wavefield_sidecar(f).dump(2) << '\n';
}

inline GridWaveField read_wavefield(const std::filesystem::path& base) {
    std::filesystem::path bin = base, meta = base;
    bin += ".bin";
    meta += ".json";
    std::ifstream js(meta);
    require(static_cast<bool>(js), ErrorKind::io, "cannot open " + meta.string());
    nlohmann::json j;
    try {
        js >> j;
    } catch (const std::exception& e) {
        fail(ErrorKind::io, std::string("malformed sidecar: ") + e.what());
    }
    require(j.value("layout", "") == "interleaved-complex" && j.value("byte_order", "") == "little-endian",
            ErrorKind::io, "unsupported wave-field layout");
    GridWaveField f;
    f.epsilon = j.at("epsilon").get<double>();
    f.time = j.at("time").get<double>();
    f.grid.dim = j.at("dimension").get<int>();
    const auto shape = j.at("shape").get<std::vector<int>>();
    require(static_cast<int>(shape.size()) == f.grid.dim && !shape.empty(), ErrorKind::io, "sidecar shape mismatch");
    f.grid.points = shape.front();
    f.grid.half_width = j.at("box").at(0).at(1).get<double>();
    f.values.resize(f.grid.size());
    std::ifstream in(bin, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + bin.string());
    in.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(cplx)));
    require(in.gcount() == static_cast<std::streamsize>(f.values.size() * sizeof(cplx)), ErrorKind::io,
            "raw array shorter than the sidecar shape");
    return f;
}

} // namespace blochwp
