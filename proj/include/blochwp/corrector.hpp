#pragma once

#include "envelope.hpp"

namespace blochwp {

/// f(z) g(y) with f sampled on the envelope grid and g in the plane-wave basis.
struct SeparableTerm {
    std::vector<cplx> z;
    CVec y;
};

/// Finite sum of separable terms sharing one envelope grid and one Bloch frame.
struct CorrectorField {
    int order = 0;
    double t = 0;
    PeriodicGrid grid;
    std::shared_ptr<const PlaneWaveBasis> basis;
    MultiIndex shift;
    std::vector<SeparableTerm> terms;

    /// Samples F(z_i, .) as rows of plane-wave coefficients.
    CMat dense() const {
        CMat out = CMat::Zero(static_cast<Eigen::Index>(grid.size()), basis ? basis->size() : 0);
        for (const auto& term : terms) {
            const Eigen::Map<const CVec> f(term.z.data(), static_cast<Eigen::Index>(term.z.size()));
            out.noalias() += f * term.y.transpose();
        }
        return out;
    }

    /// L^2(dz x dy) norm; the sum is formed pointwise so cancellations between
    /// terms are resolved to rounding level.
    double norm() const {
        if (terms.empty()) return 0.0;
        return std::sqrt(grid.cell() * basis->lattice().cell_volume()) * dense().norm();
    }

    /// <chi, F(z, .)>_{L^2(Y)} at every grid point.
    std::vector<cplx> project_on(const CVec& chi) const {
        std::vector<cplx> out(grid.size(), cplx{});
        for (const auto& term : terms) {
            const cplx c = basis->inner(chi, term.y);
            if (c == 0.0) continue;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * term.z[i];
        }
        return out;
    }

    /// max_z |<chi, F(z, .)>|.
    double orthogonality_defect(const CVec& chi) const {
        double worst = 0;
        for (const cplx& v : project_on(chi)) worst = std::max(worst, std::abs(v));
        return worst;
    }

    CorrectorField scaled(cplx a) const {
        CorrectorField out = *this;
        for (auto& term : out.terms)
            for (auto& v : term.z) v *= a;
        return out;
    }

    /// Concatenation of terms (field sum).
    CorrectorField& operator+=(const CorrectorField& other) {
        require(grid == other.grid && basis == other.basis && shift == other.shift, ErrorKind::grid_mismatch,
                "corrector fields live on different grids or Bloch frames");
        terms.insert(terms.end(), other.terms.begin(), other.terms.end());
        return *this;
    }
};

/// Band data, Hamiltonian and flow quantities needed by the correctors at one time.
struct CorrectorContext {
    double t = 0;
    Vec q;
    Vec p;
    Vec pdot;
    Mat Q;
    cplx beta{};
    std::shared_ptr<const BandPoint> point;
    std::shared_ptr<const PlaneWaveBasis> basis;
    CMat h;

    int dim() const { return static_cast<int>(q.size()); }
    const CVec& chi() const { return point->pair.coeffs; }
    const MultiIndex& shift() const { return point->pair.shift; }
    /// (d_l H - d_l E) as a diagonal in the plane-wave basis.
    CVec velocity_offset(int l) const {
        CVec v = basis->velocity_diagonal(point->k_folded, l).cast<cplx>();
        return v.array() - point->grad_E[l];
    }
};

inline CorrectorContext corrector_context(const Trajectory& traj, double t, const BandProvider& band,
                                          const ExternalPotential& v) {
    const auto s = traj.at(t);
    CorrectorContext ctx;
    ctx.t = t;
    ctx.q = s.q;
    ctx.p = s.p;
    ctx.pdot = -v.gradient(s.q);
    ctx.Q = v.hessian(s.q);
    ctx.point = band.at(s.p);
    ctx.beta = ctx.point->berry.transpose() * v.gradient(s.q).cast<cplx>();
    ctx.basis = band.basis_ptr();
    ctx.h = band.hamiltonian(*ctx.point);
    return ctx;
}

namespace detail {
inline std::vector<int> unit_order(int d, int j, int l = -1) {
    std::vector<int> o(static_cast<std::size_t>(d), 0);
    o[static_cast<std::size_t>(j)] += 1;
    if (l >= 0) o[static_cast<std::size_t>(l)] += 1;
    return o;
}

inline CorrectorField empty_field(int order, const GridEnvelope& u, const CorrectorContext& ctx) {
    CorrectorField f;
    f.order = order;
    f.t = u.t;
    f.grid = u.grid;
    f.basis = ctx.basis;
    f.shift = ctx.shift();
    return f;
}
} // namespace detail

/// U0 = u(z) chi(y, p).
inline CorrectorField build_U0(const GridEnvelope& u, const CorrectorContext& ctx) {
    CorrectorField f = detail::empty_field(0, u, ctx);
    f.terms.push_back({u.values, ctx.chi()});
    return f;
}

/// U1 = -i sum_j d_{z_j} u (x) P_perp d_{k_j} chi.
inline CorrectorField build_U1(const GridEnvelope& u, const CorrectorContext& ctx) {
    CorrectorField f = detail::empty_field(1, u, ctx);
    const int d = ctx.dim();
    require(u.grid.dim == d, ErrorKind::invalid_argument, "envelope and band dimensions differ");
    FourierTransform fft(u.grid.shape());
    for (int j = 0; j < d; ++j) {
        const CVec& x = ctx.point->dk_chi_perp[static_cast<std::size_t>(j)];
        if (x.norm() == 0.0) continue;
        auto dz = spectral_derivative(u.grid, u.values, detail::unit_order(d, j), &fft);
        for (auto& v : dz) v *= -I;
        f.terms.push_back({std::move(dz), x});
    }
    return f;
}

/// U2 = (H - E)^{-1} P_perp (L1 U1 + L2 U0) on the complement of chi:
/// sum_{j<=l} d_{jl} u (x) R[(sym) (d_l H - d_l E) x_j] + u (x) R[i pdot . x].
inline CorrectorField build_U2(const GridEnvelope& u, const CorrectorContext& ctx) {
    CorrectorField f = detail::empty_field(2, u, ctx);
    const int d = ctx.dim();
    require(u.grid.dim == d, ErrorKind::invalid_argument, "envelope and band dimensions differ");
    ReducedResolvent r(ctx.h, ctx.point->energy, ctx.chi());
    const auto& x = ctx.point->dk_chi_perp;
    auto solve = [&](const CVec& rhs) {
        try {
            return r.solve(rhs);
        } catch (const Error& e) {
            fail(ErrorKind::degenerate_band, std::string("reduced resolvent failed: ") + e.what());
        }
    };
    FourierTransform fft(u.grid.shape());
    for (int j = 0; j < d; ++j) {
        for (int l = j; l < d; ++l) {
            CVec rhs = (ctx.velocity_offset(l).array() * x[static_cast<std::size_t>(j)].array()).matrix();
            if (l != j) rhs += (ctx.velocity_offset(j).array() * x[static_cast<std::size_t>(l)].array()).matrix();
            CVec w = solve(rhs);
            if (w.norm() == 0.0) continue;
            f.terms.push_back({spectral_derivative(u.grid, u.values, detail::unit_order(d, j, l), &fft), std::move(w)});
        }
    }
    CVec drive = CVec::Zero(ctx.chi().size());
    for (int j = 0; j < d; ++j) drive += I * ctx.pdot[j] * x[static_cast<std::size_t>(j)];
    CVec w = solve(drive);
    if (w.norm() != 0.0) f.terms.push_back({u.values, std::move(w)});
    return f;
}

struct SolvabilityDefects {
    double defect1 = 0; ///< |<chi, L1 U0>|_{L^2(dz)}
    double defect2 = 0; ///< |<chi, L1 U1 + L2 U0>|_{L^2(dz)}
};

/// Projections of the second and third equations of the cascade onto chi.
/// `u_t` is the time derivative of u at ctx.t, sampled on the same grid.
inline SolvabilityDefects solvability_defect(const GridEnvelope& u, const std::vector<cplx>& u_t,
                                             const CorrectorContext& ctx) {
    const PeriodicGrid& g = u.grid;
    const int d = ctx.dim();
    require(g.dim == d && u_t.size() == g.size(), ErrorKind::grid_mismatch, "envelope data do not match");
    const CVec& chi = ctx.chi();
    const auto& x = ctx.point->dk_chi_perp;
    const PlaneWaveBasis& b = *ctx.basis;
    FourierTransform fft(g.shape());

    // <chi, L1 U0> = i sum_l d_l u <chi, (d_l H - d_l E) chi>
    std::vector<cplx> p1(g.size(), cplx{});
    for (int l = 0; l < d; ++l) {
        const cplx c = I * b.inner(chi, (ctx.velocity_offset(l).array() * chi.array()).matrix());
        const auto du = spectral_derivative(g, u.values, detail::unit_order(d, l), &fft);
        for (std::size_t i = 0; i < p1.size(); ++i) p1[i] += c * du[i];
    }

    // <chi, L1 U1> = sum_{jl} d_{jl} u <chi, (d_l H - d_l E) x_j>
    std::vector<cplx> p2(g.size(), cplx{});
    for (int j = 0; j < d; ++j)
        for (int l = 0; l < d; ++l) {
            const cplx c = b.inner(chi, (ctx.velocity_offset(l).array() * x[static_cast<std::size_t>(j)].array()).matrix());
            const auto du = spectral_derivative(g, u.values, detail::unit_order(d, j, l), &fft);
            // the Laplacian part of L2 contributes 1/2 delta_{jl}
            const cplx coef = c + (j == l ? 0.5 : 0.0);
            for (std::size_t i = 0; i < p2.size(); ++i) p2[i] += coef * du[i];
        }
    // <chi, L2 U0> = i u_t + ... - 1/2 <z,Qz> u + i u pdot . <chi, d_k chi>
    cplx berry_term{};
    for (int j = 0; j < d; ++j) berry_term += I * ctx.pdot[j] * ctx.point->berry[j];
    for (std::size_t i = 0; i < p2.size(); ++i) {
        const Vec z = g.point(i);
        p2[i] += I * u_t[i] - 0.5 * z.dot(ctx.Q * z) * u.values[i] + berry_term * u.values[i];
    }
    return {l2_norm(g, p1), l2_norm(g, p2)};
}

/// L^2(dz x dy) norms of the three cascade equations
///   L0 U0, L0 U1 + L1 U0, L0 U2 + L1 U1 + L2 U0,
/// evaluated by applying the forward operators to the separable terms.
inline std::array<double, 3> cascade_residuals(const CorrectorField& U0, const CorrectorField& U1,
                                                const CorrectorField& U2, const GridEnvelope& u,
                                                const std::vector<cplx>& u_t, const CorrectorContext& ctx) {
    const int d = ctx.dim();
    const CMat l0 = ctx.point->energy * CMat::Identity(ctx.h.rows(), ctx.h.cols()) - ctx.h;
    const CVec& chi = ctx.chi();
    FourierTransform fft(u.grid.shape());

    auto apply_l0 = [&](const CorrectorField& f) {
        CorrectorField out = f;
        for (auto& term : out.terms) term.y = l0 * term.y;
        return out;
    };
    // L1 F = i sum_l (d_l H - d_l E) d_{z_l} F
    auto apply_l1 = [&](const CorrectorField& f) {
        CorrectorField out = f;
        out.terms.clear();
        for (const auto& term : f.terms)
            for (int l = 0; l < d; ++l) {
                CVec y = I * (ctx.velocity_offset(l).array() * term.y.array()).matrix();
                out.terms.push_back({spectral_derivative(u.grid, term.z, detail::unit_order(d, l), &fft), std::move(y)});
            }
        return out;
    };

    std::array<double, 3> res{};
    res[0] = apply_l0(U0).norm();
    CorrectorField e1 = apply_l0(U1);
    e1 += apply_l1(U0);
    res[1] = e1.norm();

    // L2 U0 = (i u_t + 1/2 lap u - 1/2 <z,Qz> u) chi + i u pdot . d_k chi
    CorrectorField e2 = apply_l0(U2);
    e2 += apply_l1(U1);
    CorrectorField l2u0 = U0;
    l2u0.terms.clear();
    std::vector<cplx> scalar(u.grid.size());
    for (std::size_t i = 0; i < scalar.size(); ++i) {
        const Vec z = u.grid.point(i);
        scalar[i] = I * u_t[i] - 0.5 * z.dot(ctx.Q * z) * u.values[i];
    }
    for (int j = 0; j < d; ++j) {
        const auto lap = spectral_derivative(u.grid, u.values, detail::unit_order(d, j, j), &fft);
        for (std::size_t i = 0; i < scalar.size(); ++i) scalar[i] += 0.5 * lap[i];
    }
    l2u0.terms.push_back({std::move(scalar), chi});
    CVec y = CVec::Zero(chi.size());
    for (int j = 0; j < d; ++j)
        y += I * ctx.pdot[j] * (ctx.point->dk_chi_perp[static_cast<std::size_t>(j)] + ctx.point->berry[j] * chi);
    l2u0.terms.push_back({u.values, std::move(y)});
    e2 += l2u0;
    res[2] = e2.norm();
    return res;
}

} // namespace blochwp
