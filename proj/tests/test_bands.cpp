#include <blochwp/blochwp.hpp>

#include <gtest/gtest.h>

using namespace blochwp;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

const LatticeSpec& line() {
    static const LatticeSpec lat = LatticeSpec::cubic(1);
    return lat;
}

FourierPotential complex_potential() {
    return FourierPotential(1, {{{1}, cplx(0.3, 0.4)}, {{-1}, cplx(0.3, -0.4)}, {{2}, cplx(0.1, -0.2)},
                                {{-2}, cplx(0.1, 0.2)}});
}

double energy(const FourierPotential& pot, const Vec& k, int m, int cutoff = 32) {
    return solve_bands(LatticeSpec::cubic(static_cast<int>(k.size())), pot, k, cutoff, m)[static_cast<std::size_t>(m - 1)]
        .energy;
}

} // namespace

TEST(SolveBands, FreeLatticeFoldedParabolas) {
    const auto pairs = solve_bands(line(), FourierPotential::zero(1), v1(0.25), 4, 3);
    EXPECT_NEAR(pairs[0].energy, 0.03125, 1e-14);
    EXPECT_NEAR(pairs[1].energy, 0.28125, 1e-14);
    EXPECT_NEAR(pairs[2].energy, 0.78125, 1e-14);
}

TEST(SolveBands, FreeLatticeDegeneratePairAtZero) {
    const auto pairs = solve_bands(line(), FourierPotential::zero(1), v1(0.0), 4, 3);
    EXPECT_NEAR(pairs[1].energy, 0.5, 1e-14);
    EXPECT_NEAR(pairs[2].energy, 0.5, 1e-14);
    // deterministic orthonormal basis of the degenerate pair
    const auto again = solve_bands(line(), FourierPotential::zero(1), v1(0.0), 4, 3);
    EXPECT_EQ(pairs[1].coeffs, again[1].coeffs);
    EXPECT_NEAR(std::abs(pairs[1].inner(pairs[2])), 0.0, 1e-14);
}

TEST(SolveBands, MathieuGroundEnergyStableUnderCutoffEscalation) {
    const auto pot = FourierPotential::cosine(1.0);
    double prev = energy(pot, v1(0.0), 1, 8);
    for (int cutoff : {16, 32}) {
        const double e = energy(pot, v1(0.0), 1, cutoff);
        EXPECT_NEAR(e, prev, 1e-10) << "cutoff " << cutoff;
        prev = e;
    }
}

TEST(SolveBands, NormalizationAndEigenResidual) {
    auto basis = std::make_shared<const PlaneWaveBasis>(line(), 16);
    const auto pot = complex_potential();
    const CMat h = build_bloch_hamiltonian(*basis, pot, v1(0.37));
    for (const auto& p : solve_bands(h, basis, v1(0.37), 4)) {
        EXPECT_NEAR(basis->norm(p.coeffs), 1.0, 1e-13);
        EXPECT_LE((h * p.coeffs - p.energy * p.coeffs).norm() * std::sqrt(2 * pi), 1e-9);
    }
}

TEST(SolveBands, RejectsTooManyBands) {
    auto basis = std::make_shared<const PlaneWaveBasis>(line(), 1);
    const CMat h = build_bloch_hamiltonian(*basis, FourierPotential::zero(1), v1(0.0));
    EXPECT_THROW(solve_bands(h, basis, v1(0.0), 4), Error);
}

TEST(GaugeFix, RemovesGlobalPhase) {
    auto basis = std::make_shared<const PlaneWaveBasis>(line(), 2);
    BlochEigenpair p;
    p.basis = basis;
    p.k = v1(0.0);
    p.coeffs = CVec::Constant(basis->size(), I / std::sqrt(5.0 * 2 * pi));
    const auto fixed = gauge_fix(p);
    for (Eigen::Index i = 0; i < fixed.coeffs.size(); ++i) {
        EXPECT_NEAR(fixed.coeffs[i].imag(), 0.0, 1e-15);
        EXPECT_GT(fixed.coeffs[i].real(), 0.0);
    }
}

TEST(GaugeFix, SelfReferenceIsIdentity) {
    const auto p = solve_bands(line(), complex_potential(), v1(0.2), 12, 1)[0];
    const auto q = gauge_fix(p, &p);
    EXPECT_LE((q.coeffs - p.coeffs).norm(), 1e-15);
}

namespace {
// phase of the transported eigenvector at k_end relative to the dominant gauge there
double transported_phase(const FourierPotential& pot, double k_end, int steps) {
    auto basis = std::make_shared<const PlaneWaveBasis>(line(), 12);
    auto at = [&](double k) { return solve_bands(build_bloch_hamiltonian(*basis, pot, v1(k)), basis, v1(k), 1)[0]; };
    BlochEigenpair cur = at(0.0);
    for (int i = 1; i <= steps; ++i) {
        const auto next = gauge_fix(at(k_end * i / steps), &cur);
        const cplx ov = cur.inner(next);
        EXPECT_NEAR(ov.imag(), 0.0, 1e-13);
        EXPECT_GT(ov.real(), 0.0);
        cur = next;
    }
    return std::arg(at(k_end).inner(cur));
}
} // namespace

TEST(GaugeFix, ParallelTransportRefinesConsistently) {
    // real Hamiltonian: transported phase is path-independent
    EXPECT_NEAR(transported_phase(FourierPotential::cosine(1.0), 0.4, 64),
                transported_phase(FourierPotential::cosine(1.0), 0.4, 128), 1e-8);
    // complex potential: discrete transport converges at second order
    const auto pot = complex_potential();
    const double a = transported_phase(pot, 0.4, 32), b = transported_phase(pot, 0.4, 64),
                 c = transported_phase(pot, 0.4, 128);
    EXPECT_NEAR((a - b) / (b - c), 4.0, 0.2);
}

TEST(GaugeFix, RejectsVanishingOverlap) {
    const auto pairs = solve_bands(line(), FourierPotential::cosine(1.0), v1(0.2), 12, 2);
    auto other = pairs[1];
    other.band = pairs[0].band;
    try {
        gauge_fix(other, &pairs[0]);
        FAIL() << "expected gauge_continuation";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::gauge_continuation);
    }
}

TEST(BandDerivatives, FreeLatticeClosedForm) {
    const auto d = band_derivatives(line(), FourierPotential::zero(1), v1(0.25), 1, 4);
    EXPECT_NEAR(d.grad_E[0], 0.25, 1e-13);
    EXPECT_NEAR(d.hess_E(0, 0), 1.0, 1e-13);
    EXPECT_LE(d.dk_chi[0].norm(), 1e-13);
    EXPECT_LE(std::abs(d.berry[0]), 1e-13);
}

TEST(BandDerivatives, MathieuMatchesFiniteDifferences) {
    const auto pot = FourierPotential::cosine(1.0);
    const auto d = band_derivatives(line(), pot, v1(0.3), 1, 32);
    const double h = 1e-4, hh = 1e-3;
    const double fd_grad = (energy(pot, v1(0.3 + h), 1) - energy(pot, v1(0.3 - h), 1)) / (2 * h);
    const double fd_hess =
        (energy(pot, v1(0.3 + hh), 1) - 2 * energy(pot, v1(0.3), 1) + energy(pot, v1(0.3 - hh), 1)) / (hh * hh);
    EXPECT_NEAR(d.grad_E[0], fd_grad, 1e-6);
    EXPECT_NEAR(d.hess_E(0, 0), fd_hess, 1e-5);
}

TEST(BandDerivatives, DerivativeOfCoefficientsMatchesDifferences) {
    // d_k chi in the dominant gauge against differences of gauge-fixed eigenvectors
    const auto pot = complex_potential();
    auto basis = std::make_shared<const PlaneWaveBasis>(line(), 16);
    const double k = 0.21, h = 1e-4;
    const auto d = band_derivatives(basis, pot, v1(k), 1);
    auto chi = [&](double kk) { return band_derivatives(basis, pot, v1(kk), 1).pair.coeffs; };
    const CVec fd = (chi(k + h) - chi(k - h)) / (2 * h);
    EXPECT_LE((fd - d.dk_chi[0]).norm() / fd.norm(), 1e-6);
    EXPECT_NEAR(d.berry[0].real(), 0.0, 1e-10);
    EXPECT_NEAR(basis->inner(d.pair.coeffs, fd).real(), 0.0, 1e-7);
}

TEST(BandDerivatives, TwoDimensionalBandIsConsistent) {
    const auto lat = LatticeSpec::cubic(2);
    const FourierPotential pot(2, {{{1, 0}, 0.4}, {{-1, 0}, 0.4}, {{0, 1}, 0.3}, {{0, -1}, 0.3}, {{1, 1}, cplx(0.1, 0.05)},
                                   {{-1, -1}, cplx(0.1, -0.05)}});
    Vec k(2);
    k << 0.13, -0.22;
    auto basis = std::make_shared<const PlaneWaveBasis>(lat, 6);
    const auto d = band_derivatives(basis, pot, k, 1);
    EXPECT_LE((d.hess_E - d.hess_E.transpose()).norm(), 1e-10);
    auto e = [&](const Vec& kk) {
        return solve_bands(build_bloch_hamiltonian(*basis, pot, kk), basis, kk, 1)[0].energy;
    };
    for (int j = 0; j < 2; ++j) {
        Vec dk = Vec::Zero(2);
        dk[j] = 1e-4;
        EXPECT_NEAR(d.grad_E[j], (e(k + dk) - e(k - dk)) / 2e-4, 1e-6);
        EXPECT_NEAR(d.berry[j].real(), 0.0, 1e-10);
    }
    Vec a = Vec::Zero(2), b = Vec::Zero(2);
    a[0] = b[1] = 1e-3;
    const double mixed = (e(k + a + b) - e(k + a - b) - e(k - a + b) + e(k - a - b)) / (4e-6);
    EXPECT_NEAR(d.hess_E(0, 1), mixed, 1e-5);
}

TEST(BandDerivatives, GaugeCovariance) {
    const auto pot = complex_potential();
    auto basis = std::make_shared<const PlaneWaveBasis>(line(), 16);
    const auto dom = band_derivatives(basis, pot, v1(0.3), 1);
    const auto anc = band_derivatives(basis, pot, v1(0.3), 1, Gauge::anchored({1}));
    EXPECT_NEAR(dom.pair.energy, anc.pair.energy, 1e-14);
    EXPECT_NEAR(dom.grad_E[0], anc.grad_E[0], 1e-12);
    EXPECT_NEAR(dom.hess_E(0, 0), anc.hess_E(0, 0), 1e-10);
    EXPECT_NEAR(dom.berry[0].real(), 0.0, 1e-10);
    EXPECT_NEAR(anc.berry[0].real(), 0.0, 1e-10);
    const std::vector<Vec> ys{v1(0.0), v1(1.1), v1(-2.5)};
    const auto a = evaluate_bloch(dom.pair, ys), b = evaluate_bloch(anc.pair, ys);
    for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(std::abs(a[i]), std::abs(b[i]), 1e-13);
    // the perpendicular part is gauge covariant: it rotates with chi
    const cplx phase = basis->inner(dom.pair.coeffs, anc.pair.coeffs);
    EXPECT_LE((anc.dk_chi_perp[0] - phase * dom.dk_chi_perp[0]).norm(), 1e-10);
}

TEST(BandDerivatives, ResolventSolutionIsOrthogonalWithSmallResidual) {
    const auto pot = complex_potential();
    auto basis = std::make_shared<const PlaneWaveBasis>(line(), 16);
    const auto d = band_derivatives(basis, pot, v1(-0.17), 2);
    EXPECT_LE(std::abs(basis->inner(d.pair.coeffs, d.dk_chi_perp[0])), 1e-12);
    const CMat h = build_bloch_hamiltonian(*basis, pot, v1(-0.17));
    const ReducedResolvent r(h, d.pair.energy, d.pair.coeffs);
    const CVec rhs = CVec::Random(basis->size());
    const CVec x = r.solve(rhs);
    EXPECT_LE((r.apply_shifted(x) - r.project(rhs)).norm(), 1e-10);
    EXPECT_LE(std::abs(d.pair.coeffs.dot(x)), 1e-12);
}

TEST(BandDerivatives, DegenerateBandIsRefused) {
    try {
        band_derivatives(line(), FourierPotential::zero(1), v1(0.0), 2, 4);
        FAIL() << "expected degenerate_band";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_band);
    }
}

TEST(GapCheck, FreeLatticeClosedForms) {
    const auto zero = FourierPotential::zero(1);
    // band 1 at k = 0.25 against every other band on the grid: min over k' of |E1(0.25) - E_n(k')|
    const auto grid = line().brillouin_grid(129);
    double expect = 1e300;
    for (const Vec& k : grid)
        for (int n = 1; n < 4; ++n) {
            std::vector<double> e;
            for (int j = -4; j <= 4; ++j) e.push_back(0.5 * std::pow(k[0] + j, 2));
            std::sort(e.begin(), e.end());
            expect = std::min(expect, std::abs(0.03125 - e[static_cast<std::size_t>(n)]));
        }
    EXPECT_NEAR(gap_check(line(), zero, 1, {v1(0.25)}, 4, 4), expect, 1e-12);
    EXPECT_LE(expect, 0.25);
    EXPECT_NEAR(gap_check(line(), zero, 2, {v1(0.0)}, 4, 4), 0.0, 1e-12);
}

TEST(GapCheck, MathieuGroundBandIsIsolated) {
    const auto pot = FourierPotential::cosine(1.0);
    const auto grid = line().brillouin_grid(129);
    const double gap = gap_check(line(), pot, 1, grid, 3, 16);
    // oracle: separation of the band-1 range from the band-2 range
    double top1 = -1e300, bottom2 = 1e300;
    for (const Vec& k : grid) {
        top1 = std::max(top1, energy(pot, k, 1, 16));
        bottom2 = std::min(bottom2, energy(pot, k, 2, 16));
    }
    EXPECT_GT(gap, 0.0);
    EXPECT_NEAR(gap, bottom2 - top1, 1e-12);
}

TEST(EvaluateBloch, ConstantEigenvectorAndPeriodicity) {
    const auto free = solve_bands(line(), FourierPotential::zero(1), v1(0.25), 4, 1)[0];
    for (const auto& v : evaluate_bloch(free, {v1(0.0), v1(1.0), v1(-3.0)}))
        EXPECT_NEAR(std::abs(v), 1.0 / std::sqrt(2 * pi), 1e-14);
    const auto p = solve_bands(line(), complex_potential(), v1(0.3), 12, 1)[0];
    const auto a = evaluate_bloch(p, {v1(0.7)}), b = evaluate_bloch(p, {v1(0.7 + 2 * pi)});
    EXPECT_LE(std::abs(a[0] - b[0]), 1e-12);
}

TEST(EvaluateBloch, MathieuValueStableUnderCutoffEscalation) {
    const auto pot = FourierPotential::cosine(1.0);
    const auto a = solve_bands(line(), pot, v1(0.3), 16, 1)[0];
    const auto b = solve_bands(line(), pot, v1(0.3), 32, 1)[0];
    EXPECT_NEAR(std::abs(evaluate_bloch(a, {v1(0.0)})[0] - evaluate_bloch(b, {v1(0.0)})[0]), 0.0, 1e-10);
}

TEST(BandModel, FoldedLookupsRepresentUnfoldedMomentum) {
    const auto band = BandModel::anchored_at(line(), complex_potential(), 1, 12, v1(0.3));
    const auto in = band.at(v1(0.3)), out = band.at(v1(1.3));
    EXPECT_NEAR(in->energy, out->energy, 1e-13);
    EXPECT_EQ(out->winding[0], 1);
    // chi(y, k + G) = e^{-i G y} chi(y, k) up to one constant unit phase (the anchor
    // follows a fixed frequency of the unfolded function)
    const std::vector<Vec> ys{v1(0.9), v1(-2.0), v1(3.1)};
    const auto a = evaluate_bloch(in->pair, ys), b = evaluate_bloch(out->pair, ys);
    const cplx phase = b[0] / (std::exp(-I * 0.9) * a[0]);
    EXPECT_NEAR(std::abs(phase), 1.0, 1e-12);
    for (std::size_t i = 0; i < ys.size(); ++i)
        EXPECT_LE(std::abs(b[i] - phase * std::exp(-I * ys[i][0]) * a[i]), 1e-12);
}
