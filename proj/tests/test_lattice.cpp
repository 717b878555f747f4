#include <blochwp/blochwp.hpp>

#include <gtest/gtest.h>

using namespace blochwp;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

template <class F>
ErrorKind kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorKind::io;
}

} // namespace

TEST(Lattice, DualBasisSatisfiesTwoPiDuality) {
    Mat basis(2, 2);
    basis << 1.0, 0.5, 0.0, 2.0;
    const LatticeSpec lat(basis);
    const Mat prod = lat.basis().transpose() * lat.dual_basis();
    EXPECT_LE((prod - 2 * pi * Mat::Identity(2, 2)).norm(), 1e-12 * 2 * pi);
    EXPECT_NEAR(lat.cell_volume(), 2.0, 1e-14);
}

TEST(Lattice, RejectsSingularBasis) {
    Mat basis(2, 2);
    basis << 1.0, 2.0, 0.5, 1.0;
    EXPECT_EQ(kind_of([&] { LatticeSpec{basis}; }), ErrorKind::invalid_argument);
}

TEST(Lattice, FoldMapsIntoZoneWithIntegerWinding) {
    const auto lat = LatticeSpec::cubic(1);
    const auto f = lat.fold(v1(1.3));
    EXPECT_NEAR(f.k[0], 0.3, 1e-14);
    EXPECT_EQ(f.winding[0], 1);
    EXPECT_NEAR((f.k + lat.reciprocal(f.winding))[0], 1.3, 1e-14);
}

TEST(Hamiltonian, FreeLatticeKineticDiagonal) {
    const auto lat = LatticeSpec::cubic(1);
    const CMat h = build_bloch_hamiltonian(lat, FourierPotential::zero(1), v1(0.0), 1);
    ASSERT_EQ(h.rows(), 3);
    CMat expect = CMat::Zero(3, 3);
    expect.diagonal() << 0.5, 0.0, 0.5;
    EXPECT_LE((h - expect).norm(), 1e-15);
}

TEST(Hamiltonian, MathieuEntries) {
    const auto lat = LatticeSpec::cubic(1);
    const CMat h = build_bloch_hamiltonian(lat, FourierPotential::cosine(1.0), v1(0.25), 1);
    CMat expect = CMat::Zero(3, 3);
    expect.diagonal() << 0.28125, 0.03125, 0.78125;
    expect(0, 1) = expect(1, 0) = expect(1, 2) = expect(2, 1) = 0.5;
    EXPECT_LE((h - expect).norm(), 1e-15);
    EXPECT_LE((h - h.adjoint()).norm(), 0.0);
}

TEST(Hamiltonian, LowestEigenvalueConvergedUnderCutoffDoubling) {
    const auto lat = LatticeSpec::cubic(1);
    const auto pot = FourierPotential::cosine(1.0);
    auto lowest = [&](int cutoff) {
        Eigen::SelfAdjointEigenSolver<CMat> es(build_bloch_hamiltonian(lat, pot, v1(0.3), cutoff));
        return es.eigenvalues()[0];
    };
    EXPECT_NEAR(lowest(32), lowest(64), 1e-10);
}

TEST(Hamiltonian, RejectsAliasingAndNonFiniteK) {
    const auto lat = LatticeSpec::cubic(1);
    const FourierPotential pot(1, {{{2}, 0.1}, {{-2}, 0.1}});
    EXPECT_EQ(kind_of([&] { build_bloch_hamiltonian(lat, pot, v1(0.0), 1); }), ErrorKind::aliasing);
    EXPECT_EQ(kind_of([&] { build_bloch_hamiltonian(lat, pot, v1(std::nan("")), 4); }),
              ErrorKind::invalid_argument);
}

TEST(FourierPotential, RequiresHermitianSymmetry) {
    EXPECT_EQ(kind_of([] { FourierPotential(1, {{{1}, cplx(0.5, 0.1)}, {{-1}, cplx(0.5, 0.1)}}); }),
              ErrorKind::invalid_argument);
    const FourierPotential ok(1, {{{1}, cplx(0.5, 0.1)}, {{-1}, cplx(0.5, -0.1)}});
    // real valued: 2 Re(c e^{iy})
    EXPECT_NEAR(ok(LatticeSpec::cubic(1), v1(0.7)), 2 * (0.5 * std::cos(0.7) - 0.1 * std::sin(0.7)), 1e-14);
}

TEST(ExternalPotential, GradientMatchesDifferences) {
    std::vector<Vec> probes{v1(-1.3), v1(0.0), v1(0.4), v1(2.2)};
    EXPECT_LE(gradient_consistency(*QuadraticPotential::harmonic(1, 1.5), probes), 1e-5);
    EXPECT_LE(gradient_consistency(CosineWell(0.7, v1(1.1)), probes), 1e-5);
}

TEST(Grid, SpectralDerivativeOfTrigonometricPolynomial) {
    const PeriodicGrid g{1, pi, 64};
    const auto f = sample_on(g, [](const Vec& x) { return cplx(std::sin(3 * x[0]), std::cos(x[0])); });
    const auto df = spectral_derivative(g, f, {1});
    double err = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = g.point(i)[0];
        err = std::max(err, std::abs(df[i] - cplx(3 * std::cos(3 * x), -std::sin(x))));
    }
    EXPECT_LE(err, 1e-12);
}

TEST(Grid, FourierRoundTripIsIdentity) {
    const PeriodicGrid g{2, 3.0, 16};
    auto f = sample_on(g, [](const Vec& x) { return std::exp(-x.squaredNorm()) * cplx(1.0, x[0]); });
    const auto f0 = f;
    FourierTransform fft(g.shape());
    fft.forward(f);
    fft.backward(f);
    double err = 0;
    for (std::size_t i = 0; i < f.size(); ++i) err = std::max(err, std::abs(f[i] - f0[i]));
    EXPECT_LE(err, 1e-14);
}

TEST(Grid, FourierInterpolantIsExactForBandLimitedData) {
    const PeriodicGrid g{1, pi, 32};
    auto fn = [](double x) { return cplx(std::cos(2 * x), std::sin(5 * x)); };
    const auto f = sample_on(g, [&](const Vec& x) { return fn(x[0]); });
    const FourierInterpolant1D interp(g, f);
    for (double x : {-2.9, -0.123, 0.5, 1.77, 3.0}) EXPECT_LE(std::abs(interp(x) - fn(x)), 1e-12);
}
