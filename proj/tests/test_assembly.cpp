#include <blochwp/blochwp.hpp>

#include <gtest/gtest.h>

#include <filesystem>

using namespace blochwp;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }
CMat c1(cplx x) { return CMat::Constant(1, 1, x); }

const LatticeSpec& line() {
    static const LatticeSpec lat = LatticeSpec::cubic(1);
    return lat;
}

GaussianEnvelope unit() { return gaussian_init(c1(1.0), c1(1.0)); }

TrajectoryState state(double q, double p, double S = 0.0) {
    return TrajectoryState{0.0, v1(q), v1(p), line().fold(v1(p)).k, line().fold(v1(p)).winding, S, 0.0};
}

PeriodicGrid box(double eps, double half_width = 4.0) {
    return PeriodicGrid{1, half_width, fine_grid_points(line(), half_width, eps)};
}

double max_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST(Packet, FreeLatticeClosedForm) {
    const FreeBand free(line());
    const double eps = 1.0 / 16, q = 0.5, p = 1.0, S = 0.3;
    const auto s = state(q, p, S);
    const auto g = box(eps);
    const auto f = synthesize_packet(unit(), s, free.at(s.p)->pair, eps, g);
    double err = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = g.coordinate(static_cast<int>(i));
        const cplx expect = std::pow(eps, -0.25) * std::exp(-(x - q) * (x - q) / (2 * eps)) / std::sqrt(2 * pi) *
                            std::exp(I * (S + p * (x - q)) / eps);
        err = std::max(err, std::abs(f.values[i] - expect));
    }
    EXPECT_LE(err, 1e-12);
}

TEST(Packet, NormIndependentOfEpsilon) {
    const auto band = BandModel::anchored_at(line(), FourierPotential::cosine(1.0), 1, 12, v1(0.3));
    const auto s = state(0.2, 0.3, 0.1);
    // |u|^2 = sqrt(pi) and the cell average of |chi|^2 is 1/|Y|; the first
    // harmonic of |chi|^2 against the Gaussian leaves O(exp(-1/(4 eps)))
    const double expect = std::pow(pi, 0.25) / std::sqrt(2 * pi);
    for (double eps : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
        const auto f = synthesize_packet(unit(), s, band.at(s.p)->pair, eps, box(eps));
        EXPECT_LE(std::abs(l2_norm(f.grid, f.values) - expect), expect * std::exp(-0.25 / eps)) << "eps = " << eps;
    }
}

TEST(Packet, GridAndGaussianEnvelopesAgree) {
    const auto band = BandModel::anchored_at(line(), FourierPotential::cosine(1.0), 1, 12, v1(0.3));
    const auto s = state(0.2, 0.3);
    const double eps = 1.0 / 32;
    const auto g = box(eps);
    const auto& pair = band.at(s.p)->pair;
    const auto a = synthesize_packet(unit(), s, pair, eps, g);
    const auto b = synthesize_packet(sample_envelope(PeriodicGrid{1, 12.0, 256}, unit()), s, pair, eps, g);
    EXPECT_LE(max_diff(a.values, b.values), 1e-10);
}

TEST(Packet, LinearInEnvelope) {
    const auto band = BandModel::anchored_at(line(), FourierPotential::cosine(1.0), 1, 12, v1(0.3));
    const auto s = state(0.0, 0.3);
    const double eps = 1.0 / 16;
    const auto u = sample_envelope(PeriodicGrid{1, 12.0, 256}, unit());
    auto w = u;
    const cplx a(0.3, -1.2);
    for (auto& v : w.values) v *= a;
    const auto f = synthesize_packet(u, s, band.at(s.p)->pair, eps, box(eps));
    const auto h = synthesize_packet(w, s, band.at(s.p)->pair, eps, box(eps));
    double err = 0;
    for (std::size_t i = 0; i < f.values.size(); ++i) err = std::max(err, std::abs(h.values[i] - a * f.values[i]));
    EXPECT_LE(err, 1e-12);
}

TEST(Packet, GaugeChangeIsAConstantPhase) {
    const auto pot = FourierPotential(1, {{{1}, cplx(0.3, 0.4)}, {{-1}, cplx(0.3, -0.4)}});
    const BandModel dom(line(), pot, 1, 12, Gauge::dominant());
    const BandModel anc(line(), pot, 1, 12, Gauge::anchored({1}));
    const auto s = state(0.0, 0.3);
    const double eps = 1.0 / 16;
    const auto f = synthesize_packet(unit(), s, dom.at(s.p)->pair, eps, box(eps));
    const auto h = synthesize_packet(unit(), s, anc.at(s.p)->pair, eps, box(eps));
    const std::size_t mid = f.values.size() / 2;
    const cplx phase = h.values[mid] / f.values[mid];
    EXPECT_NEAR(std::abs(phase), 1.0, 1e-12);
    double err = 0;
    for (std::size_t i = 0; i < f.values.size(); ++i) err = std::max(err, std::abs(h.values[i] - phase * f.values[i]));
    EXPECT_LE(err, 1e-12);
}

TEST(Packet, RejectsEnvelopeOutsideBox) {
    const FreeBand free(line());
    const auto s = state(3.5, 0.0);
    try {
        synthesize_packet(unit(), s, free.at(s.p)->pair, 1.0 / 16, box(1.0 / 16));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::boundary_mass);
    }
}

TEST(App, FreeLatticeAnsatzIsThePacket) {
    const FreeBand free(line());
    const auto v = QuadraticPotential::zero(1);
    const auto traj = integrate_flow(v1(0.0), v1(0.3), 0.5, 0.05, free, *v);
    const auto u = sample_envelope(PeriodicGrid{1, 12.0, 256}, unit());
    const auto ctx = corrector_context(traj, 0.0, free, *v);
    const auto U0 = build_U0(u, ctx), U1 = build_U1(u, ctx), U2 = build_U2(u, ctx);
    EXPECT_EQ(U1.norm(), 0.0);
    EXPECT_EQ(U2.norm(), 0.0);
    const double eps = 1.0 / 16;
    const auto s = traj.at(0.0);
    const auto app = synthesize_app(U0, &U1, &U2, s, eps, box(eps));
    const auto packet = synthesize_packet(u, s, ctx.point->pair, eps, box(eps));
    EXPECT_LE(max_diff(app.values, packet.values), 1e-12);
}

TEST(App, CorrectorsEnterWithEpsilonWeights) {
    const auto band = BandModel::anchored_at(line(), FourierPotential::cosine(1.0), 1, 12, v1(0.3));
    const auto v = QuadraticPotential::harmonic(1);
    const auto traj = integrate_flow(v1(0.0), v1(0.3), 0.5, 0.05, band, *v);
    const auto u = sample_envelope(PeriodicGrid{1, 12.0, 256}, unit());
    const auto ctx = corrector_context(traj, 0.0, band, *v);
    const auto U0 = build_U0(u, ctx), U1 = build_U1(u, ctx), U2 = build_U2(u, ctx);
    const auto s = traj.at(0.0);
    auto norm_of = [&](double eps, const CorrectorField* a, const CorrectorField* b) {
        const auto full = synthesize_app(U0, a, b, s, eps, box(eps));
        const auto base = synthesize_app(U0, nullptr, nullptr, s, eps, box(eps));
        std::vector<cplx> diff(full.values.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = full.values[i] - base.values[i];
        return l2_norm(full.grid, diff);
    };
    // |app - U0 term| ~ sqrt(eps) |U1|, eps |U2| up to exponentially small cell averaging
    const double r1 = norm_of(1.0 / 64, &U1, nullptr) / norm_of(1.0 / 256, &U1, nullptr);
    EXPECT_NEAR(r1, 2.0, 1e-4);
    const double r2 = norm_of(1.0 / 64, nullptr, &U2) / norm_of(1.0 / 256, nullptr, &U2);
    EXPECT_NEAR(r2, 4.0, 1e-4);
}

TEST(Superpose, AddsAndRejectsMismatch) {
    const FreeBand free(line());
    const double eps = 1.0 / 16;
    const auto a = synthesize_packet(unit(), state(-1.0, 0.2), free.at(v1(0.2))->pair, eps, box(eps));
    const auto b = synthesize_packet(unit(), state(1.0, -0.2), free.at(v1(-0.2))->pair, eps, box(eps));
    const auto sum = superpose({a, b});
    for (std::size_t i : {std::size_t{0}, a.values.size() / 3, a.values.size() / 2})
        EXPECT_EQ(sum.values[i], a.values[i] + b.values[i]);
    auto c = b;
    c.time = 1.0;
    EXPECT_THROW(superpose({a, c}), Error);
    EXPECT_THROW(superpose({}), Error);
}

TEST(Resolution, FineGridAndChecks) {
    const double eps = 1.0 / 16;
    const int n = fine_grid_points(line(), 4.0, eps);
    EXPECT_EQ(n, 512);
    EXPECT_NO_THROW(check_resolution(PeriodicGrid{1, 4.0, n}, line(), eps));
    try {
        check_resolution(PeriodicGrid{1, 4.0, 128}, line(), eps);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::resolution);
    }
}

TEST(Wavefield, RawRoundTripWithSidecar) {
    const FreeBand free(line());
    const double eps = 1.0 / 16;
    auto f = synthesize_packet(unit(), state(0.0, 0.4, 0.2), free.at(v1(0.4))->pair, eps, box(eps));
    f.time = 1.25;
    const auto dir = std::filesystem::temp_directory_path() / "blochwp_wavefield_test";
    std::filesystem::create_directories(dir);
    write_wavefield(dir / "snap", f);
    EXPECT_EQ(std::filesystem::file_size(dir / "snap.bin"), f.values.size() * 16);
    const auto meta = wavefield_sidecar(f);
    EXPECT_EQ(meta["layout"], "interleaved-complex");
    EXPECT_EQ(meta["shape"][0], f.grid.points);
    const auto back = read_wavefield(dir / "snap");
    EXPECT_EQ(back.epsilon, eps);
    EXPECT_EQ(back.time, 1.25);
    EXPECT_TRUE(back.grid == f.grid);
    EXPECT_EQ(back.values, f.values);
    std::filesystem::resize_file(dir / "snap.bin", 64);
    EXPECT_THROW(read_wavefield(dir / "snap"), Error);
    std::filesystem::remove_all(dir);
}
