#pragma once

#include "lattice.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <limits>
#include <map>
#include <mutex>
#include <optional>

namespace blochwp {

/// Phase convention of a Bloch eigenvector.
struct Gauge {
    enum class Kind { dominant, anchored, transported };
    Kind kind = Kind::dominant;
    MultiIndex anchor; ///< plane-wave index held real positive (anchored only)

    static Gauge dominant() { return {}; }
    static Gauge anchored(MultiIndex n) { return {Kind::anchored, std::move(n)}; }

    std::string tag() const {
        switch (kind) {
        case Kind::dominant: return "dominant";
        case Kind::transported: return "transported";
        case Kind::anchored: {
            std::string s = "anchor:";
            for (std::size_t i = 0; i < anchor.size(); ++i) s += (i ? "," : "") + std::to_string(anchor[i]);
            return s;
        }
        }
        return "?";
    }
};

/// chi_m(y, k) = exp(-i <G_shift, y>) sum_n c_n exp(i <G_n, y>), normalized in L^2(Y).
/// `k` is the momentum the coefficients were solved at; a nonzero shift represents
/// the same Bloch function at the unfolded momentum k + G_shift.
struct BlochEigenpair {
    std::shared_ptr<const PlaneWaveBasis> basis;
    Vec k;
    int band = 1;
    double energy = 0;
    CVec coeffs;
    MultiIndex shift;
    std::string gauge_tag = "none";

    cplx inner(const BlochEigenpair& other) const { return basis->inner(coeffs, other.coeffs); }
};

namespace detail {

/// Position of the largest-modulus coefficient; ties go to the lowest multi-index.
inline Eigen::Index dominant_position(const CVec& c) {
    const double top = c.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < c.size(); ++i)
        if (std::abs(c[i]) >= top * (1.0 - 1e-10)) return i;
    return 0;
}

inline CVec unit_phase_at(const CVec& c, Eigen::Index pos) {
    const double mod = std::abs(c[pos]);
    if (mod == 0.0) return c;
    return c * (std::conj(c[pos]) / mod);
}

/// Deterministic orthonormal basis of a degenerate eigenspace: repeatedly pick the
/// plane wave with the largest remaining projection weight.
inline void canonicalize_cluster(Eigen::Ref<CMat> vecs) {
    const Eigen::Index r = vecs.cols();
    if (r <= 1) return;
    CMat space = vecs;
    CMat out(vecs.rows(), r);
    for (Eigen::Index j = 0; j < r; ++j) {
        const Vec weight = space.rowwise().squaredNorm();
        const double top = weight.maxCoeff();
        Eigen::Index best = 0;
        while (weight[best] < top * (1.0 - 1e-10)) ++best;
        CVec v = space * space.row(best).adjoint();
        v.normalize();
        out.col(j) = v;
        if (j + 1 == r) break;
        const CMat rest = space - v * (v.adjoint() * space);
        Eigen::JacobiSVD<CMat> svd(rest, Eigen::ComputeThinU);
        space = svd.matrixU().leftCols(space.cols() - 1);
    }
    vecs = out;
}

} // namespace detail

inline constexpr double eigen_residual_tol = 1e-9;

/// Phase-fix a pair. Without a reference the largest coefficient (lowest index
/// on ties) becomes real positive; with a reference <chi_ref, chi> becomes real
/// positive (one step of discrete parallel transport).
inline BlochEigenpair gauge_fix(const BlochEigenpair& pair, const BlochEigenpair* reference = nullptr,
                                double min_overlap = 1e-3) {
    BlochEigenpair out = pair;
    if (!reference) {
        out.coeffs = detail::unit_phase_at(pair.coeffs, detail::dominant_position(pair.coeffs));
        out.gauge_tag = Gauge::dominant().tag();
        return out;
    }
    require(reference->band == pair.band, ErrorKind::invalid_argument,
            "gauge reference has a different band index");
    require(reference->coeffs.size() == pair.coeffs.size(), ErrorKind::invalid_argument,
            "gauge reference lives in a different basis");
    const cplx ov = reference->inner(pair);
    require(std::abs(ov) > min_overlap, ErrorKind::gauge_continuation,
            "overlap with the gauge reference vanishes (|<ref, chi>| = " + std::to_string(std::abs(ov)) +
                "): band crossing or k-step too coarse");
    out.coeffs = pair.coeffs * (std::conj(ov) / std::abs(ov));
    out.gauge_tag = Gauge{Gauge::Kind::transported, {}}.tag();
    return out;
}

inline BlochEigenpair apply_gauge(const BlochEigenpair& pair, const Gauge& gauge) {
    if (gauge.kind != Gauge::Kind::anchored) return gauge_fix(pair);
    MultiIndex local = gauge.anchor;
    for (std::size_t j = 0; j < local.size(); ++j) local[j] += pair.shift.empty() ? 0 : pair.shift[j];
    const Eigen::Index pos = pair.basis->position(local);
    require(pos >= 0, ErrorKind::gauge_continuation, "gauge anchor outside the plane-wave basis");
    const double top = pair.coeffs.cwiseAbs().maxCoeff();
    require(std::abs(pair.coeffs[pos]) > 1e-6 * top, ErrorKind::gauge_continuation,
            "gauge anchor coefficient vanishes; choose another anchor");
    BlochEigenpair out = pair;
    out.coeffs = detail::unit_phase_at(pair.coeffs, pos);
    out.gauge_tag = gauge.tag();
    return out;
}

/// Ascending eigenpairs of H(k), normalized in L^2(Y), default gauge.
inline std::vector<BlochEigenpair> solve_bands(const CMat& h, std::shared_ptr<const PlaneWaveBasis> basis,
                                               const Vec& k, int num_bands) {
    require(num_bands >= 1 && num_bands <= h.rows(), ErrorKind::invalid_argument,
            "num_bands must lie in [1, matrix dimension]");
    require(h.rows() == basis->size(), ErrorKind::invalid_argument, "matrix does not match the basis");
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    if (es.info() != Eigen::Success) fail(ErrorKind::eigensolver, "Hermitian eigensolver did not converge");
    const Vec& e = es.eigenvalues();
    CMat v = es.eigenvectors();

    // deterministic bases inside numerically degenerate clusters
    const double scale = std::max(1.0, std::abs(e[e.size() - 1] - e[0]));
    Eigen::Index start = 0;
    while (start < e.size()) {
        Eigen::Index end = start + 1;
        while (end < e.size() && e[end] - e[end - 1] <= 1e-10 * scale) ++end;
        if (end - start > 1) detail::canonicalize_cluster(v.middleCols(start, end - start));
        start = end;
    }

    const double hscale = std::max(1.0, h.cwiseAbs().maxCoeff() / 100.0);
    const double norm = std::sqrt(basis->lattice().cell_volume());
    std::vector<BlochEigenpair> out;
    out.reserve(static_cast<std::size_t>(num_bands));
    for (int m = 0; m < num_bands; ++m) {
        const CVec col = v.col(m);
        const double res = (h * col - e[m] * col).norm();
        if (!(res <= eigen_residual_tol * hscale))
            fail(ErrorKind::eigensolver, "eigen-residual " + std::to_string(res) + " for band " + std::to_string(m + 1));
        BlochEigenpair p;
        p.basis = basis;
        p.k = k;
        p.band = m + 1;
        p.energy = e[m];
        p.coeffs = col / norm;
        p.shift = MultiIndex(static_cast<std::size_t>(basis->dim()), 0);
        out.push_back(gauge_fix(p));
    }
    return out;
}

inline std::vector<BlochEigenpair> solve_bands(const LatticeSpec& lattice, const FourierPotential& pot,
                                               const Vec& k, int cutoff, int num_bands) {
    auto basis = std::make_shared<const PlaneWaveBasis>(lattice, cutoff);
    return solve_bands(build_bloch_hamiltonian(*basis, pot, k), basis, k, num_bands);
}

/// chi(y) at arbitrary points.
/// Values of sum_n c_n e^{i (G_n - G_shift) . y} at the given points.
inline std::vector<cplx> evaluate_plane_waves(const PlaneWaveBasis& b, const CVec& coeffs, const MultiIndex& shift,
                                              const std::vector<Vec>& y_points) {
    require(coeffs.size() == b.size(), ErrorKind::invalid_argument, "coefficients do not match the basis");
    const Mat& g = b.reciprocal_vectors();
    Vec gs = Vec::Zero(b.dim());
    if (!shift.empty()) gs = b.lattice().reciprocal(shift);
    std::vector<cplx> out;
    out.reserve(y_points.size());
    for (const Vec& y : y_points) {
        require(y.size() == b.dim(), ErrorKind::invalid_argument, "evaluation point has wrong dimension");
        const Vec phase = g.transpose() * y;
        cplx s{};
        for (Eigen::Index i = 0; i < coeffs.size(); ++i)
            if (coeffs[i] != 0.0) s += coeffs[i] * std::exp(I * phase[i]);
        out.push_back(s * std::exp(-I * gs.dot(y)));
    }
    return out;
}

/// chi(y, k) for the unfolded momentum the pair represents.
inline std::vector<cplx> evaluate_bloch(const BlochEigenpair& pair, const std::vector<Vec>& y_points) {
    return evaluate_plane_waves(*pair.basis, pair.coeffs, pair.shift, y_points);
}

/// Solver for (H - E) x = P_perp rhs subject to <chi, x> = 0, via the bordered
/// system [[H - E, v], [v^*, 0]] with v = chi / |chi|.
class ReducedResolvent {
public:
    ReducedResolvent(const CMat& h, double energy, const CVec& chi) {
        const Eigen::Index n = h.rows();
        v_ = chi.normalized();
        CMat bordered = CMat::Zero(n + 1, n + 1);
        bordered.topLeftCorner(n, n) = h - energy * CMat::Identity(n, n);
        bordered.topRightCorner(n, 1) = v_;
        bordered.bottomLeftCorner(1, n) = v_.adjoint();
        shifted_ = bordered.topLeftCorner(n, n);
        lu_.compute(bordered);
    }

    CVec project(const CVec& f) const { return f - v_ * v_.dot(f); }

    /// Returns x with (H - E) x = P_perp rhs and <chi, x> = 0.
    CVec solve(const CVec& rhs) const {
        const Eigen::Index n = v_.size();
        CVec b = CVec::Zero(n + 1);
        const CVec target = project(rhs);
        if (target.norm() == 0.0) {
            last_residual_ = 0;
            return CVec::Zero(n);
        }
        b.head(n) = target;
        const CVec sol = lu_.solve(b);
        CVec x = sol.head(n);
        const double res = (shifted_ * x - target).norm();
        last_residual_ = res;
        if (!(res <= 1e-10 * std::max(1.0, target.norm())))
            fail(ErrorKind::linear_solve, "reduced-resolvent residual " + std::to_string(res));
        return x;
    }

    /// (H - E) x for a coefficient vector.
    CVec apply_shifted(const CVec& x) const { return shifted_ * x; }
    double last_residual() const { return last_residual_; }

private:
    CVec v_;
    CMat shifted_;
    Eigen::PartialPivLU<CMat> lu_;
    mutable double last_residual_ = 0;
};

struct BandDerivatives {
    BlochEigenpair pair;
    Vec grad_E;
    Mat hess_E;
    std::vector<CVec> dk_chi;      ///< full derivative of the gauge-fixed coefficients
    std::vector<CVec> dk_chi_perp; ///< P_perp d_{k_j} chi (gauge covariant part)
    CVec berry;                    ///< <chi, d_{k_j} chi>, purely imaginary
    double gap = 0;                ///< distance to the neighbouring bands at k
};

inline constexpr double default_gap_tol = 1e-8;

/// Band energy derivatives and eigenvector derivatives at k for a simple band.
/// The gauge is `gauge` (dominant coefficient by default); the Berry connection is
/// the one of that gauge.
inline BandDerivatives band_derivatives(std::shared_ptr<const PlaneWaveBasis> basis, const FourierPotential& pot,
                                        const Vec& k, int m, const Gauge& gauge = Gauge::dominant(),
                                        const MultiIndex& shift = {}, double gap_tol = default_gap_tol) {
    require(m >= 1 && m < basis->size(), ErrorKind::invalid_argument, "band index out of range");
    const CMat h = build_bloch_hamiltonian(*basis, pot, k);
    auto pairs = solve_bands(h, basis, k, m + 1);
    const double width = std::max(1.0, pairs.back().energy - pairs.front().energy);
    double gap = pairs[static_cast<std::size_t>(m)].energy - pairs[static_cast<std::size_t>(m - 1)].energy;
    if (m >= 2)
        gap = std::min(gap, pairs[static_cast<std::size_t>(m - 1)].energy - pairs[static_cast<std::size_t>(m - 2)].energy);
    if (!(gap > gap_tol * width))
        fail(ErrorKind::degenerate_band, "band " + std::to_string(m) + " is not simple at k (gap " +
                                             std::to_string(gap) + ")");

    BandDerivatives out;
    BlochEigenpair pair = pairs[static_cast<std::size_t>(m - 1)];
    if (!shift.empty()) pair.shift = shift;
    pair = apply_gauge(pair, gauge);
    out.pair = pair;
    out.gap = gap;

    const int d = basis->dim();
    const CVec& c = pair.coeffs;
    ReducedResolvent resolvent(h, pair.energy, c);

    std::vector<CVec> dh_chi(static_cast<std::size_t>(d));
    out.grad_E.resize(d);
    for (int j = 0; j < d; ++j) {
        dh_chi[static_cast<std::size_t>(j)] = (basis->velocity_diagonal(k, j).array() * c.array()).matrix();
        out.grad_E[j] = basis->inner(c, dh_chi[static_cast<std::size_t>(j)]).real();
    }

    // gauge anchor position for the parallel component of d_k chi
    Eigen::Index anchor = detail::dominant_position(c);
    if (gauge.kind == Gauge::Kind::anchored) {
        MultiIndex local = gauge.anchor;
        for (std::size_t j = 0; j < local.size(); ++j) local[j] += pair.shift.empty() ? 0 : pair.shift[j];
        anchor = basis->position(local);
    }
    const double ca = c[anchor].real();

    out.berry.resize(d);
    for (int j = 0; j < d; ++j) {
        CVec x = resolvent.solve(-dh_chi[static_cast<std::size_t>(j)]);
        // <chi, x> = 0 exactly up to the constraint residual
        const cplx a = -I * (x[anchor].imag() / ca);
        out.berry[j] = a;
        out.dk_chi_perp.push_back(x);
        out.dk_chi.push_back(x + a * c);
    }

    out.hess_E.resize(d, d);
    for (int j = 0; j < d; ++j) {
        for (int l = 0; l < d; ++l) {
            const auto uj = static_cast<std::size_t>(j), ul = static_cast<std::size_t>(l);
            const CVec vj = (basis->velocity_diagonal(k, j).array() * out.dk_chi[ul].array()).matrix();
            const CVec vl = (basis->velocity_diagonal(k, l).array() * out.dk_chi[uj].array()).matrix();
            cplx val = (j == l ? 1.0 : 0.0);
            val += basis->inner(vj + vl, c);
            val -= basis->inner(out.grad_E[l] * out.dk_chi[uj] + out.grad_E[j] * out.dk_chi[ul], c);
            out.hess_E(j, l) = val.real();
        }
    }
    return out;
}

inline BandDerivatives band_derivatives(const LatticeSpec& lattice, const FourierPotential& pot, const Vec& k,
                                        int m, int cutoff, const Gauge& gauge = Gauge::dominant()) {
    return band_derivatives(std::make_shared<const PlaneWaveBasis>(lattice, cutoff), pot, k, m, gauge);
}

/// Smallest distance between E_m at the sample momenta and any other band over a
/// Brillouin-zone grid.
inline double gap_check(const LatticeSpec& lattice, const FourierPotential& pot, int m,
                        const std::vector<Vec>& k_samples, const std::vector<Vec>& bz_grid, int num_bands,
                        int cutoff) {
    require(num_bands > m && m >= 1, ErrorKind::invalid_argument, "gap_check needs num_bands > m");
    auto basis = std::make_shared<const PlaneWaveBasis>(lattice, cutoff);
    auto energies = [&](const Vec& k) {
        const auto pairs = solve_bands(build_bloch_hamiltonian(*basis, pot, k), basis, k, num_bands);
        Vec e(num_bands);
        for (int i = 0; i < num_bands; ++i) e[i] = pairs[static_cast<std::size_t>(i)].energy;
        return e;
    };
    std::vector<Vec> grid_e;
    grid_e.reserve(bz_grid.size());
    for (const Vec& k : bz_grid) grid_e.push_back(energies(k));
    double best = std::numeric_limits<double>::infinity();
    for (const Vec& ks : k_samples) {
        const double em = energies(ks)[m - 1];
        for (const Vec& e : grid_e)
            for (int n = 0; n < num_bands; ++n)
                if (n != m - 1) best = std::min(best, std::abs(em - e[n]));
    }
    return best;
}

inline double gap_check(const LatticeSpec& lattice, const FourierPotential& pot, int m,
                        const std::vector<Vec>& k_samples, int num_bands, int cutoff, int bz_points = 129) {
    return gap_check(lattice, pot, m, k_samples, lattice.brillouin_grid(bz_points), num_bands, cutoff);
}

/// Band data at one (unfolded) crystal momentum, in a smooth anchored gauge.
struct BandPoint {
    Vec k;         ///< unfolded momentum
    Vec k_folded;
    MultiIndex winding;
    double energy = 0;
    Vec grad_E;
    Mat hess_E;
    CVec berry;
    BlochEigenpair pair; ///< coefficients at k_folded, shift = winding
    std::vector<CVec> dk_chi_perp;
    double gap = 0;
};

/// Source of band data along trajectories.
class BandProvider {
public:
    virtual ~BandProvider() = default;
    virtual std::shared_ptr<const BandPoint> at(const Vec& k) const = 0;
    /// Hamiltonian matrix the point's coefficients diagonalize.
    virtual CMat hamiltonian(const BandPoint& point) const = 0;
    virtual const PlaneWaveBasis& basis() const = 0;
    virtual std::shared_ptr<const PlaneWaveBasis> basis_ptr() const = 0;
    const LatticeSpec& lattice() const { return basis().lattice(); }
    int dim() const { return basis().dim(); }
    double energy(const Vec& k) const { return at(k)->energy; }
};

/// Free dispersion E(k) = |k|^2 / 2 with constant eigenvector and no folding.
class FreeBand final : public BandProvider {
public:
    explicit FreeBand(const LatticeSpec& lattice, int cutoff = 1)
        : basis_(std::make_shared<const PlaneWaveBasis>(lattice, cutoff)) {}

    std::shared_ptr<const BandPoint> at(const Vec& k) const override {
        require(k.size() == dim() && k.allFinite(), ErrorKind::invalid_argument, "momentum must be a finite d-vector");
        auto bp = std::make_shared<BandPoint>();
        const int d = dim();
        bp->k = k;
        bp->k_folded = k;
        bp->winding = MultiIndex(static_cast<std::size_t>(d), 0);
        bp->energy = 0.5 * k.squaredNorm();
        bp->grad_E = k;
        bp->hess_E = Mat::Identity(d, d);
        bp->berry = CVec::Zero(d);
        BlochEigenpair& p = bp->pair;
        p.basis = basis_;
        p.k = k;
        p.band = 1;
        p.energy = bp->energy;
        p.coeffs = CVec::Zero(basis_->size());
        p.coeffs[basis_->position(MultiIndex(static_cast<std::size_t>(d), 0))] =
            1.0 / std::sqrt(basis_->lattice().cell_volume());
        p.shift = bp->winding;
        p.gauge_tag = "free";
        bp->dk_chi_perp.assign(static_cast<std::size_t>(d), CVec::Zero(basis_->size()));
        double gap = std::numeric_limits<double>::infinity();
        const Mat& g = basis_->reciprocal_vectors();
        for (Eigen::Index i = 0; i < basis_->size(); ++i) {
            const double e = 0.5 * (g.col(i) + k).squaredNorm();
            if (g.col(i).norm() > 0) gap = std::min(gap, std::abs(e - bp->energy));
        }
        bp->gap = gap;
        return bp;
    }

    CMat hamiltonian(const BandPoint& point) const override {
        return build_bloch_hamiltonian(*basis_, FourierPotential::zero(dim()), point.k);
    }
    const PlaneWaveBasis& basis() const override { return *basis_; }
    std::shared_ptr<const PlaneWaveBasis> basis_ptr() const override { return basis_; }

private:
    std::shared_ptr<const PlaneWaveBasis> basis_;
};

/// Memoizing band-data provider for one band along trajectories. Lookups fold k
/// into the Brillouin zone; the returned eigenvector represents chi at the
/// unfolded momentum through its shift. Safe for concurrent use.
class BandModel final : public BandProvider {
public:
    BandModel(LatticeSpec lattice, FourierPotential pot, int band, int cutoff, Gauge gauge = Gauge::dominant(),
              double gap_tol = default_gap_tol)
        : basis_(std::make_shared<const PlaneWaveBasis>(lattice, cutoff)), pot_(std::move(pot)), band_(band),
          gauge_(std::move(gauge)), gap_tol_(gap_tol) {
        require(pot_.dim() == lattice.dim(), ErrorKind::invalid_argument, "potential and lattice dimensions differ");
        require(cutoff >= pot_.cutoff(), ErrorKind::aliasing, "plane-wave cutoff below potential support");
        require(band >= 1 && band < basis_->size(), ErrorKind::invalid_argument, "band index out of range");
    }

    /// Gauge anchored at the dominant plane wave of the band at k0.
    static BandModel anchored_at(LatticeSpec lattice, FourierPotential pot, int band, int cutoff, const Vec& k0,
                                 double gap_tol = default_gap_tol) {
        BandModel probe(lattice, pot, band, cutoff, Gauge::dominant(), gap_tol);
        const auto bp = probe.at(k0);
        MultiIndex n = probe.basis_->index(detail::dominant_position(bp->pair.coeffs));
        for (std::size_t j = 0; j < n.size(); ++j) n[j] -= bp->winding[j];
        return BandModel(std::move(lattice), std::move(pot), band, cutoff, Gauge::anchored(n), gap_tol);
    }

    BandModel(const BandModel& other)
        : basis_(other.basis_), pot_(other.pot_), band_(other.band_), gauge_(other.gauge_), gap_tol_(other.gap_tol_) {}

    const PlaneWaveBasis& basis() const override { return *basis_; }
    std::shared_ptr<const PlaneWaveBasis> basis_ptr() const override { return basis_; }
    const FourierPotential& potential() const { return pot_; }
    int band() const { return band_; }
    const Gauge& gauge() const { return gauge_; }

    std::shared_ptr<const BandPoint> at(const Vec& k) const override {
        const auto folded = lattice().fold(k);
        std::vector<long long> key;
        for (Eigen::Index j = 0; j < folded.k.size(); ++j) key.push_back(std::llround(folded.k[j] * 1e12));
        for (int w : folded.winding) key.push_back(w);
        {
            std::lock_guard<std::mutex> lock(mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        auto bp = std::make_shared<const BandPoint>(compute(k, folded));
        std::lock_guard<std::mutex> lock(mutex_);
        if (cache_.size() >= max_cache_) cache_.clear();
        return cache_.emplace(std::move(key), std::move(bp)).first->second;
    }

    CMat hamiltonian(const BandPoint& point) const override {
        return build_bloch_hamiltonian(*basis_, pot_, point.k_folded);
    }

private:
    BandPoint compute(const Vec& k, const LatticeSpec::Folded& folded) const {
        const auto der = band_derivatives(basis_, pot_, folded.k, band_, gauge_, folded.winding, gap_tol_);
        BandPoint bp;
        bp.k = k;
        bp.k_folded = folded.k;
        bp.winding = folded.winding;
        bp.energy = der.pair.energy;
        bp.grad_E = der.grad_E;
        bp.hess_E = der.hess_E;
        bp.berry = der.berry;
        bp.pair = der.pair;
        bp.dk_chi_perp = der.dk_chi_perp;
        bp.gap = der.gap;
        return bp;
    }

    std::shared_ptr<const PlaneWaveBasis> basis_;
    FourierPotential pot_;
    int band_;
    Gauge gauge_;
    double gap_tol_;
    static constexpr std::size_t max_cache_ = 20000;
    mutable std::mutex mutex_;
    mutable std::map<std::vector<long long>, std::shared_ptr<const BandPoint>> cache_;
};

} // namespace blochwp
