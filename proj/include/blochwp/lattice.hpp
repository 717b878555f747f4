#pragma once

#include "core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <sstream>

namespace blochwp {

/// Lattice Gamma generated by the columns of `basis`, with the 2*pi-dual
/// lattice generated by the columns of `dual`.
class LatticeSpec {
public:
    explicit LatticeSpec(Mat basis) : basis_(std::move(basis)) {
        require(basis_.rows() >= 1 && basis_.rows() == basis_.cols(),
                ErrorKind::invalid_argument, "lattice basis must be a square d x d matrix");
        require(basis_.allFinite(), ErrorKind::invalid_argument, "lattice basis is not finite");
        const Mat gram = basis_.transpose() * basis_;
        require(std::abs(gram.determinant()) > 1e-24 * gram.diagonal().prod(),
                ErrorKind::invalid_argument, "lattice basis vectors are linearly dependent");
        dual_ = 2.0 * pi * basis_.transpose().inverse();
        volume_ = std::abs(basis_.determinant());
        const Mat check = basis_.transpose() * dual_ - 2.0 * pi * Mat::Identity(dim(), dim());
        require(check.norm() <= 1e-12 * 2.0 * pi * dim(), ErrorKind::invalid_argument,
                "dual basis fails the 2*pi duality relation");
    }

    /// Simple cubic lattice a*Z^d.
    static LatticeSpec cubic(int d, double a = 2.0 * pi) {
        require(d >= 1, ErrorKind::invalid_argument, "dimension must be >= 1");
        require(a > 0, ErrorKind::invalid_argument, "lattice constant must be positive");
        return LatticeSpec(a * Mat::Identity(d, d));
    }

    int dim() const { return static_cast<int>(basis_.rows()); }
    const Mat& basis() const { return basis_; }
    const Mat& dual_basis() const { return dual_; }
    double cell_volume() const { return volume_; }

    /// Dual lattice vector G_n.
    Vec reciprocal(const MultiIndex& n) const {
        Vec g = Vec::Zero(dim());
        for (int j = 0; j < dim(); ++j) g += static_cast<double>(n[j]) * dual_.col(j);
        return g;
    }

    /// Fractional coordinates of k in the dual basis.
    Vec dual_coordinates(const Vec& k) const { return dual_.colPivHouseholderQr().solve(k); }

    struct Folded {
        Vec k;              ///< representative in the centered Brillouin zone
        MultiIndex winding; ///< k_unfolded = k + G_winding
    };

    Folded fold(const Vec& k) const {
        require(k.size() == dim() && k.allFinite(), ErrorKind::invalid_argument,
                "crystal momentum must be a finite d-vector");
        const Vec s = dual_coordinates(k);
        MultiIndex w(dim());
        for (int j = 0; j < dim(); ++j) w[j] = static_cast<int>(std::floor(s[j] + 0.5));
        return {k - reciprocal(w), w};
    }

    /// Uniform grid over the closed centered Brillouin zone, `per_axis` points per axis.
    std::vector<Vec> brillouin_grid(int per_axis) const {
        require(per_axis >= 1, ErrorKind::invalid_argument, "Brillouin grid needs >= 1 point per axis");
        std::vector<Vec> out;
        std::vector<int> idx(dim(), 0);
        for (;;) {
            Vec s(dim());
            for (int j = 0; j < dim(); ++j)
                s[j] = per_axis == 1 ? 0.0 : -0.5 + static_cast<double>(idx[j]) / (per_axis - 1);
            out.push_back(dual_ * s);
            int j = dim() - 1;
            while (j >= 0 && ++idx[j] == per_axis) idx[j--] = 0;
            if (j < 0) break;
        }
        return out;
    }

private:
    Mat basis_;
    Mat dual_;
    double volume_ = 0;
};

/// Real Gamma-periodic potential given by its Fourier coefficients,
/// V(y) = sum_n c_n exp(i <G_n, y>).
class FourierPotential {
public:
    using Coeffs = std::map<MultiIndex, cplx>;

    FourierPotential(int dim, Coeffs coeffs) : dim_(dim), coeffs_(std::move(coeffs)) {
        require(dim_ >= 1, ErrorKind::invalid_argument, "potential dimension must be >= 1");
        for (const auto& [n, c] : coeffs_) {
            require(static_cast<int>(n.size()) == dim_, ErrorKind::invalid_argument,
                    "potential multi-index has wrong dimension");
            require(std::isfinite(c.real()) && std::isfinite(c.imag()), ErrorKind::invalid_argument,
                    "potential coefficient is not finite");
            MultiIndex neg(n);
            for (auto& v : neg) v = -v;
            const cplx partner = coefficient(neg);
            require(std::abs(partner - std::conj(c)) <= 1e-12 * std::max(1.0, std::abs(c)),
                    ErrorKind::invalid_argument, "potential coefficients are not Hermitian symmetric");
            for (int v : n) cutoff_ = std::max(cutoff_, std::abs(v));
        }
    }

    static FourierPotential zero(int dim) { return FourierPotential(dim, {}); }

    /// amplitude * cos(y) on a one-dimensional lattice.
    static FourierPotential cosine(double amplitude) {
        return FourierPotential(1, {{{1}, cplx(amplitude / 2)}, {{-1}, cplx(amplitude / 2)}});
    }

    int dim() const { return dim_; }
    int cutoff() const { return cutoff_; }
    const Coeffs& coeffs() const { return coeffs_; }

    cplx coefficient(const MultiIndex& n) const {
        const auto it = coeffs_.find(n);
        return it == coeffs_.end() ? cplx{} : it->second;
    }

    double operator()(const LatticeSpec& lattice, const Vec& y) const {
        cplx v{};
        for (const auto& [n, c] : coeffs_) v += c * std::exp(I * lattice.reciprocal(n).dot(y));
        return v.real();
    }

private:
    int dim_;
    Coeffs coeffs_;
    int cutoff_ = 0;
};

/// Plane waves exp(i <G_n, y>) with |n|_inf <= cutoff, enumerated lexicographically.
class PlaneWaveBasis {
public:
    PlaneWaveBasis(const LatticeSpec& lattice, int cutoff) : lattice_(lattice), cutoff_(cutoff) {
        require(cutoff >= 0, ErrorKind::invalid_argument, "plane-wave cutoff must be >= 0");
        const int d = lattice.dim();
        const int side = 2 * cutoff + 1;
        std::size_t total = 1;
        for (int j = 0; j < d; ++j) total *= static_cast<std::size_t>(side);
        require(total <= 20000, ErrorKind::invalid_argument, "plane-wave basis too large");
        indices_.reserve(total);
        MultiIndex n(d, -cutoff);
        for (;;) {
            indices_.push_back(n);
            int j = d - 1;
            while (j >= 0 && ++n[j] > cutoff) n[j--] = -cutoff;
            if (j < 0) break;
        }
        g_.resize(d, static_cast<Eigen::Index>(indices_.size()));
        for (std::size_t i = 0; i < indices_.size(); ++i) g_.col(static_cast<Eigen::Index>(i)) = lattice.reciprocal(indices_[i]);
    }

    const LatticeSpec& lattice() const { return lattice_; }
    int cutoff() const { return cutoff_; }
    int dim() const { return lattice_.dim(); }
    Eigen::Index size() const { return static_cast<Eigen::Index>(indices_.size()); }
    const MultiIndex& index(Eigen::Index i) const { return indices_[static_cast<std::size_t>(i)]; }
    const std::vector<MultiIndex>& indices() const { return indices_; }
    /// Column i holds G_n for the i-th plane wave.
    const Mat& reciprocal_vectors() const { return g_; }

    /// Position of multi-index n, or -1 if outside the truncation.
    Eigen::Index position(const MultiIndex& n) const {
        Eigen::Index pos = 0;
        const int side = 2 * cutoff_ + 1;
        for (int j = 0; j < dim(); ++j) {
            if (std::abs(n[j]) > cutoff_) return -1;
            pos = pos * side + (n[j] + cutoff_);
        }
        return pos;
    }

    /// L^2(Y) inner product of two coefficient vectors.
    cplx inner(const CVec& a, const CVec& b) const { return lattice_.cell_volume() * a.dot(b); }
    double norm(const CVec& a) const { return std::sqrt(lattice_.cell_volume()) * a.norm(); }

    /// Diagonal of the k-derivative of H(k) along axis j: (G_n + k)_j.
    Vec velocity_diagonal(const Vec& k, int j) const {
        return (g_.row(j).transpose().array() + k[j]).matrix();
    }

private:
    LatticeSpec lattice_;
    int cutoff_;
    std::vector<MultiIndex> indices_;
    Mat g_;
};

/// H(k) = 1/2 (-i grad_y + k)^2 + V_Gamma(y) in the plane-wave basis.
inline CMat build_bloch_hamiltonian(const PlaneWaveBasis& basis, const FourierPotential& pot, const Vec& k) {
    require(pot.dim() == basis.dim(), ErrorKind::invalid_argument, "potential and lattice dimensions differ");
    require(k.size() == basis.dim() && k.allFinite(), ErrorKind::invalid_argument,
            "crystal momentum must be a finite d-vector");
    require(basis.cutoff() >= pot.cutoff(), ErrorKind::aliasing,
            "plane-wave cutoff " + std::to_string(basis.cutoff()) +
                " is below the potential support " + std::to_string(pot.cutoff()));
    const Eigen::Index n = basis.size();
    CMat h = CMat::Zero(n, n);
    const Mat& g = basis.reciprocal_vectors();
    for (Eigen::Index i = 0; i < n; ++i) h(i, i) = 0.5 * (g.col(i) + k).squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (const auto& [m, c] : pot.coeffs()) {
            MultiIndex target = basis.index(i);
            for (std::size_t j = 0; j < target.size(); ++j) target[j] -= m[j];
            const Eigen::Index col = basis.position(target);
            if (col >= 0) h(i, col) += c;
        }
    }
    return h;
}

inline CMat build_bloch_hamiltonian(const LatticeSpec& lattice, const FourierPotential& pot, const Vec& k, int cutoff) {
    return build_bloch_hamiltonian(PlaneWaveBasis(lattice, cutoff), pot, k);
}

} // namespace blochwp
