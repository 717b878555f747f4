#pragma once

#include "core.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace blochwp {

/// Slowly varying external potential V(x) with bounded second and third derivatives.
class ExternalPotential {
public:
    virtual ~ExternalPotential() = default;
    virtual int dim() const = 0;
    virtual double value(const Vec& x) const = 0;
    virtual Vec gradient(const Vec& x) const = 0;
    virtual Mat hessian(const Vec& x) const = 0;
    /// Declared sup-norm bounds on the second and third derivatives.
    virtual double hessian_bound() const = 0;
    virtual double third_derivative_bound() const = 0;
    virtual std::string kind() const = 0;

    double operator()(const Vec& x) const { return value(x); }
};

/// V(x) = c + <b, x> + 1/2 <x, H x>.
class QuadraticPotential final : public ExternalPotential {
public:
    QuadraticPotential(double constant, Vec linear, Mat hessian)
        : c_(constant), b_(std::move(linear)), h_(std::move(hessian)) {
        require(b_.size() >= 1 && h_.rows() == b_.size() && h_.cols() == b_.size(), ErrorKind::invalid_argument,
                "quadratic potential: inconsistent dimensions");
        require(std::isfinite(c_) && b_.allFinite() && h_.allFinite(), ErrorKind::invalid_argument,
                "quadratic potential: non-finite coefficients");
        require((h_ - h_.transpose()).norm() <= 1e-12 * std::max(1.0, h_.norm()), ErrorKind::invalid_argument,
                "quadratic potential: Hessian must be symmetric");
    }

    static std::shared_ptr<QuadraticPotential> zero(int d) {
        return std::make_shared<QuadraticPotential>(0.0, Vec::Zero(d), Mat::Zero(d, d));
    }
    /// omega^2 |x|^2 / 2
    static std::shared_ptr<QuadraticPotential> harmonic(int d, double omega = 1.0) {
        return std::make_shared<QuadraticPotential>(0.0, Vec::Zero(d), omega * omega * Mat::Identity(d, d));
    }

    int dim() const override { return static_cast<int>(b_.size()); }
    double value(const Vec& x) const override { return c_ + b_.dot(x) + 0.5 * x.dot(h_ * x); }
    Vec gradient(const Vec& x) const override { return b_ + h_ * x; }
    Mat hessian(const Vec&) const override { return h_; }
    double hessian_bound() const override { return h_.norm(); }
    double third_derivative_bound() const override { return 0.0; }
    std::string kind() const override { return "quadratic"; }

    double constant() const { return c_; }
    const Vec& linear() const { return b_; }
    const Mat& matrix() const { return h_; }

private:
    double c_;
    Vec b_;
    Mat h_;
};

/// V(x) = a (1 - cos <w, x>): bounded with all derivatives.
class CosineWell final : public ExternalPotential {
public:
    CosineWell(double amplitude, Vec wavevector) : a_(amplitude), w_(std::move(wavevector)) {
        require(w_.size() >= 1 && std::isfinite(a_) && w_.allFinite(), ErrorKind::invalid_argument,
                "cosine well: invalid coefficients");
    }

    int dim() const override { return static_cast<int>(w_.size()); }
    double value(const Vec& x) const override { return a_ * (1.0 - std::cos(w_.dot(x))); }
    Vec gradient(const Vec& x) const override { return a_ * std::sin(w_.dot(x)) * w_; }
    Mat hessian(const Vec& x) const override { return a_ * std::cos(w_.dot(x)) * (w_ * w_.transpose()); }
    double hessian_bound() const override { return std::abs(a_) * w_.squaredNorm(); }
    double third_derivative_bound() const override { return std::abs(a_) * std::pow(w_.norm(), 3); }
    std::string kind() const override { return "cosine-well"; }

    double amplitude() const { return a_; }
    const Vec& wavevector() const { return w_; }

private:
    double a_;
    Vec w_;
};

/// Largest deviation between the analytic gradient and centered differences of V
/// over the probe points.
inline double gradient_consistency(const ExternalPotential& v, const std::vector<Vec>& probes, double h = 1e-4) {
    double worst = 0;
    for (const Vec& x : probes) {
        const Vec g = v.gradient(x);
        for (int j = 0; j < v.dim(); ++j) {
            Vec xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            worst = std::max(worst, std::abs((v.value(xp) - v.value(xm)) / (2 * h) - g[j]));
        }
    }
    return worst;
}

} // namespace blochwp
