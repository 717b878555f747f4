#pragma once

#include "flow.hpp"
#include "grid.hpp"

#include <Eigen/Eigenvalues>

#include <functional>

namespace blochwp {

/// Coefficients of the envelope equation at one time: effective mass tensor M,
/// external curvature Q and the (imaginary) Berry term beta.
struct CoefficientSample {
    Mat M;
    Mat Q;
    cplx beta{};
};

/// Time-dependent envelope coefficients, either sampled on a uniform grid (cubic
/// Lagrange interpolation, exact at the samples) or given analytically.
class HomogenizedCoefficients {
public:
    using Fn = std::function<CoefficientSample(double)>;

    HomogenizedCoefficients(Fn fn, double t_min, double t_max) : fn_(std::move(fn)), t_min_(t_min), t_max_(t_max) {}

    HomogenizedCoefficients(double t0, double h, std::vector<CoefficientSample> samples)
        : t_min_(std::min(t0, t0 + h * static_cast<double>(samples.size() - 1))),
          t_max_(std::max(t0, t0 + h * static_cast<double>(samples.size() - 1))), t0_(t0), h_(h),
          samples_(std::move(samples)) {
        require(!samples_.empty() && (samples_.size() == 1 || h_ != 0.0), ErrorKind::invalid_argument,
                "coefficient samples need a nonzero spacing");
    }

    static HomogenizedCoefficients constant(Mat M, Mat Q, cplx beta = {}) {
        CoefficientSample s{std::move(M), std::move(Q), beta};
        return HomogenizedCoefficients([s](double) { return s; }, -std::numeric_limits<double>::infinity(),
                                       std::numeric_limits<double>::infinity());
    }

    int dim() const { return static_cast<int>(at(std::clamp(0.0, t_min_, t_max_)).M.rows()); }
    double t_min() const { return t_min_; }
    double t_max() const { return t_max_; }
    const std::vector<CoefficientSample>& samples() const { return samples_; }

    CoefficientSample at(double t) const {
        const double slack = 1e-9 * std::max(1.0, std::abs(t));
        require(t >= t_min_ - slack && t <= t_max_ + slack, ErrorKind::out_of_range,
                "coefficients requested outside their time range");
        if (fn_) return fn_(t);
        if (samples_.size() == 1) return samples_.front();
        const double s = (t - t0_) / h_;
        const auto last = static_cast<long>(samples_.size()) - 1;
        const long i = std::clamp(static_cast<long>(std::floor(s)), 0L, last - 1);
        const double r = s - static_cast<double>(i);
        if (r == 0.0) return samples_[static_cast<std::size_t>(i)];
        long lo = std::clamp(i - 1, 0L, std::max(0L, last - 3));
        const long hi = std::min(lo + 3, last);
        lo = std::max(0L, hi - 3);
        CoefficientSample out{Mat::Zero(samples_[0].M.rows(), samples_[0].M.cols()),
                              Mat::Zero(samples_[0].Q.rows(), samples_[0].Q.cols()), cplx{}};
        for (long a = lo; a <= hi; ++a) {
            double w = 1.0;
            for (long b = lo; b <= hi; ++b)
                if (b != a) w *= (s - static_cast<double>(b)) / static_cast<double>(a - b);
            const auto& smp = samples_[static_cast<std::size_t>(a)];
            out.M += w * smp.M;
            out.Q += w * smp.Q;
            out.beta += w * smp.beta;
        }
        return out;
    }

private:
    Fn fn_;
    double t_min_ = 0, t_max_ = 0;
    double t0_ = 0, h_ = 0;
    std::vector<CoefficientSample> samples_;
};

/// Envelope coefficients along a trajectory, sampled at the nodes and the
/// interval midpoints.
inline HomogenizedCoefficients coefficients_along(const Trajectory& traj, const BandProvider& band,
                                                  const ExternalPotential& v) {
    std::vector<CoefficientSample> samples;
    const auto& nodes = traj.states();
    const std::size_t n = nodes.size();
    auto sample = [&](const TrajectoryState& s) {
        const auto bp = band.at(s.p);
        const Vec gv = v.gradient(s.q);
        CoefficientSample c;
        c.M = bp->hess_E;
        c.Q = v.hessian(s.q);
        c.beta = bp->berry.transpose() * gv.cast<cplx>();
        return c;
    };
    samples.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        samples.push_back(sample(nodes[i]));
        if (i + 1 < n) samples.push_back(sample(traj.at(0.5 * (nodes[i].t + nodes[i + 1].t))));
    }
    const double h = n > 1 ? 0.5 * (nodes[1].t - nodes[0].t) : 0.0;
    return HomogenizedCoefficients(nodes.front().t, h, std::move(samples));
}

// ---------------------------------------------------------------------------
// Gaussian envelopes

/// u(z) = det(A)^{-1/2} exp(-1/2 <z, B A^{-1} z>) exp(berry_integral), with the
/// square-root branch carried by a continuously tracked log det A.
struct GaussianEnvelope {
    CMat A;
    CMat B;
    cplx log_det{};
    cplx berry_integral{};
    double t = 0;

    int dim() const { return static_cast<int>(A.rows()); }
    CMat width() const { return B * A.inverse(); }
};

struct GaussianDefects {
    double min_singular = 0; ///< smallest singular value of A and B
    double symmetry = 0;     ///< |BA^{-1} - (BA^{-1})^T|
    double min_real_eig = 0; ///< smallest eigenvalue of Re BA^{-1}
    double inverse_relation = 0; ///< |(Re BA^{-1})^{-1} - A A^*|

    /// All four conditions hold to `tol`.
    bool ok(double tol) const {
        return min_singular > tol && symmetry <= tol && min_real_eig > tol && inverse_relation <= tol;
    }
    std::string first_failure(double tol) const {
        if (!(min_singular > tol)) return "A and B invertible";
        if (!(symmetry <= tol)) return "B A^-1 symmetric";
        if (!(min_real_eig > tol)) return "Re B A^-1 positive definite";
        if (!(inverse_relation <= tol)) return "(Re B A^-1)^-1 = A A^*";
        return "";
    }
};

inline GaussianDefects gaussian_defects(const CMat& A, const CMat& B) {
    GaussianDefects d;
    Eigen::JacobiSVD<CMat> sa(A), sb(B);
    d.min_singular = std::min(sa.singularValues().minCoeff(), sb.singularValues().minCoeff());
    if (!(d.min_singular > 0)) return d;
    const CMat w = B * A.inverse();
    d.symmetry = (w - w.transpose()).norm();
    const Mat re = 0.5 * (w.real() + w.real().transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(re);
    d.min_real_eig = es.eigenvalues().minCoeff();
    if (d.min_real_eig > 0) d.inverse_relation = (re.inverse().cast<cplx>() - A * A.adjoint()).norm();
    else d.inverse_relation = std::numeric_limits<double>::infinity();
    return d;
}

inline GaussianDefects gaussian_defects(const GaussianEnvelope& env) { return gaussian_defects(env.A, env.B); }

inline GaussianEnvelope gaussian_init(const CMat& A, const CMat& B, double tol = 1e-10) {
    require(A.rows() >= 1 && A.rows() == A.cols() && B.rows() == A.rows() && B.cols() == A.cols(),
            ErrorKind::invalid_argument, "A and B must be square matrices of equal size");
    const auto d = gaussian_defects(A, B);
    require(d.ok(tol), ErrorKind::invalid_argument, "Gaussian data violate: " + d.first_failure(tol));
    GaussianEnvelope env;
    env.A = A;
    env.B = B;
    env.log_det = std::log(A.determinant());
    return env;
}

/// RK4 for A' = i M B, B' = i Q A, (log det A)' = tr(A^{-1} A'), (int beta)' = beta.
inline GaussianEnvelope evolve_gaussian(const GaussianEnvelope& env, const HomogenizedCoefficients& coeffs,
                                        double t0, double t1, double dt, double tol = 1e-8) {
    require(dt > 0, ErrorKind::invalid_argument, "time step must be positive");
    const auto steps = static_cast<std::size_t>(std::max(0.0, std::ceil(std::abs(t1 - t0) / dt - 1e-9)));
    GaussianEnvelope out = env;
    out.t = t0;
    if (steps == 0) {
        out.t = t1;
        return out;
    }
    const double h = (t1 - t0) / static_cast<double>(steps);
    struct Rate {
        CMat dA, dB;
        cplx dL, dI;
    };
    auto rate = [&](double t, const CMat& A, const CMat& B) {
        const auto c = coeffs.at(t);
        Rate r;
        r.dA = I * c.M.cast<cplx>() * B;
        r.dB = I * c.Q.cast<cplx>() * A;
        r.dL = A.partialPivLu().solve(r.dA).trace();
        r.dI = c.beta;
        return r;
    };
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = t0 + h * static_cast<double>(i);
        const Rate k1 = rate(t, out.A, out.B);
        const Rate k2 = rate(t + h / 2, out.A + h / 2 * k1.dA, out.B + h / 2 * k1.dB);
        const Rate k3 = rate(t + h / 2, out.A + h / 2 * k2.dA, out.B + h / 2 * k2.dB);
        const Rate k4 = rate(t + h, out.A + h * k3.dA, out.B + h * k3.dB);
        out.A += h / 6 * (k1.dA + 2.0 * k2.dA + 2.0 * k3.dA + k4.dA);
        out.B += h / 6 * (k1.dB + 2.0 * k2.dB + 2.0 * k3.dB + k4.dB);
        out.log_det += h / 6 * (k1.dL + 2.0 * k2.dL + 2.0 * k3.dL + k4.dL);
        out.berry_integral += h / 6 * (k1.dI + 2.0 * k2.dI + 2.0 * k3.dI + k4.dI);
    }
    out.t = t1;
    const auto d = gaussian_defects(out);
    require(d.ok(tol), ErrorKind::invariant_drift, "Gaussian invariants drifted (" + d.first_failure(tol) + "); reduce dt");
    return out;
}

inline cplx gaussian_eval(const GaussianEnvelope& env, const CMat& width, const Vec& z) {
    const CVec zc = z.cast<cplx>();
    const cplx quad = zc.transpose() * width * zc;
    return std::exp(-0.5 * env.log_det - 0.5 * quad + env.berry_integral);
}

inline std::vector<cplx> gaussian_eval(const GaussianEnvelope& env, const std::vector<Vec>& z_points) {
    const CMat w = env.width();
    std::vector<cplx> out;
    out.reserve(z_points.size());
    for (const Vec& z : z_points) out.push_back(gaussian_eval(env, w, z));
    return out;
}

/// Exact du/dt of the Gaussian envelope from the coefficient values at its time.
inline cplx gaussian_time_derivative(const GaussianEnvelope& env, const CoefficientSample& c, const Vec& z) {
    const CMat ainv = env.A.inverse();
    const CMat dA = I * c.M.cast<cplx>() * env.B;
    const CMat dB = I * c.Q.cast<cplx>() * env.A;
    const cplx dL = (ainv * dA).trace();
    const CMat dW = dB * ainv - env.B * ainv * dA * ainv;
    const CVec zc = z.cast<cplx>();
    const cplx dquad = zc.transpose() * dW * zc;
    return gaussian_eval(env, env.width(), z) * (-0.5 * dL - 0.5 * dquad + c.beta);
}

// ---------------------------------------------------------------------------
// Grid envelopes

struct GridEnvelope {
    PeriodicGrid grid;
    double t = 0;
    std::vector<cplx> values;

    double norm() const { return l2_norm(grid, values); }
};

inline GridEnvelope sample_envelope(const PeriodicGrid& grid, const GaussianEnvelope& env) {
    grid.validate();
    require(grid.dim == env.dim(), ErrorKind::invalid_argument, "grid and Gaussian dimensions differ");
    GridEnvelope u{grid, env.t, {}};
    const CMat w = env.width();
    u.values = sample_on(grid, [&](const Vec& z) { return gaussian_eval(env, w, z); });
    return u;
}

struct GridPropagationOptions {
    double boundary_threshold = 1e-8; ///< allowed mass fraction in the outer 10% shell
};

/// Strang splitting for i u_t = -1/2 div(M grad u) + 1/2 <z, Q z> u - i beta u with
/// M and Q frozen at each step midpoint; beta enters as the exact factor exp(int beta).
inline GridEnvelope evolve_grid_envelope(const GridEnvelope& u, const HomogenizedCoefficients& coeffs, double t0,
                                         double t1, double dt, const GridPropagationOptions& opt = {}) {
    require(dt > 0, ErrorKind::invalid_argument, "time step must be positive");
    const PeriodicGrid& g = u.grid;
    g.validate();
    require(u.values.size() == g.size(), ErrorKind::grid_mismatch, "envelope samples do not match the grid");
    auto check_boundary = [&](const std::vector<cplx>& v, double t) {
        const double f = boundary_mass_fraction(g, v);
        require(f <= opt.boundary_threshold, ErrorKind::boundary_mass,
                "envelope mass fraction " + std::to_string(f) + " near the box boundary at t = " +
                    std::to_string(t) + "; enlarge L_z");
    };
    check_boundary(u.values, t0);

    const auto steps = static_cast<std::size_t>(std::max(0.0, std::ceil(std::abs(t1 - t0) / dt - 1e-9)));
    GridEnvelope out = u;
    out.t = t1;
    if (steps == 0) return out;
    const double h = (t1 - t0) / static_cast<double>(steps);

    const std::size_t n = g.size();
    std::vector<Vec> z(n), zeta(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = g.point(i);
        zeta[i] = g.frequency(i);
    }
    FourierTransform fft(g.shape());
    std::vector<cplx>& w = out.values;
    for (std::size_t s = 0; s < steps; ++s) {
        const double ta = t0 + h * static_cast<double>(s);
        const double tm = ta + h / 2;
        const auto c = coeffs.at(tm);
        // Simpson for int beta over the step
        const cplx bint = h / 6 * (coeffs.at(ta).beta + 4.0 * c.beta + coeffs.at(ta + h).beta);
        for (std::size_t i = 0; i < n; ++i) w[i] *= std::exp(-I * (0.25 * h * z[i].dot(c.Q * z[i])));
        fft.forward(w);
        for (std::size_t i = 0; i < n; ++i) w[i] *= std::exp(-I * (0.5 * h * zeta[i].dot(c.M * zeta[i])));
        fft.backward(w);
        const cplx berry = std::exp(bint);
        for (std::size_t i = 0; i < n; ++i) w[i] *= std::exp(-I * (0.25 * h * z[i].dot(c.Q * z[i]))) * berry;
    }
    check_boundary(w, t1);
    return out;
}

/// Centered time derivative of a grid envelope at its time: fine-step propagation to
/// t +- h and t +- h/2, combined by Richardson extrapolation.
inline std::vector<cplx> grid_envelope_rate(const GridEnvelope& u, const HomogenizedCoefficients& coeffs, double h,
                                            double fine_dt) {
    auto at = [&](double s) { return evolve_grid_envelope(u, coeffs, u.t, u.t + s, fine_dt).values; };
    const auto p1 = at(h), m1 = at(-h), p2 = at(h / 2), m2 = at(-h / 2);
    std::vector<cplx> out(u.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const cplx d1 = (p1[i] - m1[i]) / (2 * h);
        const cplx d2 = (p2[i] - m2[i]) / h;
        out[i] = (4.0 * d2 - d1) / 3.0;
    }
    return out;
}

/// Weighted Sobolev norm sum_{|a|+|b|<=k} |z^a d^b u|_{L^2}.
inline double sigma_norm(const GridEnvelope& u, int k, double tail_tol = 1e-10) {
    require(k >= 0 && k <= 5, ErrorKind::invalid_argument, "Sigma^k norms are supported for 0 <= k <= 5");
    const PeriodicGrid& g = u.grid;
    g.validate();
    const int d = g.dim;

    // spectral and spatial tails weighted by the requested order
    {
        std::vector<cplx> w = u.values;
        FourierTransform fft(g.shape());
        fft.forward(w);
        const double zmax = pi / g.spacing();
        double total = 0, tail = 0, ztotal = 0, ztail = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Vec f = g.frequency(i);
            const double weight = std::norm(w[i]) * std::pow(1.0 + f.squaredNorm(), k);
            total += weight;
            if (f.cwiseAbs().maxCoeff() > 0.8 * zmax) tail += weight;
            const Vec z = g.point(i);
            const double zw = std::norm(u.values[i]) * std::pow(1.0 + z.squaredNorm(), k);
            ztotal += zw;
            if (z.cwiseAbs().maxCoeff() > 0.9 * g.half_width) ztail += zw;
        }
        require(total == 0 || (tail <= tail_tol * total && ztail <= tail_tol * ztotal), ErrorKind::spectral_tail,
                "envelope is not resolved well enough for the Sigma^" + std::to_string(k) + " norm");
    }

    // all multi-indices with |a| + |b| <= k
    std::vector<std::vector<int>> multi;
    std::vector<int> cur(static_cast<std::size_t>(2 * d), 0);
    std::function<void(int, int)> rec = [&](int pos, int budget) {
        if (pos == 2 * d) {
            multi.push_back(cur);
            return;
        }
        for (int e = 0; e <= budget; ++e) {
            cur[static_cast<std::size_t>(pos)] = e;
            rec(pos + 1, budget - e);
        }
        cur[static_cast<std::size_t>(pos)] = 0;
    };
    rec(0, k);

    FourierTransform fft(g.shape());
    double sum = 0;
    for (const auto& mi : multi) {
        const std::vector<int> alpha(mi.begin(), mi.begin() + d), beta(mi.begin() + d, mi.end());
        std::vector<cplx> w = spectral_derivative(g, u.values, beta, &fft);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Vec z = g.point(i);
            double m = 1.0;
            for (int j = 0; j < d; ++j) m *= std::pow(z[j], alpha[static_cast<std::size_t>(j)]);
            w[i] *= m;
        }
        sum += l2_norm(g, w);
    }
    return sum;
}

} // namespace blochwp
