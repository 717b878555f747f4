#pragma once

#include "../potential.hpp"
#include "../lattice.hpp"
#include "../grid.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>

namespace blochwp {

using nlohmann::json;

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds{"bands",     "flow",        "envelope", "packet",
                                                "reference", "convergence", "ehrenfest"};
    return kinds;
}

struct PotentialSpec {
    std::string kind = "quadratic"; ///< "quadratic" or "cosine-well"
    double constant = 0;
    Vec linear = Vec::Zero(1);
    Mat hessian = Mat::Identity(1, 1);
    double amplitude = 0;            ///< cosine-well
    Vec wavevector = Vec::Zero(1);   ///< cosine-well
};

struct EnvelopeSpec {
    std::string kind = "gaussian"; ///< "gaussian" or "sampled"
    CMat A = CMat::Identity(1, 1);
    CMat B = CMat::Identity(1, 1);
    std::vector<cplx> samples;     ///< sampled profile on the envelope grid (d = 1)
};

struct ExperimentConfig {
    std::string experiment = "convergence";
    Mat lattice_basis = Mat::Constant(1, 1, 2 * pi);
    std::map<MultiIndex, cplx> lattice_potential{{{1}, 0.5}, {{-1}, 0.5}};
    PotentialSpec potential;
    int band = 1;
    int num_bands = 4;
    int cutoff = 12;
    bool free_band = false;
    Vec q0 = Vec::Zero(1);
    Vec p0 = Vec::Constant(1, 0.3);
    EnvelopeSpec envelope;
    std::vector<double> epsilons{1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
    double T = 1.0;
    std::vector<double> times{1.0};
    double flow_dt = 1e-3;
    double envelope_dt = 1e-3;
    double reference_dt_factor = 0.01;
    PeriodicGrid envelope_grid{1, 16.0, 512};
    double physical_half_width = pi;
    int points_per_period = 32;
    int k_points = 65;
    std::string comparison = "phi";     ///< convergence target: "phi", "app" or "residual"
    std::string initial_data = "phi";   ///< "phi" (theorem data) or "app" (well-prepared data)
    double residual_time = 0.5;
    double residual_delta = 0.1;        ///< residual time offset as a fraction of epsilon
    std::vector<double> C0{0.1};
    std::string output = "out";

    int dim() const { return static_cast<int>(lattice_basis.rows()); }
};

// ---------------------------------------------------------------------------
// JSON conversion

namespace detail {

inline json to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline json to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vec(m.row(i).transpose())));
    return rows;
}
inline json to_json(const CMat& m) { return {{"re", to_json(Mat(m.real()))}, {"im", to_json(Mat(m.imag()))}}; }

inline Vec vec_from(const json& j, const std::string& what) {
    if (!j.is_array()) fail(ErrorKind::config, what + " must be an array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) fail(ErrorKind::config, what + " must be an array of numbers");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline Mat mat_from(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) fail(ErrorKind::config, what + " must be a nonempty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    Mat m;
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Vec r = vec_from(j[static_cast<std::size_t>(i)], what);
        if (i == 0) m.resize(rows, r.size());
        if (r.size() != m.cols()) fail(ErrorKind::config, what + " has rows of different length");
        m.row(i) = r.transpose();
    }
    return m;
}

inline CMat cmat_from(const json& j, const std::string& what) {
    if (j.is_number()) return CMat::Constant(1, 1, j.get<double>());
    if (j.is_array()) return mat_from(j, what).cast<cplx>();
    if (!j.is_object() || !j.contains("re")) fail(ErrorKind::config, what + " must be a matrix or {re, im}");
    const Mat re = mat_from(j.at("re"), what + ".re");
    const Mat im = j.contains("im") ? mat_from(j.at("im"), what + ".im") : Mat::Zero(re.rows(), re.cols());
    if (im.rows() != re.rows() || im.cols() != re.cols()) fail(ErrorKind::config, what + " re/im shapes differ");
    CMat out(re.rows(), re.cols());
    out.real() = re;
    out.imag() = im;
    return out;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorKind::config, std::string("field '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) fail(ErrorKind::config, "unknown field '" + key + "' in " + where);
    }
}

} // namespace detail

inline json to_json(const ExperimentConfig& c) {
    using detail::to_json;
    json vg = json::array();
    for (const auto& [n, v] : c.lattice_potential) vg.push_back({{"index", n}, {"re", v.real()}, {"im", v.imag()}});
    json pot{{"kind", c.potential.kind}};
    if (c.potential.kind == "quadratic") {
        pot["constant"] = c.potential.constant;
        pot["linear"] = to_json(c.potential.linear);
        pot["hessian"] = to_json(c.potential.hessian);
    } else {
        pot["amplitude"] = c.potential.amplitude;
        pot["wavevector"] = to_json(c.potential.wavevector);
    }
    json env{{"kind", c.envelope.kind}};
    if (c.envelope.kind == "gaussian") {
        env["A"] = to_json(c.envelope.A);
        env["B"] = to_json(c.envelope.B);
    } else {
        std::vector<double> re, im;
        for (const cplx& v : c.envelope.samples) {
            re.push_back(v.real());
            im.push_back(v.imag());
        }
        env["re"] = re;
        env["im"] = im;
    }
    return {{"experiment", c.experiment},
            {"lattice", {{"basis", to_json(c.lattice_basis)}}},
            {"lattice_potential", vg},
            {"potential", pot},
            {"band", c.band},
            {"num_bands", c.num_bands},
            {"cutoff", c.cutoff},
            {"free_band", c.free_band},
            {"initial", {{"q0", to_json(c.q0)}, {"p0", to_json(c.p0)}, {"envelope", env}}},
            {"epsilons", c.epsilons},
            {"T", c.T},
            {"times", c.times},
            {"dt", {{"flow", c.flow_dt}, {"envelope", c.envelope_dt}, {"reference_factor", c.reference_dt_factor}}},
            {"grid",
             {{"envelope", {{"half_width", c.envelope_grid.half_width}, {"points", c.envelope_grid.points}}},
              {"physical", {{"half_width", c.physical_half_width}, {"points_per_period", c.points_per_period}}}}},
            {"k_points", c.k_points},
            {"convergence",
             {{"comparison", c.comparison},
              {"initial_data", c.initial_data},
              {"residual_time", c.residual_time},
              {"residual_delta", c.residual_delta}}},
            {"ehrenfest", {{"C0", c.C0}}},
            {"output", c.output}};
}

inline void validate(const ExperimentConfig& c);

inline ExperimentConfig config_from_json(const json& j) {
    using namespace detail;
    if (!j.is_object()) fail(ErrorKind::config, "configuration must be a JSON object");
    reject_unknown(j,
                   {"experiment", "lattice", "lattice_potential", "potential", "band", "num_bands", "cutoff",
                    "free_band", "initial", "epsilons", "T", "times", "dt", "grid", "k_points", "convergence",
                    "ehrenfest", "output"},
                   "configuration");
    ExperimentConfig c;
    c.experiment = get_or<std::string>(j, "experiment", c.experiment);
    if (j.contains("lattice")) {
        const json& l = j.at("lattice");
        reject_unknown(l, {"basis"}, "lattice");
        if (l.contains("basis")) c.lattice_basis = mat_from(l.at("basis"), "lattice.basis");
    }
    const int d = c.dim();
    if (j.contains("lattice_potential")) {
        c.lattice_potential.clear();
        const json& vg = j.at("lattice_potential");
        if (!vg.is_array()) fail(ErrorKind::config, "lattice_potential must be an array of {index, re, im}");
        for (const json& e : vg) {
            reject_unknown(e, {"index", "re", "im"}, "lattice_potential entry");
            const auto n = get_or<MultiIndex>(e, "index", {});
            c.lattice_potential[n] = cplx(get_or<double>(e, "re", 0.0), get_or<double>(e, "im", 0.0));
        }
    }
    if (j.contains("potential")) {
        const json& p = j.at("potential");
        reject_unknown(p, {"kind", "constant", "linear", "hessian", "amplitude", "wavevector"}, "potential");
        c.potential.kind = get_or<std::string>(p, "kind", "quadratic");
        c.potential.constant = get_or<double>(p, "constant", 0.0);
        c.potential.linear = p.contains("linear") ? vec_from(p.at("linear"), "potential.linear") : Vec::Zero(d);
        c.potential.hessian = p.contains("hessian") ? mat_from(p.at("hessian"), "potential.hessian") : Mat::Zero(d, d);
        c.potential.amplitude = get_or<double>(p, "amplitude", 0.0);
        c.potential.wavevector =
            p.contains("wavevector") ? vec_from(p.at("wavevector"), "potential.wavevector") : Vec::Zero(d);
    } else {
        c.potential.linear = Vec::Zero(d);
        c.potential.hessian = Mat::Identity(d, d);
        c.potential.wavevector = Vec::Zero(d);
    }
    c.band = get_or<int>(j, "band", c.band);
    c.num_bands = get_or<int>(j, "num_bands", c.num_bands);
    c.cutoff = get_or<int>(j, "cutoff", c.cutoff);
    c.free_band = get_or<bool>(j, "free_band", c.free_band);
    c.q0 = Vec::Zero(d);
    c.p0 = Vec::Zero(d);
    c.envelope.A = CMat::Identity(d, d);
    c.envelope.B = CMat::Identity(d, d);
    if (j.contains("initial")) {
        const json& ini = j.at("initial");
        reject_unknown(ini, {"q0", "p0", "envelope"}, "initial");
        if (ini.contains("q0")) c.q0 = vec_from(ini.at("q0"), "initial.q0");
        if (ini.contains("p0")) c.p0 = vec_from(ini.at("p0"), "initial.p0");
        if (ini.contains("envelope")) {
            const json& e = ini.at("envelope");
            reject_unknown(e, {"kind", "A", "B", "re", "im"}, "initial.envelope");
            c.envelope.kind = get_or<std::string>(e, "kind", "gaussian");
            if (e.contains("A")) c.envelope.A = cmat_from(e.at("A"), "envelope.A");
            if (e.contains("B")) c.envelope.B = cmat_from(e.at("B"), "envelope.B");
            if (c.envelope.kind == "sampled") {
                const Vec re = vec_from(e.at("re"), "envelope.re");
                const Vec im = e.contains("im") ? vec_from(e.at("im"), "envelope.im") : Vec::Zero(re.size());
                if (im.size() != re.size()) fail(ErrorKind::config, "envelope.re and envelope.im differ in length");
                for (Eigen::Index i = 0; i < re.size(); ++i) c.envelope.samples.emplace_back(re[i], im[i]);
            }
        }
    }
    c.epsilons = get_or<std::vector<double>>(j, "epsilons", c.epsilons);
    c.T = get_or<double>(j, "T", c.T);
    c.times = get_or<std::vector<double>>(j, "times", {c.T});
    if (j.contains("dt")) {
        const json& t = j.at("dt");
        reject_unknown(t, {"flow", "envelope", "reference_factor"}, "dt");
        c.flow_dt = get_or<double>(t, "flow", c.flow_dt);
        c.envelope_dt = get_or<double>(t, "envelope", c.envelope_dt);
        c.reference_dt_factor = get_or<double>(t, "reference_factor", c.reference_dt_factor);
    }
    c.envelope_grid.dim = d;
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        reject_unknown(g, {"envelope", "physical"}, "grid");
        if (g.contains("envelope")) {
            reject_unknown(g.at("envelope"), {"half_width", "points"}, "grid.envelope");
            c.envelope_grid.half_width = get_or<double>(g.at("envelope"), "half_width", c.envelope_grid.half_width);
            c.envelope_grid.points = get_or<int>(g.at("envelope"), "points", c.envelope_grid.points);
        }
        if (g.contains("physical")) {
            reject_unknown(g.at("physical"), {"half_width", "points_per_period"}, "grid.physical");
            c.physical_half_width = get_or<double>(g.at("physical"), "half_width", c.physical_half_width);
            c.points_per_period = get_or<int>(g.at("physical"), "points_per_period", c.points_per_period);
        }
    }
    c.k_points = get_or<int>(j, "k_points", c.k_points);
    if (j.contains("convergence")) {
        const json& cv = j.at("convergence");
        reject_unknown(cv, {"comparison", "initial_data", "residual_time", "residual_delta"}, "convergence");
        c.comparison = get_or<std::string>(cv, "comparison", c.comparison);
        c.initial_data = get_or<std::string>(cv, "initial_data", c.initial_data);
        c.residual_time = get_or<double>(cv, "residual_time", c.residual_time);
        c.residual_delta = get_or<double>(cv, "residual_delta", c.residual_delta);
    }
    if (j.contains("ehrenfest")) {
        reject_unknown(j.at("ehrenfest"), {"C0"}, "ehrenfest");
        c.C0 = get_or<std::vector<double>>(j.at("ehrenfest"), "C0", c.C0);
    }
    c.output = get_or<std::string>(j, "output", c.output);
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open configuration " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorKind::config, std::string("malformed JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline void validate(const ExperimentConfig& c) {
    auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::config, msg); };
    const int d = c.dim();
    check(std::find(experiment_kinds().begin(), experiment_kinds().end(), c.experiment) != experiment_kinds().end(),
          "unknown experiment kind '" + c.experiment + "'");
    check(d >= 1 && d <= 3 && c.lattice_basis.cols() == d, "lattice basis must be a square matrix of size 1..3");
    for (const auto& [n, v] : c.lattice_potential) check(static_cast<int>(n.size()) == d, "lattice_potential index has wrong dimension");
    check(c.potential.kind == "quadratic" || c.potential.kind == "cosine-well",
          "potential kind must be 'quadratic' or 'cosine-well' (other forms may violate the growth assumption)");
    if (c.potential.kind == "quadratic")
        check(c.potential.linear.size() == d && c.potential.hessian.rows() == d && c.potential.hessian.cols() == d,
              "quadratic potential has wrong dimensions");
    else
        check(c.potential.wavevector.size() == d, "cosine-well wavevector has wrong dimension");
    check(c.band >= 1, "band index must be >= 1");
    check(c.band < c.num_bands, "band index must be smaller than num_bands");
    check(c.cutoff >= 0, "cutoff must be >= 0");
    for (const auto& [n, v] : c.lattice_potential)
        for (int k : n) check(std::abs(k) <= c.cutoff, "cutoff below the lattice potential support");
    check(c.q0.size() == d && c.p0.size() == d, "initial q0/p0 have wrong dimension");
    check(c.envelope.kind == "gaussian" || c.envelope.kind == "sampled", "envelope kind must be 'gaussian' or 'sampled'");
    if (c.envelope.kind == "gaussian")
        check(c.envelope.A.rows() == d && c.envelope.A.cols() == d && c.envelope.B.rows() == d && c.envelope.B.cols() == d,
              "Gaussian A, B must be d x d");
    else
        check(d == 1 && c.envelope.samples.size() == static_cast<std::size_t>(c.envelope_grid.points),
              "sampled envelope must be one-dimensional with one value per envelope grid point");
    check(!c.epsilons.empty(), "epsilon list is empty");
    for (double e : c.epsilons) check(e > 0 && e < 1, "epsilon values must lie in (0, 1)");
    check(std::isfinite(c.T) && c.T > 0, "T must be positive");
    for (double t : c.times) check(t >= 0 && t <= c.T, "sample times must lie in [0, T]");
    check(c.flow_dt > 0 && c.envelope_dt > 0 && c.reference_dt_factor > 0, "time steps must be positive");
    check(c.envelope_grid.points >= 4 && c.envelope_grid.points % 2 == 0 && c.envelope_grid.half_width > 0,
          "envelope grid needs an even number >= 4 of points and a positive half-width");
    check(c.physical_half_width > 0 && c.points_per_period >= 16, "physical grid needs >= 16 points per period");
    check(c.k_points >= 2, "k_points must be >= 2");
    check(c.comparison == "phi" || c.comparison == "app" || c.comparison == "residual",
          "convergence comparison must be 'phi', 'app' or 'residual'");
    check(c.initial_data == "phi" || c.initial_data == "app", "initial_data must be 'phi' or 'app'");
    check(c.residual_time >= 0 && c.residual_time <= c.T, "residual_time must lie in [0, T]");
    check(c.residual_delta > 0 && c.residual_delta <= 0.1, "residual_delta must lie in (0, 0.1]");
    for (double c0 : c.C0) check(c0 > 0, "C0 values must be positive");
    if (c.free_band) check(c.lattice_potential.empty(), "free_band requires an empty lattice_potential");
}

/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline LatticeSpec make_lattice(const ExperimentConfig& c) { return LatticeSpec(c.lattice_basis); }
inline FourierPotential make_lattice_potential(const ExperimentConfig& c) {
    return FourierPotential(c.dim(), c.lattice_potential);
}
inline std::shared_ptr<const ExternalPotential> make_potential(const ExperimentConfig& c) {
    if (c.potential.kind == "quadratic")
        return std::make_shared<QuadraticPotential>(c.potential.constant, c.potential.linear, c.potential.hessian);
    return std::make_shared<CosineWell>(c.potential.amplitude, c.potential.wavevector);
}

} // namespace blochwp
