#pragma once

#include "../core.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

namespace blochwp {

/// Shortest round-trip decimal form of a double.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

/// In-memory CSV table; every row is prefixed with the configuration hash.
class CsvTable {
public:
    CsvTable(std::string config_hash, std::vector<std::string> columns)
        : hash_(std::move(config_hash)), columns_(std::move(columns)) {}

    class Row {
    public:
        Row& operator<<(double v) { return add(format_number(v)); }
        Row& operator<<(int v) { return add(std::to_string(v)); }
        Row& operator<<(std::size_t v) { return add(std::to_string(v)); }
        Row& operator<<(bool v) { return add(v ? "true" : "false"); }
        Row& operator<<(const std::string& v) { return add(quote(v)); }
        Row& operator<<(const char* v) { return add(quote(v)); }
        const std::vector<std::string>& cells() const { return cells_; }

    private:
        Row& add(std::string s) {
            cells_.push_back(std::move(s));
            return *this;
        }
        static std::string quote(const std::string& s) {
            if (s.find_first_of(",\"\n") == std::string::npos) return s;
            std::string out = "\"";
            for (char c : s) {
                if (c == '"') out += '"';
                out += c;
            }
            return out + "\"";
        }
        std::vector<std::string> cells_;
    };

    void add(const Row& row) {
        require(row.cells().size() == columns_.size(), ErrorKind::invalid_argument,
                "CSV row has " + std::to_string(row.cells().size()) + " cells, expected " +
                    std::to_string(columns_.size()));
        rows_.push_back(row.cells());
    }

    std::size_t size() const { return rows_.size(); }

    std::string str() const {
        std::string out = "config_hash";
        for (const auto& c : columns_) out += "," + c;
        out += '\n';
        for (const auto& r : rows_) {
            out += hash_;
            for (const auto& c : r) out += "," + c;
            out += '\n';
        }
        return out;
    }

    void write(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path);
        require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
        out << str();
    }

private:
    std::string hash_;
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

struct SlopeFit {
    double slope = 0;
    double intercept = 0;
    double r2 = 0;
    std::size_t samples = 0;
    bool floor = false; ///< all errors at the numerical floor: slope is meaningless
};

/// Ordinary least squares of ln(error) against ln(epsilon).
inline SlopeFit fit_log_log(const std::vector<double>& eps, const std::vector<double>& err, double floor = 1e-9) {
    require(eps.size() == err.size(), ErrorKind::invalid_argument, "fit needs matching samples");
    require(eps.size() >= 2, ErrorKind::invalid_argument, "fit needs at least two samples");
    SlopeFit f;
    f.samples = eps.size();
    f.floor = std::all_of(err.begin(), err.end(), [&](double e) { return e <= floor; });
    const double tiny = std::numeric_limits<double>::min();
    Eigen::MatrixXd X(static_cast<Eigen::Index>(eps.size()), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(eps.size()));
    for (std::size_t i = 0; i < eps.size(); ++i) {
        require(eps[i] > 0, ErrorKind::invalid_argument, "fit needs positive epsilon");
        X(static_cast<Eigen::Index>(i), 0) = std::log(eps[i]);
        X(static_cast<Eigen::Index>(i), 1) = 1.0;
        y[static_cast<Eigen::Index>(i)] = std::log(std::max(err[i], tiny));
    }
    const Eigen::Vector2d beta = X.colPivHouseholderQr().solve(y);
    f.slope = beta[0];
    f.intercept = beta[1];
    const Eigen::VectorXd res = y - X * beta;
    const double ss_tot = (y.array() - y.mean()).square().sum();
    f.r2 = ss_tot > 0 ? 1.0 - res.squaredNorm() / ss_tot : 1.0;
    return f;
}

inline nlohmann::json to_json(const SlopeFit& f) {
    return {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"samples", f.samples}, {"floor", f.floor}};
}

/// Runs tasks 0..n-1 on up to `jobs` threads. Results are indexed by task, so the
/// outcome does not depend on scheduling. The first exception is rethrown after
/// all workers finish.
inline void run_parallel(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex m;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(m);
                    if (!first) first = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

} // namespace blochwp
