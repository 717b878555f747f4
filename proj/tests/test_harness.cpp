#include <blochwp/harness/experiments.hpp>

#include <gtest/gtest.h>

#include <cstdio>
#include <sstream>
#include <sys/wait.h>

using namespace blochwp;

namespace {

namespace fs = std::filesystem;

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorKind::io;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("blochwp_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(BLOCHWP_CLI) + " " + args + " 2>/dev/null";
    CliResult r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[512];
    while (std::fgets(buf, sizeof buf, p)) r.out += buf;
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

ExperimentConfig free_config() {
    ExperimentConfig c = load_config(std::string(BLOCHWP_CONFIGS) + "/free_convergence.json");
    c.epsilons = {1.0 / 16, 1.0 / 32, 1.0 / 64};
    c.T = 0.5;
    c.times = {0.25, 0.5};
    return c;
}

} // namespace

TEST(Config, JsonRoundTripAndStableHash) {
    for (const auto& entry : fs::directory_iterator(BLOCHWP_CONFIGS)) {
        const auto c = load_config(entry.path().string());
        const auto j = to_json(c);
        const auto back = config_from_json(j);
        EXPECT_EQ(to_json(back), j) << entry.path();
        EXPECT_EQ(config_hash(back), config_hash(c)) << entry.path();
        EXPECT_EQ(config_hash(c).size(), 16u);
    }
    ExperimentConfig a, b;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.p0[0] = 0.31;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, RejectsUnknownFieldsAndInvalidValues) {
    auto j = to_json(ExperimentConfig{});
    j["stray"] = 1;
    EXPECT_EQ(kind_of([&] { config_from_json(j); }), ErrorKind::config);
    auto nested = to_json(ExperimentConfig{});
    nested["grid"]["envelope"]["spacing"] = 0.1;
    EXPECT_EQ(kind_of([&] { config_from_json(nested); }), ErrorKind::config);

    auto with = [](auto edit) {
        ExperimentConfig c;
        edit(c);
        return kind_of([&] { validate(c); });
    };
    EXPECT_EQ(with([](ExperimentConfig& c) { c.band = c.num_bands; }), ErrorKind::config);
    EXPECT_EQ(with([](ExperimentConfig& c) { c.epsilons = {0.1, 1.0}; }), ErrorKind::config);
    EXPECT_EQ(with([](ExperimentConfig& c) { c.potential.kind = "quartic"; }), ErrorKind::config);
    EXPECT_EQ(with([](ExperimentConfig& c) { c.residual_delta = 0.2; }), ErrorKind::config);
    EXPECT_EQ(with([](ExperimentConfig& c) { c.free_band = true; }), ErrorKind::config);
    EXPECT_EQ(kind_of([] { load_config("/nonexistent/config.json"); }), ErrorKind::io);
}

TEST(Output, NumbersRoundTrip) {
    EXPECT_EQ(format_number(0.1), "0.1");
    EXPECT_EQ(format_number(2.0), "2");
    for (double v : {1.0 / 3, pi, 6.02e23, -1e-300}) EXPECT_EQ(std::strtod(format_number(v).c_str(), nullptr), v);
    EXPECT_EQ(format_number(std::nan("")), "nan");
}

TEST(Output, CsvRowsCarryHashAndQuoteText) {
    CsvTable t("abc", {"x", "note"});
    t.add(CsvTable::Row{} << 1.5 << "plain");
    t.add(CsvTable::Row{} << 2.0 << "a, \"b\"");
    EXPECT_EQ(t.str(), "config_hash,x,note\nabc,1.5,plain\nabc,2,\"a, \"\"b\"\"\"\n");
    EXPECT_THROW(t.add(CsvTable::Row{} << 1.0), Error);
}

TEST(Output, SlopeFitAndFloor) {
    const std::vector<double> eps{1.0 / 16, 1.0 / 32, 1.0 / 64};
    std::vector<double> err;
    for (double e : eps) err.push_back(3.0 * std::sqrt(e));
    const auto f = fit_log_log(eps, err);
    EXPECT_NEAR(f.slope, 0.5, 1e-12);
    EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-12);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    EXPECT_FALSE(f.floor);
    EXPECT_TRUE(fit_log_log(eps, {1e-13, 5e-13, 2e-12}).floor);
    EXPECT_THROW(fit_log_log(eps, {1.0}), Error);
}

TEST(Output, ParallelRunRethrowsFirstFailure) {
    std::vector<int> hit(8, 0);
    EXPECT_THROW(run_parallel(8, 3,
                              [&](std::size_t i) {
                                  hit[i] = 1;
                                  if (i == 2) fail(ErrorKind::resolution, "cell 2");
                              }),
                 Error);
    EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 8);
    std::vector<std::size_t> seen(5, 0);
    run_parallel(5, 4, [&](std::size_t i) { seen[i] = i * i; });
    EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 4, 9, 16}));
}

TEST(Experiments, FreeBandsMatchFoldedParabolas) {
    ExperimentConfig c = load_config(std::string(BLOCHWP_CONFIGS) + "/free_bands.json");
    c.k_points = 9;
    c.cutoff = 4;
    const auto r = run_bands(c);
    const auto rows = parse_csv(r.table("bands").str());
    ASSERT_EQ(rows.size(), 10u);
    EXPECT_EQ(rows[0][1], "k1");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i][0], r.config_hash);
        const double k = std::stod(rows[i][1]);
        // lowest folded parabola: min_n (k + n)^2 / 2
        double lowest = 1e300;
        for (int n = -3; n <= 3; ++n) lowest = std::min(lowest, 0.5 * (k + n) * (k + n));
        EXPECT_NEAR(std::stod(rows[i][2]), lowest, 1e-12);
    }
}

TEST(Experiments, ConvergenceDeterministicAcrossJobs) {
    const auto c = free_config();
    RunOptions serial, parallel;
    parallel.jobs = 3;
    const auto a = run_convergence(c, serial);
    const auto b = run_convergence(c, parallel);
    EXPECT_EQ(a.table("convergence").str(), b.table("convergence").str());
    EXPECT_EQ(a.summary.dump(), b.summary.dump());
    // free lattice: the packet is exact and the fit sits on the floor
    for (const auto& fit : a.summary["fits"]) EXPECT_TRUE(fit["phi"]["floor"].get<bool>());
}

TEST(Experiments, ConvergenceNeedsThreeEpsilons) {
    auto c = free_config();
    c.epsilons = {1.0 / 16, 1.0 / 32};
    EXPECT_EQ(kind_of([&] { run_convergence(c); }), ErrorKind::config);
}

TEST(Experiments, ResultsWrittenWithHash) {
    const auto c = free_config();
    const auto dir = scratch("write");
    run_experiment(c).write(dir);
    std::ifstream summary(dir / "summary.json");
    const auto j = nlohmann::json::parse(summary);
    EXPECT_EQ(j["experiment"], "convergence");
    EXPECT_EQ(j["config_hash"], config_hash(c));
    EXPECT_TRUE(fs::exists(dir / "convergence.csv"));
    fs::remove_all(dir);
}

TEST(Cli, RunsSubcommandAndReportsErrors) {
    const auto dir = scratch("cli");
    const std::string cfg = std::string(BLOCHWP_CONFIGS) + "/free_bands.json";
    const auto ok = run_cli("bands --config " + cfg + " --out " + dir.string());
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_TRUE(fs::exists(dir / "bands.csv"));
    EXPECT_TRUE(fs::exists(dir / "summary.json"));

    const auto missing = run_cli("bands --config /nonexistent.json");
    EXPECT_EQ(missing.code, 1);
    EXPECT_EQ(nlohmann::json::parse(missing.out)["error"]["kind"], "io");

    const auto usage = run_cli("");
    EXPECT_EQ(usage.code, 2);
    EXPECT_EQ(nlohmann::json::parse(usage.out)["error"]["kind"], "usage");

    const auto bad_jobs = run_cli("bands --config " + cfg + " --jobs 0");
    EXPECT_EQ(bad_jobs.code, 2);

    auto j = to_json(load_config(cfg));
    j["band"] = j["num_bands"];
    const auto bad = dir / "bad.json";
    std::ofstream(bad) << j.dump();
    const auto invalid = run_cli("bands --config " + bad.string() + " --out " + dir.string());
    EXPECT_EQ(invalid.code, 1);
    EXPECT_EQ(nlohmann::json::parse(invalid.out)["error"]["kind"], "config");
    fs::remove_all(dir);
}
