#include <blochwp/harness/experiments.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace {

int report(std::string_view kind, const std::string& message, int code) {
    const nlohmann::json j = {{"error", {{"kind", kind}, {"message", message}}}};
    std::cout << j.dump() << std::endl;
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bloch wave-packet simulator and validation harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    int jobs = 1;
    bool verbose = false;
    for (const auto& kind : blochwp::experiment_kinds()) {
        auto* sub = app.add_subcommand(kind, "run the " + kind + " experiment");
        sub->add_option("--config", config_path, "experiment configuration (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (defaults to the config's output field)");
        sub->add_option("--jobs", jobs, "parallel epsilon cells")->check(CLI::PositiveNumber);
        sub->add_flag("--verbose", verbose, "progress on stderr");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report("usage", e.what(), 2);
    }

    try {
        auto config = blochwp::load_config(config_path);
        const std::string kind = app.get_subcommands().front()->get_name();
        if (config.experiment != kind) {
            if (verbose) std::cerr << "[blochwp] config experiment '" << config.experiment << "' overridden by '" << kind
                                   << "'\n";
            config.experiment = kind;
        }
        blochwp::RunOptions opt;
        opt.out = out_dir.empty() ? config.output : out_dir;
        opt.jobs = jobs;
        opt.verbose = verbose;
        std::filesystem::create_directories(opt.out);
        const auto result = blochwp::run_experiment(config, opt);
        result.write(opt.out);
        if (result.summary.contains("fit_error"))
            return report("fit", result.summary["fit_error"].get<std::string>(), 1);
        if (verbose) std::cerr << "[blochwp] wrote " << opt.out.string() << '\n';
        return 0;
    } catch (const blochwp::Error& e) {
        return report(blochwp::to_string(e.kind()), e.what(), 1);
    } catch (const std::exception& e) {
        return report("internal", e.what(), 1);
    }
}
