#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fal/experiment.hpp"

namespace {

// Exit codes: 2 = config problem, 3 = data loading problem, 4 = anything else.
int exit_code_for(const fal::Error& error) {
    switch (error.code()) {
        case fal::Errc::config_error:
            return 2;
        case fal::Errc::io_error:
        case fal::Errc::missing_column:
        case fal::Errc::unmappable_sensitive:
        case fal::Errc::empty_file:
        case fal::Errc::bad_numeric_value:
        case fal::Errc::invalid_dataset:
        case fal::Errc::infeasible_split:
            return 3;
        default:
            return 4;
    }
}

std::string hex64(std::uint64_t value) {
    char buffer[19];
    std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(value));
    return buffer;
}

int run_command(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                int jobs, const std::optional<std::string>& output_dir) {
    std::ifstream in(config_path);
    if (!in) {
        std::cerr << "error: cannot open config '" << config_path << "'\n";
        return 2;
    }
    nlohmann::json config;
    try {
        in >> config;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
        return 2;
    }

    fal::experiment::ExperimentSpec spec;
    std::uint64_t hash = 0;
    try {
        spec = fal::experiment::parse_config(config);
        hash = fal::experiment::config_hash(config);
    } catch (const fal::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    if (seed) spec.base_seed = *seed;
    if (output_dir) spec.output_dir = *output_dir;

    try {
        fal::experiment::ExperimentResult result = fal::experiment::run_experiment(spec, jobs);
        result.metadata["config_hash"] = hex64(hash);
        result.metadata["effective_seed"] = spec.base_seed;

        std::filesystem::create_directories(spec.output_dir);
        const std::string csv_path = spec.output_dir + "/" + spec.name + "_results.csv";
        const std::string meta_path = spec.output_dir + "/" + spec.name + "_metadata.json";
        fal::experiment::write_results_csv(csv_path, result.rows);
        std::ofstream meta(meta_path);
        if (!meta) fal::raise(fal::Errc::io_error, "cannot write '" + meta_path + "'");
        meta << result.metadata.dump(2) << "\n";

        std::cout << "wrote " << csv_path << "\n";
        std::cout << "wrote " << meta_path << "\n";
        return 0;
    } catch (const fal::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}

int summarize_command(const std::string& results_path, int iteration) {
    try {
        const std::vector<fal::experiment::ResultRow> rows =
            fal::experiment::read_results_csv(results_path);
        std::cout << fal::experiment::summarize(rows, iteration);
        return 0;
    } catch (const fal::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fair active-learning experiment runner"};
    app.require_subcommand(1);
    app.fallthrough();

    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::optional<std::string> output_dir;
    app.add_option("--seed", seed, "override the experiment seed");
    app.add_option("--jobs", jobs, "concurrent simulations")->check(CLI::PositiveNumber);
    app.add_option("--output-dir", output_dir, "override the output directory");

    std::string config_path;
    CLI::App* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("config", config_path, "experiment config (JSON)")->required();

    std::string results_path;
    int iteration = 0;
    CLI::App* summarize = app.add_subcommand("summarize", "tabulate results at one iteration");
    summarize->add_option("results", results_path, "results CSV")->required();
    summarize->add_option("--iteration", iteration, "iteration to tabulate")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return run_command(config_path, seed, jobs, output_dir);
    return summarize_command(results_path, iteration);
}
