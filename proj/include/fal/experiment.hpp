#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fal/dataset.hpp"
#include "fal/engine.hpp"

namespace fal::experiment {

struct DatasetSpec {
    enum class Kind { two_gaussians, two_gaussians_unfair, csv };
    Kind kind = Kind::two_gaussians;
    data::GaussianSpec gaussian;
    double unfair_p = 0.9;  // P(S=+1 | class 1) for the coupled generator
    std::string csv_path;
    data::CsvSchema schema;
    std::size_t initial_train_size = 10;
    std::size_t test_size = 500;
};

struct ExperimentSpec {
    std::string name = "experiment";
    DatasetSpec dataset;
    model::ModelConfig model;
    std::vector<sampling::StrategyConfig> strategies;
    std::size_t batch_size = 1;
    int n_simulations = 1;
    engine::StoppingConfig stopping;
    bool fairness_enabled = false;
    fairness::FairnessParams fairness;
    std::uint64_t base_seed = 0;
    std::string output_dir = ".";
};

// Parses the sectioned config document {dataset, model, strategies, engine,
// fairness, output}; unknown keys and invalid values raise config_error.
ExperimentSpec parse_config(const nlohmann::json& config);
ExperimentSpec load_config(const std::string& path);

// FNV-1a 64-bit over the canonical serialization, ignoring the output
// section; invariant under key reordering in the source document.
std::uint64_t config_hash(const nlohmann::json& config);

struct ResultRow {
    std::string strategy;
    std::string model;  // "base" or "fair"
    int iteration = 0;
    double n_labeled = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
    double unfairness_dp = 0.0;    // NaN when the dataset has no sensitive attribute
    double unfairness_rate = 0.0;  // NaN likewise
    double accuracy_std = 0.0;
    double f1_std = 0.0;
    double unfairness_dp_std = 0.0;
};

inline constexpr std::string_view kResultsHeader =
    "strategy,model,iteration,n_labeled,accuracy,f1,unfairness_dp,unfairness_rate,"
    "accuracy_std,f1_std,unfairness_dp_std";

void write_results_csv(const std::string& path, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::string& path);

struct ExperimentResult {
    std::vector<ResultRow> rows;       // sorted by (strategy, model, iteration)
    nlohmann::json metadata;           // config hash, seeds, timings
};

// Runs every configured strategy for n_simulations paired seeds and
// aggregates. `jobs` caps concurrent simulations (1 = serial).
ExperimentResult run_experiment(const ExperimentSpec& spec, int jobs = 1);

// Rows for one iteration as a printable strategy x metric table.
std::string summarize(std::span<const ResultRow> rows, int iteration);

} // namespace fal::experiment
