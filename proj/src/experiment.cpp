#include "fal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "fal/rng.hpp"

namespace fal::experiment {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
                return item.key() == k;
            }) == allowed.end())
            raise(Errc::config_error,
                  "unknown key '" + item.key() + "' in section '" + section + "'");
    }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        raise(Errc::config_error, std::string("bad value for '") + key + "'");
    }
}

template <class T>
T get_required(const json& obj, const std::string& section, const char* key) {
    if (!obj.contains(key))
        raise(Errc::config_error,
              std::string("missing key '") + key + "' in section '" + section + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        raise(Errc::config_error, std::string("bad value for '") + key + "'");
    }
}

DatasetSpec parse_dataset(const json& obj) {
    DatasetSpec spec;
    const std::string type = get_required<std::string>(obj, "dataset", "type");
    if (type == "two_gaussians") spec.kind = DatasetSpec::Kind::two_gaussians;
    else if (type == "two_gaussians_unfair") spec.kind = DatasetSpec::Kind::two_gaussians_unfair;
    else if (type == "csv") spec.kind = DatasetSpec::Kind::csv;
    else raise(Errc::config_error, "unknown dataset type '" + type + "'");

    if (spec.kind == DatasetSpec::Kind::csv) {
        check_keys(obj, "dataset",
                   {"type", "path", "features", "label", "sensitive", "categorical",
                    "initial_train_size", "test_size"});
        spec.csv_path = get_required<std::string>(obj, "dataset", "path");
        spec.schema.feature_columns =
            get_required<std::vector<std::string>>(obj, "dataset", "features");
        spec.schema.label_column = get_required<std::string>(obj, "dataset", "label");
        spec.schema.sensitive_column = get_or<std::string>(obj, "sensitive", "");
        spec.schema.categorical_columns =
            get_or<std::vector<std::string>>(obj, "categorical", {});
    } else {
        check_keys(obj, "dataset",
                   {"type", "n_per_class", "mean_0", "mean_1", "variance", "p",
                    "initial_train_size", "test_size"});
        spec.gaussian.n_per_class = get_or<std::size_t>(obj, "n_per_class", 1000);
        spec.gaussian.variance = get_or<double>(obj, "variance", 1.0);
        for (const char* key : {"mean_0", "mean_1"}) {
            if (!obj.contains(key)) continue;
            const auto v = get_or<std::vector<double>>(obj, key, {});
            if (v.size() != 2)
                raise(Errc::config_error, std::string("'") + key + "' needs exactly 2 numbers");
            double* target = std::strcmp(key, "mean_0") == 0 ? spec.gaussian.mean_0
                                                             : spec.gaussian.mean_1;
            target[0] = v[0];
            target[1] = v[1];
        }
        if (spec.gaussian.variance <= 0.0)
            raise(Errc::config_error, "variance must be positive");
        spec.unfair_p = get_or<double>(obj, "p", 0.9);
        if (!(spec.unfair_p >= 0.0 && spec.unfair_p <= 1.0))
            raise(Errc::config_error, "p must lie in [0, 1]");
        if (spec.kind == DatasetSpec::Kind::two_gaussians && obj.contains("p"))
            raise(Errc::config_error, "'p' only applies to two_gaussians_unfair");
    }
    spec.initial_train_size = get_or<std::size_t>(obj, "initial_train_size", 10);
    spec.test_size = get_or<std::size_t>(obj, "test_size", 500);
    if (spec.initial_train_size < 2)
        raise(Errc::config_error, "initial_train_size must be at least 2");
    return spec;
}

model::ModelConfig parse_model(const json& obj) {
    check_keys(obj, "model",
               {"kind", "learning_rate", "iterations", "l2", "committee_size",
                "boosting_rounds", "stump_depth", "include_sensitive"});
    model::ModelConfig config;
    const std::string kind = get_or<std::string>(obj, "kind", "softmax_regression");
    if (kind == "softmax_regression") config.kind = model::ModelKind::softmax_regression;
    else if (kind == "bagged_committee") config.kind = model::ModelKind::bagged_committee;
    else if (kind == "boosted_stumps") config.kind = model::ModelKind::boosted_stumps;
    else raise(Errc::config_error, "unknown model kind '" + kind + "'");
    config.learning_rate = get_or<double>(obj, "learning_rate", config.learning_rate);
    config.iterations = get_or<int>(obj, "iterations", config.iterations);
    config.l2 = get_or<double>(obj, "l2", config.l2);
    config.committee_size = get_or<int>(obj, "committee_size", config.committee_size);
    config.boosting_rounds = get_or<int>(obj, "boosting_rounds", config.boosting_rounds);
    config.stump_depth = get_or<int>(obj, "stump_depth", config.stump_depth);
    config.include_sensitive = get_or<bool>(obj, "include_sensitive", config.include_sensitive);
    if (config.learning_rate <= 0.0) raise(Errc::config_error, "learning_rate must be positive");
    if (config.iterations < 0) raise(Errc::config_error, "iterations must be nonnegative");
    if (config.l2 < 0.0) raise(Errc::config_error, "l2 must be nonnegative");
    return config;
}

sampling::StrategyConfig parse_strategy(const json& entry) {
    sampling::StrategyConfig config;
    if (entry.is_string()) {
        config.kind = sampling::strategy_from_name(entry.get<std::string>());
        return config;
    }
    if (!entry.is_object()) raise(Errc::config_error, "strategy entries are strings or objects");
    check_keys(entry, "strategies",
               {"kind", "committee_size", "density_beta", "eer_sample_size", "eer_refit_steps"});
    config.kind =
        sampling::strategy_from_name(get_required<std::string>(entry, "strategies", "kind"));
    config.committee_size = get_or<int>(entry, "committee_size", config.committee_size);
    config.density_beta = get_or<double>(entry, "density_beta", config.density_beta);
    config.eer_sample_size = get_or<int>(entry, "eer_sample_size", config.eer_sample_size);
    config.eer_refit_steps = get_or<int>(entry, "eer_refit_steps", config.eer_refit_steps);
    if (config.committee_size < 2)
        raise(Errc::config_error, "committee_size must be at least 2");
    if (config.density_beta < 0.0) raise(Errc::config_error, "density_beta must be nonnegative");
    if (config.eer_sample_size < 1)
        raise(Errc::config_error, "eer_sample_size must be at least 1");
    if (config.eer_refit_steps < 0)
        raise(Errc::config_error, "eer_refit_steps must be nonnegative");
    return config;
}

} // namespace

ExperimentSpec parse_config(const nlohmann::json& config) {
    if (!config.is_object()) raise(Errc::config_error, "config root must be an object");
    check_keys(config, "(root)",
               {"dataset", "model", "strategies", "engine", "fairness", "output"});
    if (!config.contains("dataset")) raise(Errc::config_error, "missing 'dataset' section");
    if (!config.contains("strategies") || !config.at("strategies").is_array() ||
        config.at("strategies").empty())
        raise(Errc::config_error, "'strategies' must be a nonempty array");

    ExperimentSpec spec;
    spec.dataset = parse_dataset(config.at("dataset"));
    if (config.contains("model")) spec.model = parse_model(config.at("model"));

    std::set<std::string> seen;
    for (const json& entry : config.at("strategies")) {
        const sampling::StrategyConfig sc = parse_strategy(entry);
        const std::string name(sampling::strategy_name(sc.kind));
        if (!seen.insert(name).second)
            raise(Errc::config_error, "strategy '" + name + "' listed twice");
        spec.strategies.push_back(sc);
    }

    if (config.contains("engine")) {
        const json& eng = config.at("engine");
        check_keys(eng, "engine",
                   {"batch_size", "max_iterations", "n_simulations", "seed", "max_confidence",
                    "min_error", "unfairness_window"});
        spec.batch_size = get_or<std::size_t>(eng, "batch_size", spec.batch_size);
        spec.stopping.max_iterations =
            get_or<int>(eng, "max_iterations", spec.stopping.max_iterations);
        spec.n_simulations = get_or<int>(eng, "n_simulations", spec.n_simulations);
        spec.base_seed = get_or<std::uint64_t>(eng, "seed", spec.base_seed);
        if (eng.contains("max_confidence"))
            spec.stopping.max_confidence = get_or<double>(eng, "max_confidence", 0.001);
        if (eng.contains("min_error"))
            spec.stopping.min_error = get_or<double>(eng, "min_error", 0.0);
        if (eng.contains("unfairness_window"))
            spec.stopping.unfairness_window = get_or<int>(eng, "unfairness_window", 5);
    }
    if (spec.batch_size < 1) raise(Errc::config_error, "batch_size must be at least 1");
    if (spec.n_simulations < 1) raise(Errc::config_error, "n_simulations must be at least 1");
    if (spec.stopping.max_iterations < 0)
        raise(Errc::config_error, "max_iterations must be nonnegative");
    if (spec.stopping.max_confidence && *spec.stopping.max_confidence <= 0.0)
        raise(Errc::config_error, "max_confidence must be positive");
    if (spec.stopping.min_error &&
        !(*spec.stopping.min_error >= 0.0 && *spec.stopping.min_error <= 1.0))
        raise(Errc::config_error, "min_error must lie in [0, 1]");
    if (spec.stopping.unfairness_window && *spec.stopping.unfairness_window < 1)
        raise(Errc::config_error, "unfairness_window must be at least 1");

    if (config.contains("fairness")) {
        const json& fair = config.at("fairness");
        check_keys(fair, "fairness",
                   {"enabled", "jitter_u", "optimizer_iterations", "step_size", "restarts",
                    "smoothed", "temperature"});
        spec.fairness_enabled = get_or<bool>(fair, "enabled", false);
        spec.fairness.jitter_u = get_or<double>(fair, "jitter_u", spec.fairness.jitter_u);
        spec.fairness.optimizer.iterations =
            get_or<int>(fair, "optimizer_iterations", spec.fairness.optimizer.iterations);
        spec.fairness.optimizer.step_size =
            get_or<double>(fair, "step_size", spec.fairness.optimizer.step_size);
        spec.fairness.optimizer.restarts =
            get_or<int>(fair, "restarts", spec.fairness.optimizer.restarts);
        spec.fairness.optimizer.smoothed_accelerated = get_or<bool>(fair, "smoothed", false);
        spec.fairness.optimizer.temperature =
            get_or<double>(fair, "temperature", spec.fairness.optimizer.temperature);
        if (spec.fairness.jitter_u <= 0.0)
            raise(Errc::config_error, "jitter_u must be positive");
        if (spec.fairness.optimizer.iterations < 1)
            raise(Errc::config_error, "optimizer_iterations must be at least 1");
        if (spec.fairness.optimizer.restarts < 1)
            raise(Errc::config_error, "restarts must be at least 1");
        if (spec.fairness.optimizer.temperature <= 0.0)
            raise(Errc::config_error, "temperature must be positive");
    }
    if (spec.fairness_enabled && spec.dataset.kind == DatasetSpec::Kind::two_gaussians)
        raise(Errc::config_error, "fairness needs a dataset with a sensitive attribute");
    if (spec.fairness_enabled && spec.dataset.kind == DatasetSpec::Kind::csv &&
        spec.dataset.schema.sensitive_column.empty())
        raise(Errc::config_error, "fairness needs a sensitive column");

    if (config.contains("output")) {
        const json& output = config.at("output");
        check_keys(output, "output", {"dir", "name"});
        spec.output_dir = get_or<std::string>(output, "dir", spec.output_dir);
        spec.name = get_or<std::string>(output, "name", spec.name);
    }
    return spec;
}

ExperimentSpec load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::config_error, "cannot open config '" + path + "'");
    json config;
    try {
        in >> config;
    } catch (const json::exception& e) {
        raise(Errc::config_error, std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(config);
}

std::uint64_t config_hash(const nlohmann::json& config) {
    json canonical = config;
    canonical.erase("output");
    const std::string text = canonical.dump();  // keys are already sorted
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

namespace {

std::string format_double(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.17g", value);
    return buffer;
}

double parse_cell(const std::string& cell) {
    if (cell == "nan") return std::numeric_limits<double>::quiet_NaN();
    return std::stod(cell);
}

std::string csv_number(double value) {
    return std::isnan(value) ? "nan" : format_double(value);
}

std::string iso_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm parts{};
    gmtime_r(&now, &parts);
    char buffer[32];
    std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &parts);
    return buffer;
}

Dataset build_dataset(const DatasetSpec& spec, const Dataset* csv_cache,
                      std::uint64_t sim_seed) {
    switch (spec.kind) {
        case DatasetSpec::Kind::two_gaussians:
            return data::gen_two_gaussians(spec.gaussian, mix_seed(sim_seed, 0xDA7A));
        case DatasetSpec::Kind::two_gaussians_unfair:
            return data::gen_two_gaussians_unfair(spec.gaussian, spec.unfair_p,
                                                  mix_seed(sim_seed, 0xDA7A));
        case DatasetSpec::Kind::csv:
            return *csv_cache;
    }
    raise(Errc::config_error, "unknown dataset kind");
}

} // namespace

void write_results_csv(const std::string& path, std::span<const ResultRow> rows) {
    std::ofstream out(path);
    if (!out) raise(Errc::io_error, "cannot write '" + path + "'");
    out << kResultsHeader << "\n";
    for (const ResultRow& row : rows) {
        out << row.strategy << ',' << row.model << ',' << row.iteration << ','
            << csv_number(row.n_labeled) << ',' << csv_number(row.accuracy) << ','
            << csv_number(row.f1) << ',' << csv_number(row.unfairness_dp) << ','
            << csv_number(row.unfairness_rate) << ',' << csv_number(row.accuracy_std) << ','
            << csv_number(row.f1_std) << ',' << csv_number(row.unfairness_dp_std) << "\n";
    }
    if (!out) raise(Errc::io_error, "failed while writing '" + path + "'");
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::io_error, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) raise(Errc::empty_file, "'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kResultsHeader)
        raise(Errc::io_error, "'" + path + "' does not carry the results header");

    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream stream(line);
        std::string cell;
        while (std::getline(stream, cell, ',')) cells.push_back(cell);
        if (cells.size() != 11)
            raise(Errc::io_error, "malformed results row: '" + line + "'");
        ResultRow row;
        row.strategy = cells[0];
        row.model = cells[1];
        row.iteration = std::stoi(cells[2]);
        row.n_labeled = parse_cell(cells[3]);
        row.accuracy = parse_cell(cells[4]);
        row.f1 = parse_cell(cells[5]);
        row.unfairness_dp = parse_cell(cells[6]);
        row.unfairness_rate = parse_cell(cells[7]);
        row.accuracy_std = parse_cell(cells[8]);
        row.f1_std = parse_cell(cells[9]);
        row.unfairness_dp_std = parse_cell(cells[10]);
        rows.push_back(std::move(row));
    }
    return rows;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, int jobs) {
    if (jobs < 1) raise(Errc::config_error, "jobs must be at least 1");
    const std::string started = iso_timestamp();

    Dataset csv_cache;
    if (spec.dataset.kind == DatasetSpec::Kind::csv)
        csv_cache = data::load_csv(spec.dataset.csv_path, spec.dataset.schema);

    // One split bundle per simulation, shared by every strategy so the runs
    // are paired; each run consumes its own copy (the oracle is stateful).
    std::vector<data::Splits> sim_splits;
    std::vector<std::uint64_t> sim_seeds;
    for (int sim = 0; sim < spec.n_simulations; ++sim) {
        const std::uint64_t sim_seed =
            mix_seed(spec.base_seed, static_cast<std::uint64_t>(sim));
        sim_seeds.push_back(sim_seed);
        const Dataset dataset = build_dataset(spec.dataset, &csv_cache, sim_seed);
        data::SplitSpec split;
        split.initial_train_size = spec.dataset.initial_train_size;
        split.test_size = spec.dataset.test_size;
        split.seed = mix_seed(sim_seed, 0x5B17);
        sim_splits.push_back(data::make_splits(dataset, split));
    }

    struct Job {
        std::size_t strategy;
        int sim;
    };
    std::vector<Job> queue;
    for (std::size_t s = 0; s < spec.strategies.size(); ++s)
        for (int sim = 0; sim < spec.n_simulations; ++sim)
            queue.push_back({s, sim});

    std::vector<std::vector<engine::RunTrace>> traces(
        spec.strategies.size(), std::vector<engine::RunTrace>(spec.n_simulations));

    auto execute = [&](const Job& job) {
        engine::RunConfig rc;
        rc.model = spec.model;
        rc.strategy = spec.strategies[job.strategy];
        rc.batch_size = spec.batch_size;
        rc.stopping = spec.stopping;
        rc.fair = spec.fairness_enabled;
        rc.fairness = spec.fairness;
        rc.seed = sim_seeds[static_cast<std::size_t>(job.sim)];
        data::Splits splits = sim_splits[static_cast<std::size_t>(job.sim)];
        traces[job.strategy][static_cast<std::size_t>(job.sim)] =
            spec.fairness_enabled ? engine::run_fair_active_learning(std::move(splits), rc)
                                  : engine::run_active_learning(std::move(splits), rc);
    };

    if (jobs == 1) {
        for (const Job& job : queue) execute(job);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= queue.size()) return;
                try {
                    execute(queue[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        const int n_threads = std::min<int>(jobs, static_cast<int>(queue.size()));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    ExperimentResult result;
    for (std::size_t s = 0; s < spec.strategies.size(); ++s) {
        const std::string name(sampling::strategy_name(spec.strategies[s].kind));
        const engine::AggregatedTrace agg = engine::aggregate_runs(traces[s]);
        auto emit = [&](const std::vector<engine::AggregatedRecord>& records,
                        const char* which) {
            const double nan = std::numeric_limits<double>::quiet_NaN();
            for (const engine::AggregatedRecord& rec : records) {
                ResultRow row;
                row.strategy = name;
                row.model = which;
                row.iteration = rec.iteration;
                row.n_labeled = rec.n_labeled;
                row.accuracy = rec.accuracy.mean;
                row.accuracy_std = rec.accuracy.stddev;
                row.f1 = rec.f1.mean;
                row.f1_std = rec.f1.stddev;
                row.unfairness_dp = rec.unfairness_dp ? rec.unfairness_dp->mean : nan;
                row.unfairness_dp_std = rec.unfairness_dp ? rec.unfairness_dp->stddev : nan;
                row.unfairness_rate = rec.unfairness_rate ? rec.unfairness_rate->mean : nan;
                result.rows.push_back(std::move(row));
            }
        };
        emit(agg.base, "base");
        emit(agg.fair, "fair");
    }
    std::sort(result.rows.begin(), result.rows.end(),
              [](const ResultRow& a, const ResultRow& b) {
                  if (a.strategy != b.strategy) return a.strategy < b.strategy;
                  if (a.model != b.model) return a.model < b.model;
                  return a.iteration < b.iteration;
              });

    std::vector<std::string> strategy_names;
    for (const sampling::StrategyConfig& sc : spec.strategies)
        strategy_names.emplace_back(sampling::strategy_name(sc.kind));
    result.metadata = json{{"name", spec.name},
                           {"base_seed", spec.base_seed},
                           {"n_simulations", spec.n_simulations},
                           {"batch_size", spec.batch_size},
                           {"max_iterations", spec.stopping.max_iterations},
                           {"strategies", strategy_names},
                           {"fairness_enabled", spec.fairness_enabled},
                           {"started", started},
                           {"finished", iso_timestamp()}};
    return result;
}

std::string summarize(std::span<const ResultRow> rows, int iteration) {
    std::vector<const ResultRow*> selected;
    for (const ResultRow& row : rows)
        if (row.iteration == iteration) selected.push_back(&row);
    if (selected.empty())
        raise(Errc::missing_iteration,
              "no rows for iteration " + std::to_string(iteration));
    std::sort(selected.begin(), selected.end(), [](const ResultRow* a, const ResultRow* b) {
        if (a->strategy != b->strategy) return a->strategy < b->strategy;
        return a->model < b->model;
    });

    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %-5s %10s %9s %9s %14s %16s\n", "strategy", "model",
                  "n_labeled", "accuracy", "f1", "unfairness_dp", "unfairness_rate");
    out << "iteration " << iteration << "\n" << line;
    for (const ResultRow* row : selected) {
        std::snprintf(line, sizeof line, "%-22s %-5s %10.1f %9.4f %9.4f %14.4f %16.4f\n",
                      row->strategy.c_str(), row->model.c_str(), row->n_labeled, row->accuracy,
                      row->f1, row->unfairness_dp, row->unfairness_rate);
        out << line;
    }
    return out.str();
}

} // namespace fal::experiment
