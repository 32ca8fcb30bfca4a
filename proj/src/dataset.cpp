#include "fal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fal/rng.hpp"

namespace fal {

void Dataset::validate() const {
    if (n_classes < 2) raise(Errc::invalid_dataset, "dataset needs at least 2 classes");
    const std::size_t d = dim();
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const Instance& inst = instances[i];
        if (inst.features.size() != d)
            raise(Errc::invalid_dataset,
                  "instance " + std::to_string(i) + " has dimension " +
                      std::to_string(inst.features.size()) + ", expected " + std::to_string(d));
        for (double v : inst.features)
            if (!std::isfinite(v))
                raise(Errc::invalid_dataset,
                      "non-finite feature in instance " + std::to_string(i));
        if (inst.label && (*inst.label < 1 || *inst.label > n_classes))
            raise(Errc::invalid_dataset, "label out of [1, K] in instance " + std::to_string(i));
        if (has_sensitive) {
            if (!inst.sensitive)
                raise(Errc::missing_sensitive,
                      "instance " + std::to_string(i) + " lacks the sensitive attribute");
            if (*inst.sensitive != -1 && *inst.sensitive != 1)
                raise(Errc::invalid_dataset,
                      "sensitive value must be -1 or +1 in instance " + std::to_string(i));
        }
    }
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
    Dataset out;
    out.n_classes = data.n_classes;
    out.has_sensitive = data.has_sensitive;
    out.instances.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= data.instances.size())
            raise(Errc::index_out_of_pool, "subset index " + std::to_string(idx) + " out of range");
        out.instances.push_back(data.instances[idx]);
    }
    return out;
}

namespace data {

Dataset gen_two_gaussians(const GaussianSpec& spec, std::uint64_t seed) {
    if (spec.variance <= 0.0) raise(Errc::invalid_variance, "variance must be positive");
    if (spec.n_per_class < 1) raise(Errc::invalid_dataset, "n_per_class must be at least 1");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    const double sigma = std::sqrt(spec.variance);

    Dataset out;
    out.n_classes = 2;
    out.instances.reserve(2 * spec.n_per_class);
    for (int cls = 1; cls <= 2; ++cls) {
        const double* mean = (cls == 1) ? spec.mean_0 : spec.mean_1;
        for (std::size_t i = 0; i < spec.n_per_class; ++i) {
            Instance inst;
            inst.features = {mean[0] + sigma * unit(rng), mean[1] + sigma * unit(rng)};
            inst.label = cls;
            out.instances.push_back(std::move(inst));
        }
    }
    return out;
}

Dataset gen_two_gaussians_unfair(const GaussianSpec& spec, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) raise(Errc::invalid_probability, "p must lie in [0, 1]");

    Dataset out = gen_two_gaussians(spec, seed);
    out.has_sensitive = true;

    // S | class 1 is +1 with probability p; S | class 2 with probability 1-p.
    std::mt19937_64 rng(mix_seed(seed, 0x5E5ED1));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (Instance& inst : out.instances) {
        const double q = (*inst.label == 1) ? p : 1.0 - p;
        inst.sensitive = (coin(rng) < q) ? +1 : -1;
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_number(const std::string& text, const std::string& column, std::size_t row) {
    if (text.empty())
        raise(Errc::bad_numeric_value,
              "empty value in column '" + column + "', row " + std::to_string(row));
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        raise(Errc::bad_numeric_value,
              "cannot parse '" + text + "' in column '" + column + "', row " + std::to_string(row));
    }
    if (used != text.size() || !std::isfinite(value))
        raise(Errc::bad_numeric_value,
              "cannot parse '" + text + "' in column '" + column + "', row " + std::to_string(row));
    return value;
}

bool all_numeric(const std::set<std::string>& values) {
    for (const std::string& v : values) {
        if (v.empty()) return false;
        std::size_t used = 0;
        try {
            (void)std::stod(v, &used);
        } catch (const std::exception&) {
            return false;
        }
        if (used != v.size()) return false;
    }
    return true;
}

// Distinct values in index order: numeric when every value parses as a
// number, lexicographic otherwise.
std::vector<std::string> sorted_levels(const std::set<std::string>& values) {
    std::vector<std::string> levels(values.begin(), values.end());
    if (all_numeric(values))
        std::sort(levels.begin(), levels.end(), [](const std::string& a, const std::string& b) {
            return std::stod(a) < std::stod(b);
        });
    return levels;
}

} // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) raise(Errc::io_error, "cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) raise(Errc::empty_file, "'" + path + "' has no header row");
    const std::vector<std::string> header = split_csv_line(line);

    auto column_index = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            raise(Errc::missing_column, "column '" + name + "' not found in '" + path + "'");
        return static_cast<std::size_t>(it - header.begin());
    };

    if (schema.feature_columns.empty())
        raise(Errc::missing_column, "schema lists no feature columns");
    if (schema.label_column.empty())
        raise(Errc::missing_column, "schema lists no label column");

    const std::set<std::string> categorical(schema.categorical_columns.begin(),
                                            schema.categorical_columns.end());
    for (const std::string& c : schema.categorical_columns)
        if (std::find(schema.feature_columns.begin(), schema.feature_columns.end(), c) ==
            schema.feature_columns.end())
            raise(Errc::missing_column, "categorical column '" + c + "' is not a feature column");

    std::vector<std::size_t> feature_idx;
    for (const std::string& c : schema.feature_columns) feature_idx.push_back(column_index(c));
    const std::size_t label_idx = column_index(schema.label_column);
    const bool with_sensitive = !schema.sensitive_column.empty();
    const std::size_t sensitive_idx = with_sensitive ? column_index(schema.sensitive_column) : 0;

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != header.size())
            raise(Errc::invalid_dataset, "row " + std::to_string(rows.size() + 2) + " has " +
                                             std::to_string(fields.size()) + " fields, expected " +
                                             std::to_string(header.size()));
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) raise(Errc::empty_file, "'" + path + "' has no data rows");

    // Level maps for categoricals, the label, and the sensitive column.
    std::map<std::string, std::vector<std::string>> cat_levels;
    for (std::size_t j = 0; j < schema.feature_columns.size(); ++j) {
        const std::string& name = schema.feature_columns[j];
        if (!categorical.count(name)) continue;
        std::set<std::string> values;
        for (const auto& row : rows) values.insert(row[feature_idx[j]]);
        cat_levels[name] = sorted_levels(values);
    }

    std::set<std::string> label_values;
    for (const auto& row : rows) label_values.insert(row[label_idx]);
    const std::vector<std::string> label_levels = sorted_levels(label_values);
    if (label_levels.size() < 2)
        raise(Errc::invalid_dataset, "label column has fewer than 2 distinct values");

    std::vector<std::string> sensitive_levels;
    if (with_sensitive) {
        std::set<std::string> values;
        for (const auto& row : rows) values.insert(row[sensitive_idx]);
        if (values.size() != 2)
            raise(Errc::unmappable_sensitive, "sensitive column has " +
                                                  std::to_string(values.size()) +
                                                  " distinct values, need exactly 2");
        sensitive_levels = sorted_levels(values);
    }

    auto level_of = [](const std::vector<std::string>& levels, const std::string& v) {
        return static_cast<std::size_t>(
            std::find(levels.begin(), levels.end(), v) - levels.begin());
    };

    // Numeric features first (schema order), then one-hot blocks appended.
    Dataset out;
    out.n_classes = static_cast<int>(label_levels.size());
    out.has_sensitive = with_sensitive;
    out.instances.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Instance& inst = out.instances[r];
        for (std::size_t j = 0; j < schema.feature_columns.size(); ++j) {
            if (categorical.count(schema.feature_columns[j])) continue;
            inst.features.push_back(
                parse_number(rows[r][feature_idx[j]], schema.feature_columns[j], r + 2));
        }
        for (std::size_t j = 0; j < schema.feature_columns.size(); ++j) {
            const std::string& name = schema.feature_columns[j];
            auto it = cat_levels.find(name);
            if (it == cat_levels.end()) continue;
            const std::vector<std::string>& levels = it->second;
            std::vector<double> onehot(levels.size(), 0.0);
            onehot[level_of(levels, rows[r][feature_idx[j]])] = 1.0;
            inst.features.insert(inst.features.end(), onehot.begin(), onehot.end());
        }
        inst.label = static_cast<int>(level_of(label_levels, rows[r][label_idx])) + 1;
        if (with_sensitive)
            inst.sensitive = level_of(sensitive_levels, rows[r][sensitive_idx]) == 0 ? -1 : +1;
    }

    // Standardize the numeric (non-one-hot) block over the whole file.
    const std::size_t n_numeric =
        schema.feature_columns.size() - schema.categorical_columns.size();
    for (std::size_t j = 0; j < n_numeric; ++j) {
        double mean = 0.0;
        for (const Instance& inst : out.instances) mean += inst.features[j];
        mean /= static_cast<double>(out.instances.size());
        double var = 0.0;
        for (const Instance& inst : out.instances) {
            const double d = inst.features[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(out.instances.size());
        const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
        for (Instance& inst : out.instances) inst.features[j] = (inst.features[j] - mean) * inv;
    }

    out.validate();
    return out;
}

Oracle::Oracle(std::vector<int> hidden_labels)
    : labels_(std::move(hidden_labels)),
      consumed_(labels_.size(), false),
      remaining_(labels_.size()) {}

int Oracle::query(std::size_t pool_index) {
    if (pool_index >= labels_.size())
        raise(Errc::index_out_of_pool,
              "pool index " + std::to_string(pool_index) + " out of range");
    if (consumed_[pool_index])
        raise(Errc::already_queried,
              "pool index " + std::to_string(pool_index) + " already queried");
    consumed_[pool_index] = true;
    --remaining_;
    return labels_[pool_index];
}

bool Oracle::queried(std::size_t pool_index) const {
    if (pool_index >= labels_.size())
        raise(Errc::index_out_of_pool,
              "pool index " + std::to_string(pool_index) + " out of range");
    return consumed_[pool_index];
}

Splits make_splits(const Dataset& dataset, const SplitSpec& spec) {
    if (spec.initial_train_size < 2)
        raise(Errc::infeasible_split, "initial train size must be at least 2");
    if (spec.initial_train_size + spec.test_size > dataset.size())
        raise(Errc::infeasible_split,
              "train + test sizes exceed the dataset (" + std::to_string(dataset.size()) + ")");
    for (std::size_t i = 0; i < dataset.instances.size(); ++i)
        if (!dataset.instances[i].label)
            raise(Errc::missing_label, "instance " + std::to_string(i) + " has no label");

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    // The initial train set must carry at least two classes for the first
    // fit; a degenerate draw is reshuffled, up to 10 attempts.
    for (int attempt = 0; attempt < 10; ++attempt) {
        std::mt19937_64 rng(mix_seed(spec.seed, 0x9D117 + static_cast<std::uint64_t>(attempt)));
        std::shuffle(order.begin(), order.end(), rng);

        std::span<const std::size_t> test_ids(order.data(), spec.test_size);
        std::span<const std::size_t> train_ids(order.data() + spec.test_size,
                                               spec.initial_train_size);
        std::set<int> train_classes;
        for (std::size_t idx : train_ids) train_classes.insert(*dataset.instances[idx].label);
        if (train_classes.size() < 2) continue;

        Splits out;
        out.test = subset(dataset, test_ids);
        out.train = subset(dataset, train_ids);

        const std::size_t used = spec.test_size + spec.initial_train_size;
        std::span<const std::size_t> pool_ids(order.data() + used, dataset.size() - used);
        out.pool = subset(dataset, pool_ids);
        std::vector<int> hidden;
        hidden.reserve(out.pool.size());
        for (Instance& inst : out.pool.instances) {
            hidden.push_back(*inst.label);
            inst.label.reset();
        }
        out.oracle = Oracle(std::move(hidden));
        return out;
    }
    raise(Errc::cold_start_failure, "initial train set kept collapsing to one class");
}

} // namespace data
} // namespace fal
