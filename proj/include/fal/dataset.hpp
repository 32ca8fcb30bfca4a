#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fal/error.hpp"

namespace fal {

// One labeled-or-unlabeled example. Labels are 1-based class indices in
// [1, K]; the sensitive attribute, when present, is -1 or +1.
struct Instance {
    std::vector<double> features;
    std::optional<int> sensitive;
    std::optional<int> label;
};

struct Dataset {
    std::vector<Instance> instances;
    int n_classes = 0;
    bool has_sensitive = false;

    std::size_t size() const { return instances.size(); }
    bool empty() const { return instances.empty(); }
    std::size_t dim() const { return instances.empty() ? 0 : instances.front().features.size(); }

    // Enforces: uniform feature dimension, finite features, K >= 2, labels
    // in [1, K], sensitive values in {-1, +1} and present on every instance
    // when has_sensitive is set.
    void validate() const;
};

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

namespace data {

struct GaussianSpec {
    std::size_t n_per_class = 1000;
    double mean_0[2] = {-2.0, 0.0};
    double mean_1[2] = {+2.0, 0.0};
    double variance = 1.0;
};

// Two isotropic 2-D Gaussian classes, n_per_class each, labels 1 and 2.
Dataset gen_two_gaussians(const GaussianSpec& spec, std::uint64_t seed);

// Same point cloud plus a sensitive attribute coupled to the label:
// P(S=+1 | class 1) = p and P(S=+1 | class 2) = 1 - p.
Dataset gen_two_gaussians_unfair(const GaussianSpec& spec, double p, std::uint64_t seed);

struct CsvSchema {
    std::vector<std::string> feature_columns;
    std::string label_column;
    std::string sensitive_column;               // empty = no sensitive attribute
    std::vector<std::string> categorical_columns; // subset of feature_columns
};

// Loads a UTF-8 comma-separated file with a header row. Categorical feature
// columns are one-hot encoded (levels in sorted order), numeric columns are
// standardized to zero mean / unit variance over the file. Label indices
// follow sorted distinct value order (numeric when every value parses as a
// number, lexicographic otherwise); the sensitive column must have exactly
// two distinct values, mapped to -1/+1 in sorted order.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

struct SplitSpec {
    std::size_t initial_train_size = 10;
    std::size_t test_size = 500;
    std::uint64_t seed = 0;
};

// Reveals masked pool labels, each index at most once.
class Oracle {
public:
    Oracle() = default;
    explicit Oracle(std::vector<int> hidden_labels);

    int query(std::size_t pool_index);
    bool queried(std::size_t pool_index) const;
    std::size_t pool_size() const { return labels_.size(); }
    std::size_t remaining() const { return remaining_; }

private:
    std::vector<int> labels_;
    std::vector<bool> consumed_;
    std::size_t remaining_ = 0;
};

struct Splits {
    Dataset train;  // labeled
    Dataset pool;   // labels masked
    Dataset test;   // labeled, drawn passively up front
    Oracle oracle;  // releases pool labels on query
};

// Disjoint uniform-random partition of a fully labeled dataset into
// test / train / pool; pool labels are masked behind the oracle.
Splits make_splits(const Dataset& dataset, const SplitSpec& spec);

} // namespace data
} // namespace fal
