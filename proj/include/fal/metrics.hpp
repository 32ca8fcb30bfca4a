#pragma once

#include <optional>
#include <span>
#include <vector>

namespace fal::metrics {

// Fraction of agreeing positions; inputs must be the same nonzero length.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Binary F1 with `positive` as the positive class; 0 when the denominator
// vanishes (no predicted and no actual positives).
double f1_binary(std::span<const int> predictions, std::span<const int> labels, int positive);

// Unweighted mean of per-class F1 over classes 1..n_classes.
double f1_macro(std::span<const int> predictions, std::span<const int> labels, int n_classes);

// Dispatch: binary F1 (positive class 2) for two classes, macro otherwise.
double f1_score(std::span<const int> predictions, std::span<const int> labels, int n_classes);

struct EvaluationReport {
    double accuracy = 0.0;
    double f1 = 0.0;
    std::optional<double> unfairness_dp;
    std::optional<double> unfairness_rate;
};

struct Mean {
    double mean = 0.0;
    double stddev = 0.0;  // population (divide by n)
};

Mean mean_std(std::span<const double> values);

} // namespace fal::metrics
