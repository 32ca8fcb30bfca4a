#include "fal/metrics.hpp"

#include <cmath>

#include "fal/error.hpp"

namespace fal::metrics {

namespace {

void check_lengths(std::span<const int> a, std::span<const int> b) {
    if (a.empty()) raise(Errc::empty_input, "no predictions to score");
    if (a.size() != b.size())
        raise(Errc::length_mismatch, "got " + std::to_string(a.size()) + " predictions for " +
                                         std::to_string(b.size()) + " labels");
}

} // namespace

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    check_lengths(predictions, labels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double f1_binary(std::span<const int> predictions, std::span<const int> labels, int positive) {
    check_lengths(predictions, labels);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool pred_pos = predictions[i] == positive;
        const bool is_pos = labels[i] == positive;
        if (pred_pos && is_pos) ++tp;
        else if (pred_pos) ++fp;
        else if (is_pos) ++fn;
    }
    // Zero-division convention: an empty denominator scores 0.
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double f1_macro(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
    check_lengths(predictions, labels);
    double total = 0.0;
    for (int k = 1; k <= n_classes; ++k) total += f1_binary(predictions, labels, k);
    return total / static_cast<double>(n_classes);
}

double f1_score(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
    if (n_classes == 2) return f1_binary(predictions, labels, 2);
    return f1_macro(predictions, labels, n_classes);
}

Mean mean_std(std::span<const double> values) {
    if (values.empty()) raise(Errc::empty_input, "no values to average");
    Mean out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) {
        const double d = v - out.mean;
        var += d * d;
    }
    out.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return out;
}

} // namespace fal::metrics
