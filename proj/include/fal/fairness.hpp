#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "fal/classifier.hpp"
#include "fal/dataset.hpp"

namespace fal::fairness {

// Empirical (P(S=-1), P(S=+1)) over a pool; both groups must be present.
std::pair<double, double> estimate_group_frequencies(const Dataset& pool);

// Base-model conditional probabilities on the pool, split by group.
struct GroupScoreMatrix {
    std::vector<std::vector<double>> group_minus;  // rows for S=-1
    std::vector<std::vector<double>> group_plus;   // rows for S=+1
};

GroupScoreMatrix group_score_matrix(const model::ProbabilisticClassifier& classifier,
                                    const Dataset& pool);

// The convex piecewise-linear calibration objective
//   F(lambda) = sum_s (1/N_s) sum_i max_k [ pi_s (p^s_i(k) + zeta^s_{i,k}) - s lambda_k ]
// with the jitter drawn once at construction and fixed thereafter.
class LambdaProblem {
public:
    LambdaProblem(const GroupScoreMatrix& scores, double pi_minus, double pi_plus,
                  double jitter_u, std::uint64_t seed);

    double objective(std::span<const double> lambda) const;
    std::vector<double> subgradient(std::span<const double> lambda) const;
    // Smooth surrogate: pointwise max replaced by temperature-scaled
    // log-sum-exp; used by the accelerated optimizer path.
    double smoothed_objective(std::span<const double> lambda, double temperature) const;
    std::vector<double> smoothed_gradient(std::span<const double> lambda,
                                          double temperature) const;

    int n_classes() const { return n_classes_; }

private:
    // jittered_[g][i][k] = pi_s (p^s_i(k) + zeta), g = 0 for S=-1, 1 for S=+1
    std::vector<std::vector<double>> jittered_[2];
    int n_classes_ = 0;
};

struct LambdaOptimizerConfig {
    int iterations = 2000;
    double step_size = 1.0;   // eta_t = step_size_r / sqrt(t), per restart round
    int restarts = 4;         // rounds; each restarts the schedule from the best point
    bool smoothed_accelerated = false;
    double temperature = 1e-3;
};

// Minimizes the calibration objective; the result is centered (zero mean)
// since the objective is flat along the all-ones direction.
std::vector<double> optimize_lambda(const LambdaProblem& problem,
                                    const LambdaOptimizerConfig& config = {});

struct FairnessParams {
    double jitter_u = 1e-5;
    LambdaOptimizerConfig optimizer;
    std::uint64_t seed = 0;
    // Test hook: skip calibration and leave the base model untouched
    // (lambda = 0, no jitter, no rescaling).
    bool identity = false;
};

// Group-frequency / dual-vector transform calibrated on the unlabeled pool.
// Immutable after calibration except for the prediction-time jitter stream.
class FairPostProcessor {
public:
    static FairPostProcessor calibrate(const model::ProbabilisticClassifier& classifier,
                                       const Dataset& pool, const FairnessParams& params);
    static FairPostProcessor identity(int n_classes);

    bool is_identity() const { return identity_; }
    double pi(int sensitive) const { return sensitive < 0 ? pi_minus_ : pi_plus_; }
    const std::vector<double>& lambda() const { return lambda_; }
    double jitter_u() const { return jitter_u_; }
    std::size_t calibration_pool_size() const { return calibration_pool_size_; }

    // One uniform draw in [0, jitter_u) per class, from the seeded stream.
    std::vector<double> draw_jitter() const;

    // pi_s (p + zeta) - s lambda on an externally supplied jitter row.
    std::vector<double> transform(std::span<const double> p, int sensitive,
                                  std::span<const double> jitter_row) const;
    // Same with a fresh jitter row from the stream.
    std::vector<double> transform(std::span<const double> p, int sensitive) const;

private:
    double pi_minus_ = 0.5;
    double pi_plus_ = 0.5;
    std::vector<double> lambda_;
    double jitter_u_ = 1e-5;
    std::size_t calibration_pool_size_ = 0;
    bool identity_ = false;
    mutable std::mt19937_64 jitter_rng_{0};
};

// pi_s (p + zeta) - s lambda, the rescored vector behind the fair argmax.
std::vector<double> fair_scores(std::span<const double> p, int sensitive, double pi_s,
                                std::span<const double> lambda, std::span<const double> jitter_row);

// argmax of the transformed scores, ties to the lowest class index; draws a
// fresh jitter row per call.
int fair_predict(const model::ProbabilisticClassifier& classifier, const FairPostProcessor& post,
                 const Instance& x);

// max_k | nu_{-1}(k) - nu_{+1}(k) | where nu_s(k) is the fraction of group-s
// instances predicted as class k.
double dp_unfairness(std::span<const int> predictions, std::span<const int> sensitive,
                     int n_classes);

// max over classes (with at least one correct prediction) of the gap between
// the group shares among correct predictions of that class.
double correct_rate_unfairness(std::span<const int> predictions, std::span<const int> labels,
                               std::span<const int> sensitive, int n_classes);

} // namespace fal::fairness
