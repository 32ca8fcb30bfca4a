#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fal/classifier.hpp"
#include "fal/dataset.hpp"
#include "fal/fairness.hpp"
#include "fal/metrics.hpp"
#include "fal/sampling.hpp"

namespace fal::engine {

enum class StopReason {
    budget_exhausted,
    pool_exhausted,
    confidence_reached,
    error_target_reached,
    unfairness_stalled,
};

std::string_view stop_reason_name(StopReason reason);

struct StoppingConfig {
    int max_iterations = 100;
    std::optional<double> max_confidence;    // stop when every pool entropy < threshold
    std::optional<double> min_error;         // stop when test error <= target
    std::optional<int> unfairness_window;    // fair loop: stop after this many
                                             // iterations without unfairness progress
};

struct LoopState {
    int completed_iterations = 0;
    std::span<const double> pool_entropies;
    double test_error = 1.0;
};

// Empty optional means continue.
std::optional<StopReason> check_stopping(const StoppingConfig& rule, const LoopState& state);

struct RunConfig {
    model::ModelConfig model;
    sampling::StrategyConfig strategy;
    std::size_t batch_size = 1;
    StoppingConfig stopping;
    bool fair = false;
    fairness::FairnessParams fairness;
    std::uint64_t seed = 0;  // drives every stochastic choice of the run
};

struct IterationRecord {
    int iteration = 0;          // 0 is the initial fit, before any query
    std::size_t n_labeled = 0;
    metrics::EvaluationReport base;
    std::optional<metrics::EvaluationReport> fair;
};

struct RunTrace {
    std::vector<IterationRecord> records;
    std::vector<std::size_t> queried;  // pool positions in query order, no repeats
    StopReason stop_reason = StopReason::budget_exhausted;
    model::ClassifierPtr final_model;
};

// Alg-style pool loop: fit on train, score the pool, take the top batch,
// reveal its labels, move it to train, re-fit, evaluate on test; repeats
// until the stopping rule fires or the pool runs dry. Splits are consumed.
RunTrace run_active_learning(data::Splits splits, const RunConfig& config);

// Same loop with a per-iteration fairness calibration on the current pool:
// scoring consumes the post-processed model, and each record carries reports
// for both the raw and the post-processed classifier.
RunTrace run_fair_active_learning(data::Splits splits, const RunConfig& config);

// Presents the calibrated model to strategies: probability vectors become
// softmax(fair_scores / tau) with tau = max(pi_minus, pi_plus), which keeps
// the fair argmax; hard votes use the fair argmax directly. An identity
// post-processor short-circuits to the raw model output.
class FairProbaSource final : public sampling::ProbaSource {
public:
    FairProbaSource(const model::ProbabilisticClassifier& classifier,
                    const fairness::FairPostProcessor& post);

    std::vector<double> proba(const Instance& x) const override;
    std::vector<double> adapt(std::vector<double> raw, const Instance& x) const override;
    int member_vote(std::span<const double> raw, const Instance& x) const override;

private:
    const model::ProbabilisticClassifier& classifier_;
    const fairness::FairPostProcessor& post_;
    double tau_ = 1.0;
};

// Accuracy/F1 on a labeled set; unfairness metrics filled in when the set
// carries the sensitive attribute.
metrics::EvaluationReport evaluate(const model::ProbabilisticClassifier& classifier,
                                   const Dataset& test);
metrics::EvaluationReport evaluate_fair(const model::ProbabilisticClassifier& classifier,
                                        const fairness::FairPostProcessor& post,
                                        const Dataset& test);

struct AggregatedRecord {
    int iteration = 0;
    double n_labeled = 0.0;  // mean across runs
    metrics::Mean accuracy;
    metrics::Mean f1;
    std::optional<metrics::Mean> unfairness_dp;
    std::optional<metrics::Mean> unfairness_rate;
};

struct AggregatedTrace {
    std::vector<AggregatedRecord> base;
    std::vector<AggregatedRecord> fair;  // empty when the runs had fairness off
};

// Pointwise mean and population standard deviation across runs; the traces
// must agree on length and on which iterations carry fair reports.
AggregatedTrace aggregate_runs(std::span<const RunTrace> traces);

} // namespace fal::engine
