#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "fal/classifier.hpp"
#include "fal/dataset.hpp"

namespace fal::sampling {

enum class StrategyKind {
    random,
    least_confident,
    entropy,
    qbag_vote_entropy,
    qbag_mean_kl,
    qboost_vote_entropy,
    egl,
    eer,
    information_density,
};

std::string_view strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(std::string_view name);

// ---------------------------------------------------------------------------
// Importance scores. All follow a maximize-is-most-informative convention;
// criteria the literature states as minimizations are negated.
// ---------------------------------------------------------------------------

// -sum p log p, natural log, 0 log 0 = 0.
double entropy_score(std::span<const double> p);

// -max_k p_k: the smaller the top-class probability, the higher the score.
double least_confident_score(std::span<const double> p);

// Entropy of the hard-vote distribution of a committee; votes are 1-based
// class indices.
double vote_entropy_score(std::span<const int> votes, int n_classes);
double weighted_vote_entropy_score(std::span<const int> votes, std::span<const double> weights,
                                   int n_classes);

// Mean KL divergence of each member distribution from the member average.
// Zero member probabilities contribute zero; probabilities are floored at
// kKlFloor inside logarithms.
inline constexpr double kKlFloor = 1e-12;
double mean_kl_score(std::span<const std::vector<double>> member_probas);

// sum_k p_k(x) * ||grad loss(x, k)||, with p taken from the model itself.
double egl_score(const model::ProbabilisticClassifier& classifier, const Instance& x);
// Same, with the label-expectation weights supplied by the caller.
double egl_score(std::span<const double> p, const model::ProbabilisticClassifier& classifier,
                 const Instance& x);

// Negated expected residual error after hypothetically labeling x with each
// class and retraining: -sum_u sum_k p_k(x) (1 - max_v q^(x,k)_u(v)).
double eer_score(const model::ClassifierPtr& classifier, const model::ModelConfig& config,
                 const Dataset& train, const Instance& x, std::span<const double> p,
                 std::span<const Instance* const> evaluation_sample, int refit_steps);

// Mean cosine similarity between x and the pool, clamped below at zero
// (all-zero vectors count as similarity 0).
double mean_pool_similarity(const Instance& x, std::span<const Instance* const> pool);

// base_score * density^beta; beta = 0 leaves the base score untouched.
double information_density_score(double base_score, double density, double beta);

struct ScoredPool {
    std::vector<std::size_t> indices;  // pool identifiers, parallel to scores
    std::vector<double> scores;
};

// The `count` entries with the highest scores, ties to the lowest position.
// Returns positions into the scored pool, in (-score, position) order.
std::vector<std::size_t> select_batch(const ScoredPool& scored, std::size_t count);

// ---------------------------------------------------------------------------
// Strategy driver
// ---------------------------------------------------------------------------

struct StrategyConfig {
    StrategyKind kind = StrategyKind::random;
    int committee_size = 8;
    double density_beta = 1.0;
    int eer_sample_size = 50;
    int eer_refit_steps = 20;
    std::uint64_t seed = 0;
};

// Where a strategy reads probability vectors from. The plain source forwards
// the model; the fair source (engine) rewrites raw vectors through the
// calibrated post-processor.
class ProbaSource {
public:
    virtual ~ProbaSource() = default;
    virtual std::vector<double> proba(const Instance& x) const = 0;
    // Rewrites a raw model distribution for instance x (committee members).
    virtual std::vector<double> adapt(std::vector<double> raw, const Instance& x) const = 0;
    virtual int member_vote(std::span<const double> raw, const Instance& x) const;
};

class ModelProbaSource final : public ProbaSource {
public:
    explicit ModelProbaSource(const model::ProbabilisticClassifier& classifier)
        : classifier_(classifier) {}
    std::vector<double> proba(const Instance& x) const override;
    std::vector<double> adapt(std::vector<double> raw, const Instance&) const override;

private:
    const model::ProbabilisticClassifier& classifier_;
};

// Everything one scoring pass needs. `pool` holds the current unlabeled
// instances; `train` is the current labeled set (committee and retraining
// strategies fit on it).
struct ScoringContext {
    const model::ProbabilisticClassifier* classifier = nullptr;
    const model::ModelConfig* model_config = nullptr;
    model::ClassifierPtr classifier_ptr;  // for retraining strategies
    const Dataset* train = nullptr;
    std::vector<const Instance*> pool;
    const ProbaSource* probas = nullptr;
};

// One score per pool instance, aligned with context.pool. The RNG drives the
// random strategy, bootstrap committees and subsample draws; a fixed seed
// reproduces the pass exactly.
std::vector<double> score_pool(const StrategyConfig& strategy, const ScoringContext& context,
                               std::mt19937_64& rng);

} // namespace fal::sampling
