#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "fal/dataset.hpp"

namespace fal::model {

enum class ModelKind { softmax_regression, bagged_committee, boosted_stumps };

// Maps an Instance onto the numeric design vector a model consumes:
// standardized features, optionally followed by the raw sensitive value.
// Statistics are taken from every dataset passed to fit_encoder (the engine
// supplies train + pool so the map is constant while instances migrate).
struct FeatureEncoder {
    std::vector<double> mean;
    std::vector<double> inv_std;  // 1/std, 0 for constant columns
    bool include_sensitive = true;

    std::size_t encoded_dim() const { return mean.size() + (include_sensitive ? 1 : 0); }
    std::vector<double> encode(const Instance& x) const;
};

FeatureEncoder fit_encoder(std::span<const Dataset* const> sources, bool include_sensitive);

struct ModelConfig {
    ModelKind kind = ModelKind::softmax_regression;
    // softmax regression
    double learning_rate = 0.1;
    int iterations = 500;
    double l2 = 1e-4;
    // bagged committee
    int committee_size = 8;
    // boosted stumps
    int boosting_rounds = 30;
    int stump_depth = 1;

    bool include_sensitive = true;
    std::uint64_t seed = 0;
    // When set, used verbatim; otherwise fit() derives one from the train set.
    std::optional<FeatureEncoder> encoder;
};

class ProbabilisticClassifier {
public:
    virtual ~ProbabilisticClassifier() = default;

    virtual std::string_view kind() const = 0;
    virtual bool trained() const = 0;
    virtual int n_classes() const = 0;

    // K nonnegative reals summing to 1 (within 1e-9).
    std::vector<double> predict_proba(const Instance& x) const;
    // argmax of predict_proba, ties to the lowest class index.
    int predict(const Instance& x) const;

    virtual bool gradient_capable() const { return false; }
    // Euclidean norm of the single-example cross-entropy gradient over all
    // model parameters, evaluated at (x, label). Gradient-capable kinds only.
    virtual double training_gradient_norm(const Instance& x, int label) const;

protected:
    virtual std::vector<double> proba_impl(const Instance& x) const = 0;
    void check_ready(const Instance& x) const;
    virtual std::size_t expected_dim() const = 0;
};

using ClassifierPtr = std::shared_ptr<const ProbabilisticClassifier>;

class SoftmaxRegression final : public ProbabilisticClassifier {
public:
    SoftmaxRegression() = default;  // untrained

    std::string_view kind() const override { return "softmax_regression"; }
    bool trained() const override { return trained_; }
    int n_classes() const override { return n_classes_; }
    bool gradient_capable() const override { return true; }
    double training_gradient_norm(const Instance& x, int label) const override;

    // Row-major K x (encoded_dim + 1); last column is the bias.
    const std::vector<double>& weights() const { return weights_; }
    void set_weights(std::vector<double> w);
    const FeatureEncoder& encoder() const { return encoder_; }

    // Cross-entropy of the single example under the current weights; the
    // finite-difference oracle in the tests differentiates this.
    double example_loss(const Instance& x, int label) const;

    // Continues gradient descent from the current weights on a new train set.
    SoftmaxRegression refit(const Dataset& train, int steps) const;

    static SoftmaxRegression train(const ModelConfig& config, const Dataset& train,
                                   std::span<const double> instance_weights = {});

protected:
    std::vector<double> proba_impl(const Instance& x) const override;
    std::size_t expected_dim() const override;

private:
    std::vector<double> logits(std::span<const double> encoded) const;
    void descend(const Dataset& train, std::span<const double> instance_weights, int steps);

    FeatureEncoder encoder_;
    std::vector<double> weights_;
    int n_classes_ = 0;
    double learning_rate_ = 0.1;
    double l2_ = 1e-4;
    bool trained_ = false;
};

// Weighted ensemble used both by committee models and by the
// query-by-committee strategies.
struct Committee {
    std::vector<ClassifierPtr> members;
    std::vector<double> weights;  // uniform for bagging, SAMME alphas for boosting

    std::size_t size() const { return members.size(); }
};

class BaggedCommittee final : public ProbabilisticClassifier {
public:
    std::string_view kind() const override { return "bagged_committee"; }
    bool trained() const override { return !committee_.members.empty(); }
    int n_classes() const override { return n_classes_; }

    const Committee& members() const { return committee_; }

    static BaggedCommittee train(const ModelConfig& config, const Dataset& train,
                                 std::span<const double> instance_weights = {});

protected:
    std::vector<double> proba_impl(const Instance& x) const override;
    std::size_t expected_dim() const override { return dim_; }

private:
    Committee committee_;
    int n_classes_ = 0;
    std::size_t dim_ = 0;
};

class BoostedStumps final : public ProbabilisticClassifier {
public:
    std::string_view kind() const override { return "boosted_stumps"; }
    bool trained() const override { return !committee_.members.empty(); }
    int n_classes() const override { return n_classes_; }

    const Committee& members() const { return committee_; }

    static BoostedStumps train(const ModelConfig& config, const Dataset& train,
                               std::span<const double> instance_weights = {});

protected:
    std::vector<double> proba_impl(const Instance& x) const override;
    std::size_t expected_dim() const override { return dim_; }

private:
    Committee committee_;
    int n_classes_ = 0;
    std::size_t dim_ = 0;
};

// Trains the configured model kind. Preconditions: nonempty train set, every
// instance labeled, at least two distinct labels.
ClassifierPtr fit(const ModelConfig& config, const Dataset& train);

// Weighted variant used by boosting; weights must be nonnegative, one per
// train instance.
ClassifierPtr fit_weighted(const ModelConfig& config, const Dataset& train,
                           std::span<const double> instance_weights);

// C models of the configured kind, each trained on a size-|train| bootstrap.
Committee bag_committee(const ModelConfig& config, const Dataset& train, int n_members,
                        std::uint64_t seed);

// Same, with bootstrap draws biased by per-instance weights.
Committee bag_committee_weighted(const ModelConfig& config, const Dataset& train, int n_members,
                                 std::uint64_t seed, std::span<const double> instance_weights);

// SAMME boosting of the configured kind: the round models with their alphas.
Committee boost_committee(const ModelConfig& config, const Dataset& train, int n_rounds,
                          std::uint64_t seed);

// Retrains with one extra labeled example: softmax regression warm-starts and
// runs `steps` gradient iterations, other kinds refit from scratch.
ClassifierPtr refit_with_example(const ClassifierPtr& current, const ModelConfig& config,
                                 const Dataset& train, const Instance& extra, int steps);

} // namespace fal::model
