#include "fal/classifier.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>

#include "fal/rng.hpp"

namespace fal::model {

namespace {

void check_train_set(const Dataset& train) {
    if (train.empty()) raise(Errc::empty_train_set, "empty train set");
    std::set<int> classes;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (!train.instances[i].label)
            raise(Errc::missing_label, "train instance " + std::to_string(i) + " has no label");
        classes.insert(*train.instances[i].label);
    }
    if (classes.size() < 2)
        raise(Errc::single_class_train_set, "train set carries a single class");
}

void check_config(const ModelConfig& config) {
    if (config.learning_rate <= 0.0) raise(Errc::config_error, "learning_rate must be positive");
    if (config.iterations < 0) raise(Errc::config_error, "iterations must be nonnegative");
    if (config.l2 < 0.0) raise(Errc::config_error, "l2 must be nonnegative");
    if (config.committee_size < 2) raise(Errc::committee_too_small, "committee_size must be >= 2");
    if (config.boosting_rounds < 1) raise(Errc::config_error, "boosting_rounds must be >= 1");
    if (config.stump_depth < 1) raise(Errc::config_error, "stump_depth must be >= 1");
}

std::vector<double> normalized_weights(const Dataset& train, std::span<const double> raw) {
    std::vector<double> w;
    if (raw.empty()) {
        w.assign(train.size(), 1.0 / static_cast<double>(train.size()));
        return w;
    }
    if (raw.size() != train.size())
        raise(Errc::length_mismatch, "instance weight count does not match train size");
    double total = 0.0;
    for (double v : raw) {
        if (!(v >= 0.0)) raise(Errc::invalid_distribution, "instance weights must be nonnegative");
        total += v;
    }
    if (total <= 0.0) raise(Errc::invalid_distribution, "instance weights sum to zero");
    w.assign(raw.begin(), raw.end());
    for (double& v : w) v /= total;
    return w;
}

std::vector<double> softmax(std::vector<double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : logits) v /= total;
    return logits;
}

} // namespace

std::vector<double> FeatureEncoder::encode(const Instance& x) const {
    if (x.features.size() != mean.size())
        raise(Errc::dimension_mismatch, "instance has dimension " +
                                            std::to_string(x.features.size()) + ", expected " +
                                            std::to_string(mean.size()));
    std::vector<double> out(encoded_dim());
    for (std::size_t j = 0; j < mean.size(); ++j) out[j] = (x.features[j] - mean[j]) * inv_std[j];
    if (include_sensitive) {
        if (!x.sensitive) raise(Errc::missing_sensitive, "instance lacks the sensitive attribute");
        out[mean.size()] = static_cast<double>(*x.sensitive);
    }
    return out;
}

FeatureEncoder fit_encoder(std::span<const Dataset* const> sources, bool include_sensitive) {
    std::size_t n = 0;
    std::size_t d = 0;
    for (const Dataset* ds : sources) {
        if (ds->empty()) continue;
        if (n == 0) d = ds->dim();
        else if (ds->dim() != d)
            raise(Errc::dimension_mismatch, "encoder sources disagree on dimension");
        n += ds->size();
    }
    if (n == 0) raise(Errc::empty_train_set, "no instances to fit the encoder on");

    FeatureEncoder enc;
    enc.include_sensitive = include_sensitive;
    enc.mean.assign(d, 0.0);
    enc.inv_std.assign(d, 0.0);
    for (const Dataset* ds : sources)
        for (const Instance& inst : ds->instances)
            for (std::size_t j = 0; j < d; ++j) enc.mean[j] += inst.features[j];
    for (double& m : enc.mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (const Dataset* ds : sources)
        for (const Instance& inst : ds->instances)
            for (std::size_t j = 0; j < d; ++j) {
                const double delta = inst.features[j] - enc.mean[j];
                var[j] += delta * delta;
            }
    for (std::size_t j = 0; j < d; ++j)
        enc.inv_std[j] = var[j] > 0.0 ? 1.0 / std::sqrt(var[j] / static_cast<double>(n)) : 0.0;
    return enc;
}

// ---------------------------------------------------------------------------
// ProbabilisticClassifier base
// ---------------------------------------------------------------------------

std::vector<double> ProbabilisticClassifier::predict_proba(const Instance& x) const {
    check_ready(x);
    return proba_impl(x);
}

int ProbabilisticClassifier::predict(const Instance& x) const {
    const std::vector<double> p = predict_proba(x);
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
        if (p[k] > p[best]) best = k;
    return static_cast<int>(best) + 1;
}

double ProbabilisticClassifier::training_gradient_norm(const Instance&, int) const {
    raise(Errc::gradient_unsupported,
          std::string(kind()) + " exposes no per-example training gradient");
}

void ProbabilisticClassifier::check_ready(const Instance& x) const {
    if (!trained()) raise(Errc::untrained_model, "model has not been trained");
    if (x.features.size() != expected_dim())
        raise(Errc::dimension_mismatch, "instance has dimension " +
                                            std::to_string(x.features.size()) + ", expected " +
                                            std::to_string(expected_dim()));
}

// ---------------------------------------------------------------------------
// Softmax regression
// ---------------------------------------------------------------------------

std::vector<double> SoftmaxRegression::logits(std::span<const double> encoded) const {
    const std::size_t cols = encoded.size() + 1;
    std::vector<double> out(n_classes_);
    for (int k = 0; k < n_classes_; ++k) {
        const double* row = weights_.data() + static_cast<std::size_t>(k) * cols;
        double acc = row[encoded.size()];  // bias
        for (std::size_t j = 0; j < encoded.size(); ++j) acc += row[j] * encoded[j];
        out[k] = acc;
    }
    return out;
}

std::vector<double> SoftmaxRegression::proba_impl(const Instance& x) const {
    return softmax(logits(encoder_.encode(x)));
}

std::size_t SoftmaxRegression::expected_dim() const { return encoder_.mean.size(); }

double SoftmaxRegression::example_loss(const Instance& x, int label) const {
    check_ready(x);
    if (label < 1 || label > n_classes_)
        raise(Errc::invalid_dataset, "class index out of [1, K]");
    const std::vector<double> p = softmax(logits(encoder_.encode(x)));
    return -std::log(std::max(p[static_cast<std::size_t>(label - 1)], 1e-300));
}

double SoftmaxRegression::training_gradient_norm(const Instance& x, int label) const {
    check_ready(x);
    if (label < 1 || label > n_classes_)
        raise(Errc::invalid_dataset, "class index out of [1, K]");
    const std::vector<double> z = encoder_.encode(x);
    std::vector<double> p = softmax(logits(z));
    p[static_cast<std::size_t>(label - 1)] -= 1.0;

    // Per-class gradient rows are (p_k - [k = label]) * (z, 1), so the full
    // norm factorizes into ||p - e_label|| * ||(z, 1)||.
    double p_norm2 = 0.0;
    for (double v : p) p_norm2 += v * v;
    double z_norm2 = 1.0;
    for (double v : z) z_norm2 += v * v;
    return std::sqrt(p_norm2 * z_norm2);
}

void SoftmaxRegression::set_weights(std::vector<double> w) {
    if (!trained_) raise(Errc::untrained_model, "set_weights needs a trained model for its shape");
    if (w.size() != weights_.size())
        raise(Errc::shape_mismatch, "weight vector has size " + std::to_string(w.size()) +
                                        ", expected " + std::to_string(weights_.size()));
    weights_ = std::move(w);
}

void SoftmaxRegression::descend(const Dataset& train, std::span<const double> instance_weights,
                                int steps) {
    const std::vector<double> w = normalized_weights(train, instance_weights);
    const std::size_t n = train.size();
    std::vector<std::vector<double>> encoded(n);
    for (std::size_t i = 0; i < n; ++i) encoded[i] = encoder_.encode(train.instances[i]);

    const std::size_t cols = encoder_.encoded_dim() + 1;
    std::vector<double> grad(weights_.size());
    for (int step = 0; step < steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::vector<double>& z = encoded[i];
            const std::vector<double> p = softmax(logits(z));
            const int y = *train.instances[i].label;
            for (int k = 0; k < n_classes_; ++k) {
                const double coef = w[i] * (p[k] - (k + 1 == y ? 1.0 : 0.0));
                double* row = grad.data() + static_cast<std::size_t>(k) * cols;
                for (std::size_t j = 0; j + 1 < cols; ++j) row[j] += coef * z[j];
                row[cols - 1] += coef;
            }
        }
        // L2 on everything but the bias column.
        for (int k = 0; k < n_classes_; ++k) {
            const std::size_t base = static_cast<std::size_t>(k) * cols;
            for (std::size_t j = 0; j + 1 < cols; ++j) grad[base + j] += l2_ * weights_[base + j];
        }
        for (std::size_t j = 0; j < weights_.size(); ++j) weights_[j] -= learning_rate_ * grad[j];
    }
}

SoftmaxRegression SoftmaxRegression::train(const ModelConfig& config, const Dataset& train,
                                           std::span<const double> instance_weights) {
    check_config(config);
    check_train_set(train);

    SoftmaxRegression m;
    m.encoder_ = config.encoder ? *config.encoder
                                : fit_encoder(std::array<const Dataset*, 1>{&train},
                                              config.include_sensitive);
    m.n_classes_ = train.n_classes;
    m.learning_rate_ = config.learning_rate;
    m.l2_ = config.l2;
    m.weights_.assign(static_cast<std::size_t>(m.n_classes_) * (m.encoder_.encoded_dim() + 1),
                      0.0);
    m.trained_ = true;
    m.descend(train, instance_weights, config.iterations);
    return m;
}

SoftmaxRegression SoftmaxRegression::refit(const Dataset& train, int steps) const {
    if (!trained_) raise(Errc::untrained_model, "refit needs a trained starting point");
    if (train.n_classes != n_classes_)
        raise(Errc::shape_mismatch, "refit train set disagrees on the class count");
    check_train_set(train);
    SoftmaxRegression m = *this;
    m.descend(train, {}, steps);
    return m;
}

// ---------------------------------------------------------------------------
// Depth-limited decision tree on encoded features (the boosting weak learner)
// ---------------------------------------------------------------------------

namespace {

class StumpTree final : public ProbabilisticClassifier {
public:
    std::string_view kind() const override { return "stump_tree"; }
    bool trained() const override { return trained_; }
    int n_classes() const override { return n_classes_; }

    static StumpTree train(const FeatureEncoder& encoder, const Dataset& train,
                           std::span<const double> weights, int depth) {
        StumpTree t;
        t.encoder_ = encoder;
        t.n_classes_ = train.n_classes;
        std::vector<std::vector<double>> encoded(train.size());
        std::vector<int> labels(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            encoded[i] = encoder.encode(train.instances[i]);
            labels[i] = *train.instances[i].label;
        }
        std::vector<std::size_t> rows(train.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        t.build(encoded, labels, weights, rows, depth);
        t.trained_ = true;
        return t;
    }

protected:
    std::vector<double> proba_impl(const Instance& x) const override {
        const std::vector<double> z = encoder_.encode(x);
        std::size_t node = 0;
        while (nodes_[node].feature >= 0)
            node = z[static_cast<std::size_t>(nodes_[node].feature)] <= nodes_[node].threshold
                       ? nodes_[node].left
                       : nodes_[node].right;
        return nodes_[node].dist;
    }
    std::size_t expected_dim() const override { return encoder_.mean.size(); }

private:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        std::size_t left = 0;
        std::size_t right = 0;
        std::vector<double> dist;
    };

    std::size_t build(const std::vector<std::vector<double>>& encoded,
                      const std::vector<int>& labels, std::span<const double> weights,
                      const std::vector<std::size_t>& rows, int depth) {
        const std::size_t id = nodes_.size();
        nodes_.emplace_back();

        std::vector<double> counts(static_cast<std::size_t>(n_classes_), 0.0);
        double total = 0.0;
        for (std::size_t r : rows) {
            counts[static_cast<std::size_t>(labels[r] - 1)] += weights[r];
            total += weights[r];
        }
        std::vector<double> dist(counts);
        if (total > 0.0)
            for (double& v : dist) v /= total;
        else
            std::fill(dist.begin(), dist.end(), 1.0 / static_cast<double>(n_classes_));
        nodes_[id].dist = std::move(dist);

        const bool pure =
            std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }) <= 1;
        if (depth == 0 || pure || total <= 0.0) return id;

        // Weighted-Gini split search; first-found wins ties, so lower feature
        // index and lower threshold are preferred.
        const std::size_t d = encoded.empty() ? 0 : encoded[0].size();
        double best_impurity = std::numeric_limits<double>::infinity();
        int best_feature = -1;
        double best_threshold = 0.0;
        std::vector<std::size_t> order(rows);
        for (std::size_t j = 0; j < d; ++j) {
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return encoded[a][j] < encoded[b][j];
            });
            std::vector<double> left_counts(static_cast<std::size_t>(n_classes_), 0.0);
            double left_total = 0.0;
            for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
                const std::size_t r = order[pos];
                left_counts[static_cast<std::size_t>(labels[r] - 1)] += weights[r];
                left_total += weights[r];
                const double lo = encoded[r][j];
                const double hi = encoded[order[pos + 1]][j];
                if (!(hi > lo)) continue;
                const double right_total = total - left_total;
                if (left_total <= 0.0 || right_total <= 0.0) continue;
                double gini_left = 1.0, gini_right = 1.0;
                for (int k = 0; k < n_classes_; ++k) {
                    const double cl = left_counts[static_cast<std::size_t>(k)] / left_total;
                    const double cr =
                        (counts[static_cast<std::size_t>(k)] -
                         left_counts[static_cast<std::size_t>(k)]) /
                        right_total;
                    gini_left -= cl * cl;
                    gini_right -= cr * cr;
                }
                const double impurity =
                    (left_total * gini_left + right_total * gini_right) / total;
                if (impurity < best_impurity) {
                    best_impurity = impurity;
                    best_feature = static_cast<int>(j);
                    best_threshold = lo + 0.5 * (hi - lo);
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t r : rows)
            (encoded[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_rows
                                                                                  : right_rows)
                .push_back(r);
        if (left_rows.empty() || right_rows.empty()) return id;

        nodes_[id].feature = best_feature;
        nodes_[id].threshold = best_threshold;
        const std::size_t left = build(encoded, labels, weights, left_rows, depth - 1);
        nodes_[id].left = left;
        const std::size_t right = build(encoded, labels, weights, right_rows, depth - 1);
        nodes_[id].right = right;
        return id;
    }

    FeatureEncoder encoder_;
    std::vector<Node> nodes_;
    int n_classes_ = 0;
    bool trained_ = false;
};

// SAMME boosting over an arbitrary weak-learner factory. Worse-than-random
// rounds stop the sequence (the first member is kept regardless, with a tiny
// positive weight, so the committee is never empty).
Committee samme_boost(
    const std::function<ClassifierPtr(const Dataset&, std::span<const double>)>& fit_member,
    const Dataset& train, int n_rounds, int n_classes,
    std::span<const double> initial_weights) {
    const std::size_t n = train.size();
    std::vector<double> w = normalized_weights(train, initial_weights);

    Committee out;
    for (int round = 0; round < n_rounds; ++round) {
        ClassifierPtr member = fit_member(train, w);
        double err = 0.0;
        std::vector<int> preds(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = member->predict(train.instances[i]);
            if (preds[i] != *train.instances[i].label) err += w[i];
        }
        const double clamped = std::clamp(err, 1e-12, 1.0 - 1e-12);
        double alpha =
            std::log((1.0 - clamped) / clamped) + std::log(static_cast<double>(n_classes - 1));
        if (alpha <= 0.0) {
            if (!out.members.empty()) break;
            alpha = 1e-6;
        }
        out.members.push_back(std::move(member));
        out.weights.push_back(alpha);
        if (err <= 1e-12) break;

        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (preds[i] != *train.instances[i].label) w[i] *= std::exp(alpha);
            total += w[i];
        }
        for (double& v : w) v /= total;
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Committee models
// ---------------------------------------------------------------------------

std::vector<double> BaggedCommittee::proba_impl(const Instance& x) const {
    std::vector<double> out(static_cast<std::size_t>(n_classes_), 0.0);
    for (const ClassifierPtr& member : committee_.members) {
        const std::vector<double> p = member->predict_proba(x);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += p[k];
    }
    for (double& v : out) v /= static_cast<double>(committee_.members.size());
    return out;
}

BaggedCommittee BaggedCommittee::train(const ModelConfig& config, const Dataset& train,
                                       std::span<const double> instance_weights) {
    check_config(config);
    check_train_set(train);
    ModelConfig inner = config;
    inner.kind = ModelKind::softmax_regression;
    if (!inner.encoder)
        inner.encoder = fit_encoder(std::array<const Dataset*, 1>{&train},
                                    config.include_sensitive);

    BaggedCommittee m;
    m.n_classes_ = train.n_classes;
    m.dim_ = train.dim();
    m.committee_ = bag_committee_weighted(inner, train, config.committee_size, config.seed,
                                          instance_weights);
    return m;
}

std::vector<double> BoostedStumps::proba_impl(const Instance& x) const {
    std::vector<double> out(static_cast<std::size_t>(n_classes_), 0.0);
    double total = 0.0;
    for (std::size_t m = 0; m < committee_.members.size(); ++m) {
        const int vote = committee_.members[m]->predict(x);
        out[static_cast<std::size_t>(vote - 1)] += committee_.weights[m];
        total += committee_.weights[m];
    }
    if (total <= 0.0) return std::vector<double>(out.size(), 1.0 / static_cast<double>(out.size()));
    for (double& v : out) v /= total;
    return out;
}

BoostedStumps BoostedStumps::train(const ModelConfig& config, const Dataset& train,
                                   std::span<const double> instance_weights) {
    check_config(config);
    check_train_set(train);
    const FeatureEncoder encoder =
        config.encoder ? *config.encoder
                       : fit_encoder(std::array<const Dataset*, 1>{&train},
                                     config.include_sensitive);

    BoostedStumps m;
    m.n_classes_ = train.n_classes;
    m.dim_ = train.dim();
    m.committee_ = samme_boost(
        [&](const Dataset& ds, std::span<const double> w) -> ClassifierPtr {
            return std::make_shared<StumpTree>(
                StumpTree::train(encoder, ds, w, config.stump_depth));
        },
        train, config.boosting_rounds, train.n_classes, instance_weights);
    return m;
}

// ---------------------------------------------------------------------------
// Free functions
// ---------------------------------------------------------------------------

ClassifierPtr fit(const ModelConfig& config, const Dataset& train) {
    return fit_weighted(config, train, {});
}

ClassifierPtr fit_weighted(const ModelConfig& config, const Dataset& train,
                           std::span<const double> instance_weights) {
    switch (config.kind) {
        case ModelKind::softmax_regression:
            return std::make_shared<SoftmaxRegression>(
                SoftmaxRegression::train(config, train, instance_weights));
        case ModelKind::bagged_committee:
            return std::make_shared<BaggedCommittee>(
                BaggedCommittee::train(config, train, instance_weights));
        case ModelKind::boosted_stumps:
            return std::make_shared<BoostedStumps>(
                BoostedStumps::train(config, train, instance_weights));
    }
    raise(Errc::config_error, "unknown model kind");
}

Committee bag_committee_weighted(const ModelConfig& config, const Dataset& train, int n_members,
                                 std::uint64_t seed, std::span<const double> instance_weights) {
    if (n_members < 2) raise(Errc::committee_too_small, "a committee needs at least 2 members");
    check_train_set(train);

    std::mt19937_64 rng(mix_seed(seed, 0xB0075));
    std::uniform_int_distribution<std::size_t> uniform(0, train.size() - 1);
    std::discrete_distribution<std::size_t> weighted;
    const bool use_weights = !instance_weights.empty();
    if (use_weights) {
        const std::vector<double> w = normalized_weights(train, instance_weights);
        weighted = std::discrete_distribution<std::size_t>(w.begin(), w.end());
    }

    Committee out;
    for (int m = 0; m < n_members; ++m) {
        // A bootstrap may collapse to one class on small train sets; redraw.
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 100)
                raise(Errc::single_class_train_set,
                      "bootstrap kept collapsing to a single class");
            std::vector<std::size_t> idx(train.size());
            for (std::size_t& v : idx) v = use_weights ? weighted(rng) : uniform(rng);
            Dataset boot = subset(train, idx);
            std::set<int> classes;
            for (const Instance& inst : boot.instances) classes.insert(*inst.label);
            if (classes.size() < 2) continue;
            ModelConfig member_config = config;
            member_config.seed = mix_seed(seed, 0x3E0 + static_cast<std::uint64_t>(m));
            out.members.push_back(fit(member_config, boot));
            out.weights.push_back(1.0);
            break;
        }
    }
    return out;
}

Committee bag_committee(const ModelConfig& config, const Dataset& train, int n_members,
                        std::uint64_t seed) {
    return bag_committee_weighted(config, train, n_members, seed, {});
}

Committee boost_committee(const ModelConfig& config, const Dataset& train, int n_rounds,
                          std::uint64_t seed) {
    if (n_rounds < 2) raise(Errc::committee_too_small, "a committee needs at least 2 members");
    check_train_set(train);
    ModelConfig member_config = config;
    member_config.seed = mix_seed(seed, 0x5A33E);
    if (!member_config.encoder)
        member_config.encoder = fit_encoder(std::array<const Dataset*, 1>{&train},
                                            config.include_sensitive);
    return samme_boost(
        [&](const Dataset& ds, std::span<const double> w) -> ClassifierPtr {
            return fit_weighted(member_config, ds, w);
        },
        train, n_rounds, train.n_classes, {});
}

ClassifierPtr refit_with_example(const ClassifierPtr& current, const ModelConfig& config,
                                 const Dataset& train, const Instance& extra, int steps) {
    if (!current || !current->trained())
        raise(Errc::untrained_model, "refit needs a trained starting point");
    if (!extra.label) raise(Errc::missing_label, "the added example carries no label");
    Dataset combined = train;
    combined.instances.push_back(extra);
    if (const auto* sm = dynamic_cast<const SoftmaxRegression*>(current.get()))
        return std::make_shared<SoftmaxRegression>(sm->refit(combined, steps));
    return fit(config, combined);
}

} // namespace fal::model
