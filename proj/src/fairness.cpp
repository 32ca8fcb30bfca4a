#include "fal/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fal/rng.hpp"

namespace fal::fairness {

namespace {

std::size_t argmax_lowest(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k)
        if (values[k] > values[best]) best = k;
    return best;
}

void center(std::vector<double>& lambda) {
    double mean = 0.0;
    for (double v : lambda) mean += v;
    mean /= static_cast<double>(lambda.size());
    for (double& v : lambda) v -= mean;
}

} // namespace

std::pair<double, double> estimate_group_frequencies(const Dataset& pool) {
    if (pool.empty()) raise(Errc::empty_input, "empty pool");
    std::size_t minus = 0, plus = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const Instance& inst = pool.instances[i];
        if (!inst.sensitive)
            raise(Errc::missing_sensitive,
                  "pool instance " + std::to_string(i) + " lacks the sensitive attribute");
        (*inst.sensitive < 0 ? minus : plus) += 1;
    }
    if (minus == 0 || plus == 0)
        raise(Errc::degenerate_group, "a sensitive group is absent from the pool");
    const double n = static_cast<double>(pool.size());
    return {static_cast<double>(minus) / n, static_cast<double>(plus) / n};
}

GroupScoreMatrix group_score_matrix(const model::ProbabilisticClassifier& classifier,
                                    const Dataset& pool) {
    GroupScoreMatrix out;
    for (const Instance& inst : pool.instances) {
        if (!inst.sensitive)
            raise(Errc::missing_sensitive, "pool instance lacks the sensitive attribute");
        (*inst.sensitive < 0 ? out.group_minus : out.group_plus)
            .push_back(classifier.predict_proba(inst));
    }
    return out;
}

LambdaProblem::LambdaProblem(const GroupScoreMatrix& scores, double pi_minus, double pi_plus,
                             double jitter_u, std::uint64_t seed) {
    if (scores.group_minus.empty() || scores.group_plus.empty())
        raise(Errc::degenerate_group, "both groups need at least one pool instance");
    if (jitter_u < 0.0) raise(Errc::config_error, "jitter bound must be nonnegative");
    n_classes_ = static_cast<int>(scores.group_minus.front().size());

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(0.0, jitter_u);
    const double pis[2] = {pi_minus, pi_plus};
    const std::vector<std::vector<double>>* groups[2] = {&scores.group_minus, &scores.group_plus};
    for (int g = 0; g < 2; ++g) {
        jittered_[g].reserve(groups[g]->size());
        for (const std::vector<double>& row : *groups[g]) {
            if (row.size() != static_cast<std::size_t>(n_classes_))
                raise(Errc::shape_mismatch, "score rows disagree on the class count");
            std::vector<double> scaled(row.size());
            for (std::size_t k = 0; k < row.size(); ++k) {
                const double z = jitter_u > 0.0 ? jitter(rng) : 0.0;
                scaled[k] = pis[g] * (row[k] + z);
                if (!std::isfinite(scaled[k]))
                    raise(Errc::non_finite_objective, "non-finite calibration score");
            }
            jittered_[g].push_back(std::move(scaled));
        }
    }
}

double LambdaProblem::objective(std::span<const double> lambda) const {
    if (lambda.size() != static_cast<std::size_t>(n_classes_))
        raise(Errc::shape_mismatch, "lambda length differs from the class count");
    double total = 0.0;
    for (int g = 0; g < 2; ++g) {
        const double sign = g == 0 ? -1.0 : 1.0;  // the group's s value
        double group_sum = 0.0;
        for (const std::vector<double>& row : jittered_[g]) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < row.size(); ++k)
                best = std::max(best, row[k] - sign * lambda[k]);
            group_sum += best;
        }
        total += group_sum / static_cast<double>(jittered_[g].size());
    }
    if (!std::isfinite(total)) raise(Errc::non_finite_objective, "objective is not finite");
    return total;
}

std::vector<double> LambdaProblem::subgradient(std::span<const double> lambda) const {
    if (lambda.size() != static_cast<std::size_t>(n_classes_))
        raise(Errc::shape_mismatch, "lambda length differs from the class count");
    // d/dlambda_k of a row's max term is -s on the argmax class, so the
    // subgradient is nu_minus(k) - nu_plus(k): the demographic-parity gap of
    // the lambda-shifted argmax rule.
    std::vector<double> grad(lambda.size(), 0.0);
    for (int g = 0; g < 2; ++g) {
        const double sign = g == 0 ? -1.0 : 1.0;
        const double share = 1.0 / static_cast<double>(jittered_[g].size());
        for (const std::vector<double>& row : jittered_[g]) {
            std::size_t best = 0;
            double best_value = row[0] - sign * lambda[0];
            for (std::size_t k = 1; k < row.size(); ++k) {
                const double value = row[k] - sign * lambda[k];
                if (value > best_value) {
                    best_value = value;
                    best = k;
                }
            }
            grad[best] -= sign * share;
        }
    }
    return grad;
}

double LambdaProblem::smoothed_objective(std::span<const double> lambda,
                                         double temperature) const {
    if (temperature <= 0.0) raise(Errc::config_error, "temperature must be positive");
    double total = 0.0;
    for (int g = 0; g < 2; ++g) {
        const double sign = g == 0 ? -1.0 : 1.0;
        double group_sum = 0.0;
        for (const std::vector<double>& row : jittered_[g]) {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < row.size(); ++k)
                top = std::max(top, row[k] - sign * lambda[k]);
            double lse = 0.0;
            for (std::size_t k = 0; k < row.size(); ++k)
                lse += std::exp((row[k] - sign * lambda[k] - top) / temperature);
            group_sum += top + temperature * std::log(lse);
        }
        total += group_sum / static_cast<double>(jittered_[g].size());
    }
    return total;
}

std::vector<double> LambdaProblem::smoothed_gradient(std::span<const double> lambda,
                                                     double temperature) const {
    if (temperature <= 0.0) raise(Errc::config_error, "temperature must be positive");
    std::vector<double> grad(lambda.size(), 0.0);
    std::vector<double> soft(lambda.size());
    for (int g = 0; g < 2; ++g) {
        const double sign = g == 0 ? -1.0 : 1.0;
        const double share = 1.0 / static_cast<double>(jittered_[g].size());
        for (const std::vector<double>& row : jittered_[g]) {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < row.size(); ++k)
                top = std::max(top, row[k] - sign * lambda[k]);
            double total = 0.0;
            for (std::size_t k = 0; k < row.size(); ++k) {
                soft[k] = std::exp((row[k] - sign * lambda[k] - top) / temperature);
                total += soft[k];
            }
            for (std::size_t k = 0; k < row.size(); ++k)
                grad[k] -= sign * share * soft[k] / total;
        }
    }
    return grad;
}

std::vector<double> optimize_lambda(const LambdaProblem& problem,
                                    const LambdaOptimizerConfig& config) {
    if (config.iterations < 1) raise(Errc::config_error, "optimizer needs at least 1 iteration");
    if (config.restarts < 1) raise(Errc::config_error, "optimizer needs at least 1 round");
    const std::size_t k_count = static_cast<std::size_t>(problem.n_classes());

    std::vector<double> best(k_count, 0.0);
    double best_value = problem.objective(best);

    if (config.smoothed_accelerated) {
        // Nesterov accelerated descent on the log-sum-exp surrogate.
        std::vector<double> lambda = best, momentum = best;
        const double step = config.temperature;  // 1/L for the LSE surrogate scale
        for (int t = 1; t <= config.iterations; ++t) {
            const std::vector<double> grad = problem.smoothed_gradient(momentum,
                                                                       config.temperature);
            std::vector<double> next(k_count);
            for (std::size_t k = 0; k < k_count; ++k) next[k] = momentum[k] - step * grad[k];
            center(next);
            const double mix = static_cast<double>(t - 1) / static_cast<double>(t + 2);
            for (std::size_t k = 0; k < k_count; ++k)
                momentum[k] = next[k] + mix * (next[k] - lambda[k]);
            lambda = std::move(next);
            const double value = problem.objective(lambda);
            if (value < best_value) {
                best_value = value;
                best = lambda;
            }
        }
        center(best);
        return best;
    }

    // Projected subgradient with best-iterate tracking. Rounds restart the
    // diminishing schedule from the incumbent with a geometrically smaller
    // base step, which turns the coarse early search into a local polish.
    const int per_round = std::max(1, config.iterations / config.restarts);
    double base_step = config.step_size;
    for (int round = 0; round < config.restarts; ++round) {
        std::vector<double> lambda = best;
        for (int t = 1; t <= per_round; ++t) {
            const std::vector<double> grad = problem.subgradient(lambda);
            double norm2 = 0.0;
            for (double v : grad) norm2 += v * v;
            if (norm2 == 0.0) break;  // zero subgradient: lambda is optimal
            const double step = base_step / std::sqrt(static_cast<double>(t));
            for (std::size_t k = 0; k < k_count; ++k) lambda[k] -= step * grad[k];
            center(lambda);
            const double value = problem.objective(lambda);
            if (value < best_value) {
                best_value = value;
                best = lambda;
            }
        }
        base_step *= 0.5;
    }
    center(best);
    return best;
}

FairPostProcessor FairPostProcessor::identity(int n_classes) {
    FairPostProcessor post;
    post.lambda_.assign(static_cast<std::size_t>(n_classes), 0.0);
    post.jitter_u_ = 0.0;
    post.identity_ = true;
    return post;
}

FairPostProcessor FairPostProcessor::calibrate(const model::ProbabilisticClassifier& classifier,
                                               const Dataset& pool,
                                               const FairnessParams& params) {
    if (params.identity) return identity(classifier.n_classes());

    FairPostProcessor post;
    std::tie(post.pi_minus_, post.pi_plus_) = estimate_group_frequencies(pool);
    const GroupScoreMatrix scores = group_score_matrix(classifier, pool);
    const LambdaProblem problem(scores, post.pi_minus_, post.pi_plus_, params.jitter_u,
                                mix_seed(params.seed, 0xCA11B));
    post.lambda_ = optimize_lambda(problem, params.optimizer);
    post.jitter_u_ = params.jitter_u;
    post.calibration_pool_size_ = pool.size();
    post.jitter_rng_.seed(mix_seed(params.seed, 0x21773));
    return post;
}

std::vector<double> FairPostProcessor::draw_jitter() const {
    std::vector<double> row(lambda_.size(), 0.0);
    if (jitter_u_ > 0.0) {
        std::uniform_real_distribution<double> jitter(0.0, jitter_u_);
        for (double& v : row) v = jitter(jitter_rng_);
    }
    return row;
}

std::vector<double> FairPostProcessor::transform(std::span<const double> p, int sensitive,
                                                 std::span<const double> jitter_row) const {
    if (identity_) return std::vector<double>(p.begin(), p.end());
    return fair_scores(p, sensitive, pi(sensitive), lambda_, jitter_row);
}

std::vector<double> FairPostProcessor::transform(std::span<const double> p, int sensitive) const {
    if (identity_) return std::vector<double>(p.begin(), p.end());
    const std::vector<double> jitter_row = draw_jitter();
    return fair_scores(p, sensitive, pi(sensitive), lambda_, jitter_row);
}

std::vector<double> fair_scores(std::span<const double> p, int sensitive, double pi_s,
                                std::span<const double> lambda,
                                std::span<const double> jitter_row) {
    if (sensitive != -1 && sensitive != 1)
        raise(Errc::missing_sensitive, "sensitive value must be -1 or +1");
    if (p.empty()) raise(Errc::invalid_distribution, "empty probability vector");
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) raise(Errc::invalid_distribution, "negative probability entry");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-6)
        raise(Errc::invalid_distribution, "probabilities do not sum to 1");
    if (lambda.size() != p.size() || jitter_row.size() != p.size())
        raise(Errc::shape_mismatch, "lambda/jitter lengths differ from the class count");

    std::vector<double> out(p.size());
    const double s = static_cast<double>(sensitive);
    for (std::size_t k = 0; k < p.size(); ++k)
        out[k] = pi_s * (p[k] + jitter_row[k]) - s * lambda[k];
    return out;
}

int fair_predict(const model::ProbabilisticClassifier& classifier, const FairPostProcessor& post,
                 const Instance& x) {
    const std::vector<double> p = classifier.predict_proba(x);
    if (post.is_identity()) return static_cast<int>(argmax_lowest(p)) + 1;
    if (!x.sensitive) raise(Errc::missing_sensitive, "instance lacks the sensitive attribute");
    const std::vector<double> scores = post.transform(p, *x.sensitive);
    return static_cast<int>(argmax_lowest(scores)) + 1;
}

double dp_unfairness(std::span<const int> predictions, std::span<const int> sensitive,
                     int n_classes) {
    if (predictions.empty()) raise(Errc::empty_input, "no predictions");
    if (predictions.size() != sensitive.size())
        raise(Errc::length_mismatch, "prediction and sensitive lengths differ");
    std::vector<double> count_minus(static_cast<std::size_t>(n_classes), 0.0);
    std::vector<double> count_plus(static_cast<std::size_t>(n_classes), 0.0);
    double n_minus = 0.0, n_plus = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] < 1 || predictions[i] > n_classes)
            raise(Errc::invalid_dataset, "prediction out of [1, K]");
        if (sensitive[i] < 0) {
            count_minus[static_cast<std::size_t>(predictions[i] - 1)] += 1.0;
            n_minus += 1.0;
        } else {
            count_plus[static_cast<std::size_t>(predictions[i] - 1)] += 1.0;
            n_plus += 1.0;
        }
    }
    if (n_minus == 0.0 || n_plus == 0.0)
        raise(Errc::degenerate_group, "a sensitive group is absent");
    double gap = 0.0;
    for (int k = 0; k < n_classes; ++k)
        gap = std::max(gap, std::abs(count_minus[static_cast<std::size_t>(k)] / n_minus -
                                     count_plus[static_cast<std::size_t>(k)] / n_plus));
    return gap;
}

double correct_rate_unfairness(std::span<const int> predictions, std::span<const int> labels,
                               std::span<const int> sensitive, int n_classes) {
    if (predictions.empty()) raise(Errc::empty_input, "no predictions");
    if (predictions.size() != labels.size() || predictions.size() != sensitive.size())
        raise(Errc::length_mismatch, "prediction/label/sensitive lengths differ");
    double gap = 0.0;
    bool any_class = false;
    for (int k = 1; k <= n_classes; ++k) {
        double correct_minus = 0.0, correct_plus = 0.0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            if (predictions[i] != k || labels[i] != k) continue;
            (sensitive[i] < 0 ? correct_minus : correct_plus) += 1.0;
        }
        const double total = correct_minus + correct_plus;
        if (total == 0.0) continue;  // classes with no correct prediction are skipped
        any_class = true;
        gap = std::max(gap, std::abs(correct_minus / total - correct_plus / total));
    }
    if (!any_class)
        raise(Errc::no_correct_predictions, "no class has any correct prediction");
    return gap;
}

} // namespace fal::fairness
