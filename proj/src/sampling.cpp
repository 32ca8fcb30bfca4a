#include "fal/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fal::sampling {

namespace {

constexpr std::string_view kNames[] = {
    "random",        "least_confident",     "entropy",
    "qbag_vote_entropy", "qbag_mean_kl",    "qboost_vote_entropy",
    "egl",           "eer",                 "information_density",
};

void check_distribution(std::span<const double> p) {
    if (p.empty()) raise(Errc::invalid_distribution, "empty probability vector");
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) raise(Errc::invalid_distribution, "negative probability entry");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-6)
        raise(Errc::invalid_distribution,
              "probabilities sum to " + std::to_string(total) + ", expected 1");
}

double plogp_entropy(std::span<const double> masses, double total) {
    double h = 0.0;
    for (double m : masses) {
        if (m <= 0.0) continue;  // 0 log 0 = 0
        const double q = m / total;
        h -= q * std::log(q);
    }
    return h;
}

} // namespace

std::string_view strategy_name(StrategyKind kind) {
    return kNames[static_cast<std::size_t>(kind)];
}

StrategyKind strategy_from_name(std::string_view name) {
    for (std::size_t i = 0; i < std::size(kNames); ++i)
        if (kNames[i] == name) return static_cast<StrategyKind>(i);
    raise(Errc::config_error, "unknown strategy '" + std::string(name) + "'");
}

double entropy_score(std::span<const double> p) {
    check_distribution(p);
    return plogp_entropy(p, 1.0);
}

double least_confident_score(std::span<const double> p) {
    check_distribution(p);
    return -*std::max_element(p.begin(), p.end());
}

double vote_entropy_score(std::span<const int> votes, int n_classes) {
    if (votes.size() < 2) raise(Errc::committee_too_small, "need at least 2 votes");
    std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
    for (int v : votes) {
        if (v < 1 || v > n_classes) raise(Errc::invalid_distribution, "vote out of [1, K]");
        counts[static_cast<std::size_t>(v - 1)] += 1.0;
    }
    return plogp_entropy(counts, static_cast<double>(votes.size()));
}

double weighted_vote_entropy_score(std::span<const int> votes, std::span<const double> weights,
                                   int n_classes) {
    if (votes.size() < 2) raise(Errc::committee_too_small, "need at least 2 votes");
    if (votes.size() != weights.size())
        raise(Errc::length_mismatch, "vote and weight counts differ");
    std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < votes.size(); ++i) {
        if (votes[i] < 1 || votes[i] > n_classes)
            raise(Errc::invalid_distribution, "vote out of [1, K]");
        if (!(weights[i] >= 0.0)) raise(Errc::invalid_distribution, "negative vote weight");
        counts[static_cast<std::size_t>(votes[i] - 1)] += weights[i];
        total += weights[i];
    }
    if (total <= 0.0) raise(Errc::invalid_distribution, "vote weights sum to zero");
    return plogp_entropy(counts, total);
}

double mean_kl_score(std::span<const std::vector<double>> member_probas) {
    if (member_probas.size() < 2)
        raise(Errc::committee_too_small, "need at least 2 member distributions");
    const std::size_t k_count = member_probas.front().size();
    for (const std::vector<double>& p : member_probas) {
        if (p.size() != k_count) raise(Errc::invalid_distribution, "member lengths differ");
        check_distribution(p);
    }
    // Mean anchored at the first member: identical members then share every
    // bit with the mean, making the disagreement exactly zero.
    std::vector<double> avg(member_probas.front());
    for (std::size_t k = 0; k < k_count; ++k) {
        double shift = 0.0;
        for (const std::vector<double>& p : member_probas) shift += p[k] - avg[k];
        avg[k] += shift / static_cast<double>(member_probas.size());
    }

    double total = 0.0;
    for (const std::vector<double>& p : member_probas)
        for (std::size_t k = 0; k < k_count; ++k) {
            if (p[k] <= 0.0) continue;
            total += p[k] * std::log(std::max(p[k], kKlFloor) / std::max(avg[k], kKlFloor));
        }
    return total / static_cast<double>(member_probas.size());
}

double egl_score(const model::ProbabilisticClassifier& classifier, const Instance& x) {
    return egl_score(classifier.predict_proba(x), classifier, x);
}

double egl_score(std::span<const double> p, const model::ProbabilisticClassifier& classifier,
                 const Instance& x) {
    check_distribution(p);
    if (!classifier.gradient_capable())
        raise(Errc::gradient_unsupported,
              std::string(classifier.kind()) + " exposes no per-example training gradient");
    double score = 0.0;
    for (int k = 1; k <= classifier.n_classes(); ++k) {
        const double weight = p[static_cast<std::size_t>(k - 1)];
        if (weight == 0.0) continue;
        score += weight * classifier.training_gradient_norm(x, k);
    }
    return score;
}

double eer_score(const model::ClassifierPtr& classifier, const model::ModelConfig& config,
                 const Dataset& train, const Instance& x, std::span<const double> p,
                 std::span<const Instance* const> evaluation_sample, int refit_steps) {
    if (!classifier || !classifier->trained())
        raise(Errc::untrained_model, "expected-error scoring needs a trained model");
    check_distribution(p);
    if (evaluation_sample.empty()) return 0.0;

    double expected = 0.0;
    for (int k = 1; k <= classifier->n_classes(); ++k) {
        const double weight = p[static_cast<std::size_t>(k - 1)];
        if (weight == 0.0) continue;
        Instance labeled = x;
        labeled.label = k;
        const model::ClassifierPtr updated =
            model::refit_with_example(classifier, config, train, labeled, refit_steps);
        double residual = 0.0;
        for (const Instance* u : evaluation_sample) {
            const std::vector<double> q = updated->predict_proba(*u);
            residual += 1.0 - *std::max_element(q.begin(), q.end());
        }
        expected += weight * residual;
    }
    return -expected;
}

double mean_pool_similarity(const Instance& x, std::span<const Instance* const> pool) {
    if (pool.empty()) raise(Errc::empty_pool, "similarity needs a nonempty pool");
    double x_norm = 0.0;
    for (double v : x.features) x_norm += v * v;
    x_norm = std::sqrt(x_norm);
    if (x_norm == 0.0) return 0.0;

    double total = 0.0;
    for (const Instance* u : pool) {
        if (u->features.size() != x.features.size())
            raise(Errc::dimension_mismatch, "pool instance dimension differs");
        double dot = 0.0, u_norm = 0.0;
        for (std::size_t j = 0; j < x.features.size(); ++j) {
            dot += x.features[j] * u->features[j];
            u_norm += u->features[j] * u->features[j];
        }
        if (u_norm > 0.0) total += dot / (x_norm * std::sqrt(u_norm));
    }
    // Negative mean similarity is clamped: representativeness weights scale
    // informativeness down, never flip its sign.
    return std::max(total / static_cast<double>(pool.size()), 0.0);
}

double information_density_score(double base_score, double density, double beta) {
    if (beta < 0.0) raise(Errc::config_error, "density exponent must be nonnegative");
    if (beta == 0.0) return base_score;
    return base_score * std::pow(std::max(density, 0.0), beta);
}

std::vector<std::size_t> select_batch(const ScoredPool& scored, std::size_t count) {
    if (scored.indices.size() != scored.scores.size())
        raise(Errc::shape_mismatch, "scored pool index/score lengths differ");
    if (count < 1) raise(Errc::invalid_batch, "batch size must be at least 1");
    if (count > scored.scores.size())
        raise(Errc::batch_exceeds_pool, "batch of " + std::to_string(count) + " from a pool of " +
                                            std::to_string(scored.scores.size()));
    std::vector<std::size_t> positions(scored.scores.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::sort(positions.begin(), positions.end(), [&](std::size_t a, std::size_t b) {
        if (scored.scores[a] != scored.scores[b]) return scored.scores[a] > scored.scores[b];
        return a < b;
    });
    positions.resize(count);
    return positions;
}

int ProbaSource::member_vote(std::span<const double> raw, const Instance& x) const {
    const std::vector<double> p = adapt(std::vector<double>(raw.begin(), raw.end()), x);
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
        if (p[k] > p[best]) best = k;
    return static_cast<int>(best) + 1;
}

std::vector<double> ModelProbaSource::proba(const Instance& x) const {
    return classifier_.predict_proba(x);
}

std::vector<double> ModelProbaSource::adapt(std::vector<double> raw, const Instance&) const {
    return raw;
}

namespace {

const model::ProbabilisticClassifier& need_model(const ScoringContext& context) {
    if (!context.classifier || !context.classifier->trained())
        raise(Errc::untrained_model, "this strategy needs a trained model");
    return *context.classifier;
}

void need_train(const ScoringContext& context) {
    if (!context.model_config || !context.train)
        raise(Errc::config_error, "this strategy needs the model config and the train set");
}

} // namespace

std::vector<double> score_pool(const StrategyConfig& strategy, const ScoringContext& context,
                               std::mt19937_64& rng) {
    const std::vector<const Instance*>& pool = context.pool;
    if (pool.empty()) raise(Errc::empty_pool, "nothing to score");

    std::optional<ModelProbaSource> fallback;
    const ProbaSource* probas = context.probas;
    if (!probas && strategy.kind != StrategyKind::random) {
        fallback.emplace(need_model(context));
        probas = &*fallback;
    }

    std::vector<double> scores(pool.size());
    switch (strategy.kind) {
        case StrategyKind::random: {
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (double& s : scores) s = unit(rng);
            break;
        }
        case StrategyKind::least_confident: {
            for (std::size_t i = 0; i < pool.size(); ++i)
                scores[i] = least_confident_score(probas->proba(*pool[i]));
            break;
        }
        case StrategyKind::entropy: {
            for (std::size_t i = 0; i < pool.size(); ++i)
                scores[i] = entropy_score(probas->proba(*pool[i]));
            break;
        }
        case StrategyKind::qbag_vote_entropy:
        case StrategyKind::qbag_mean_kl: {
            need_train(context);
            const int n_classes = need_model(context).n_classes();
            if (strategy.committee_size < 2)
                raise(Errc::committee_too_small, "committee strategies need C >= 2");
            const model::Committee committee = model::bag_committee(
                *context.model_config, *context.train, strategy.committee_size, rng());
            for (std::size_t i = 0; i < pool.size(); ++i) {
                if (strategy.kind == StrategyKind::qbag_vote_entropy) {
                    std::vector<int> votes;
                    votes.reserve(committee.members.size());
                    for (const model::ClassifierPtr& member : committee.members)
                        votes.push_back(
                            probas->member_vote(member->predict_proba(*pool[i]), *pool[i]));
                    scores[i] = vote_entropy_score(votes, n_classes);
                } else {
                    std::vector<std::vector<double>> dists;
                    dists.reserve(committee.members.size());
                    for (const model::ClassifierPtr& member : committee.members)
                        dists.push_back(
                            probas->adapt(member->predict_proba(*pool[i]), *pool[i]));
                    scores[i] = mean_kl_score(dists);
                }
            }
            break;
        }
        case StrategyKind::qboost_vote_entropy: {
            need_train(context);
            const int n_classes = need_model(context).n_classes();
            if (strategy.committee_size < 2)
                raise(Errc::committee_too_small, "committee strategies need C >= 2");
            const model::Committee committee = model::boost_committee(
                *context.model_config, *context.train, strategy.committee_size, rng());
            for (std::size_t i = 0; i < pool.size(); ++i) {
                std::vector<int> votes;
                votes.reserve(committee.members.size());
                for (const model::ClassifierPtr& member : committee.members)
                    votes.push_back(
                        probas->member_vote(member->predict_proba(*pool[i]), *pool[i]));
                if (votes.size() < 2) {
                    // Boosting can stop after one perfect round; a singleton
                    // committee is unanimous by definition.
                    scores[i] = 0.0;
                } else {
                    scores[i] = weighted_vote_entropy_score(
                        votes,
                        std::span<const double>(committee.weights.data(), votes.size()),
                        n_classes);
                }
            }
            break;
        }
        case StrategyKind::egl: {
            const model::ProbabilisticClassifier& classifier = need_model(context);
            for (std::size_t i = 0; i < pool.size(); ++i)
                scores[i] = egl_score(probas->proba(*pool[i]), classifier, *pool[i]);
            break;
        }
        case StrategyKind::eer: {
            need_train(context);
            need_model(context);
            if (strategy.eer_sample_size < 1)
                raise(Errc::config_error, "eer_sample_size must be at least 1");
            // One subsample doubles as candidate set and evaluation set; the
            // rest of the pool is pushed below every candidate score.
            std::vector<std::size_t> positions(pool.size());
            std::iota(positions.begin(), positions.end(), std::size_t{0});
            std::vector<std::size_t> chosen;
            std::sample(positions.begin(), positions.end(), std::back_inserter(chosen),
                        static_cast<std::size_t>(strategy.eer_sample_size), rng);
            std::vector<const Instance*> sample;
            sample.reserve(chosen.size());
            for (std::size_t pos : chosen) sample.push_back(pool[pos]);

            double lowest = std::numeric_limits<double>::infinity();
            std::vector<bool> is_candidate(pool.size(), false);
            for (std::size_t pos : chosen) is_candidate[pos] = true;
            for (std::size_t pos : chosen) {
                scores[pos] = eer_score(context.classifier_ptr, *context.model_config,
                                        *context.train, *pool[pos], probas->proba(*pool[pos]),
                                        sample, strategy.eer_refit_steps);
                lowest = std::min(lowest, scores[pos]);
            }
            for (std::size_t i = 0; i < pool.size(); ++i)
                if (!is_candidate[i]) scores[i] = lowest - 1.0;
            break;
        }
        case StrategyKind::information_density: {
            if (strategy.density_beta < 0.0)
                raise(Errc::config_error, "density exponent must be nonnegative");
            for (std::size_t i = 0; i < pool.size(); ++i) {
                const double base = entropy_score(probas->proba(*pool[i]));
                const double density = mean_pool_similarity(*pool[i], pool);
                scores[i] = information_density_score(base, density, strategy.density_beta);
            }
            break;
        }
    }
    return scores;
}

} // namespace fal::sampling
