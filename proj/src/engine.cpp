#include "fal/engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>

#include "fal/rng.hpp"

namespace fal::engine {

std::string_view stop_reason_name(StopReason reason) {
    switch (reason) {
        case StopReason::budget_exhausted: return "budget_exhausted";
        case StopReason::pool_exhausted: return "pool_exhausted";
        case StopReason::confidence_reached: return "confidence_reached";
        case StopReason::error_target_reached: return "error_target_reached";
        case StopReason::unfairness_stalled: return "unfairness_stalled";
    }
    return "unknown";
}

std::optional<StopReason> check_stopping(const StoppingConfig& rule, const LoopState& state) {
    if (state.completed_iterations >= rule.max_iterations) return StopReason::budget_exhausted;
    if (rule.max_confidence &&
        std::all_of(state.pool_entropies.begin(), state.pool_entropies.end(),
                    [&](double h) { return h < *rule.max_confidence; }))
        return StopReason::confidence_reached;
    if (rule.min_error && state.test_error <= *rule.min_error)
        return StopReason::error_target_reached;
    return std::nullopt;
}

FairProbaSource::FairProbaSource(const model::ProbabilisticClassifier& classifier,
                                 const fairness::FairPostProcessor& post)
    : classifier_(classifier), post_(post) {
    tau_ = post.is_identity() ? 1.0 : std::max(post.pi(-1), post.pi(+1));
}

std::vector<double> FairProbaSource::proba(const Instance& x) const {
    return adapt(classifier_.predict_proba(x), x);
}

std::vector<double> FairProbaSource::adapt(std::vector<double> raw, const Instance& x) const {
    if (post_.is_identity()) return raw;
    if (!x.sensitive) raise(Errc::missing_sensitive, "instance lacks the sensitive attribute");
    const std::vector<double> fair = post_.transform(raw, *x.sensitive);
    // softmax(fair / tau): monotone in the fair scores, so the fair argmax
    // survives, and the output is a proper distribution for the strategies.
    const double top = *std::max_element(fair.begin(), fair.end());
    std::vector<double> out(fair.size());
    double total = 0.0;
    for (std::size_t k = 0; k < fair.size(); ++k) {
        out[k] = std::exp((fair[k] - top) / tau_);
        total += out[k];
    }
    for (double& v : out) v /= total;
    return out;
}

int FairProbaSource::member_vote(std::span<const double> raw, const Instance& x) const {
    if (post_.is_identity()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < raw.size(); ++k)
            if (raw[k] > raw[best]) best = k;
        return static_cast<int>(best) + 1;
    }
    if (!x.sensitive) raise(Errc::missing_sensitive, "instance lacks the sensitive attribute");
    const std::vector<double> fair = post_.transform(raw, *x.sensitive);
    std::size_t best = 0;
    for (std::size_t k = 1; k < fair.size(); ++k)
        if (fair[k] > fair[best]) best = k;
    return static_cast<int>(best) + 1;
}

metrics::EvaluationReport evaluate(const model::ProbabilisticClassifier& classifier,
                                   const Dataset& test) {
    return evaluate_fair(classifier, fairness::FairPostProcessor::identity(classifier.n_classes()),
                         test);
}

metrics::EvaluationReport evaluate_fair(const model::ProbabilisticClassifier& classifier,
                                        const fairness::FairPostProcessor& post,
                                        const Dataset& test) {
    if (test.empty()) raise(Errc::empty_input, "empty test set");
    std::vector<int> preds(test.size()), labels(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (!test.instances[i].label)
            raise(Errc::missing_label, "test instance " + std::to_string(i) + " has no label");
        preds[i] = fairness::fair_predict(classifier, post, test.instances[i]);
        labels[i] = *test.instances[i].label;
    }

    metrics::EvaluationReport report;
    report.accuracy = metrics::accuracy(preds, labels);
    report.f1 = metrics::f1_score(preds, labels, test.n_classes);
    if (test.has_sensitive) {
        std::vector<int> sens(test.size());
        for (std::size_t i = 0; i < test.size(); ++i) sens[i] = *test.instances[i].sensitive;
        report.unfairness_dp = fairness::dp_unfairness(preds, sens, test.n_classes);
        try {
            report.unfairness_rate =
                fairness::correct_rate_unfairness(preds, labels, sens, test.n_classes);
        } catch (const Error& e) {
            if (e.code() != Errc::no_correct_predictions) throw;
            report.unfairness_rate = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return report;
}

namespace {

// Labeled-so-far view: the initial train block followed by acquired pool
// instances in ascending master position. Every strategy that ends up
// acquiring the whole pool therefore fits on the same instance sequence,
// which makes the exhausted-pool model independent of query order.
Dataset assemble_train(const Dataset& initial_train, const Dataset& pool_master,
                       const std::set<std::size_t>& acquired,
                       const std::vector<int>& acquired_labels) {
    Dataset out = initial_train;
    for (std::size_t master : acquired) {
        Instance inst = pool_master.instances[master];
        inst.label = acquired_labels[master];
        out.instances.push_back(std::move(inst));
    }
    return out;
}

model::ClassifierPtr fit_or_cold_start(const model::ModelConfig& mc, const Dataset& train,
                                       bool initial) {
    try {
        return model::fit(mc, train);
    } catch (const Error& e) {
        if (initial && (e.code() == Errc::single_class_train_set ||
                        e.code() == Errc::empty_train_set))
            raise(Errc::cold_start_failure,
                  std::string("initial fit impossible: ") + e.what());
        throw;
    }
}

RunTrace run_impl(data::Splits splits, const RunConfig& config, bool fair_mode) {
    if (config.batch_size < 1) raise(Errc::invalid_batch, "batch size must be at least 1");
    if (config.stopping.max_iterations < 0)
        raise(Errc::config_error, "max_iterations must be nonnegative");
    if (fair_mode && !config.fairness.identity && !splits.pool.has_sensitive)
        raise(Errc::missing_sensitive, "the fair loop needs a sensitive attribute");

    model::ModelConfig mc = config.model;
    mc.seed = mix_seed(config.seed, 0xF17);
    // The sensitive attribute only enters the design vector when the data
    // actually carries one.
    mc.include_sensitive = mc.include_sensitive && splits.train.has_sensitive;
    if (!mc.encoder) {
        // Statistics over train + pool: the map stays constant while
        // instances migrate between the two.
        const std::array<const Dataset*, 2> sources{&splits.train, &splits.pool};
        mc.encoder = model::fit_encoder(sources, mc.include_sensitive);
    }

    const Dataset& pool_master = splits.pool;
    std::set<std::size_t> acquired;
    std::vector<int> acquired_labels(pool_master.size(), 0);

    std::mt19937_64 scoring_rng(mix_seed(config.seed, 0x5C03E));

    RunTrace trace;
    Dataset train_now = splits.train;
    model::ClassifierPtr h = fit_or_cold_start(mc, train_now, true);

    fairness::FairPostProcessor post =
        fairness::FairPostProcessor::identity(h->n_classes());
    auto recalibrate = [&](const std::vector<std::size_t>& pool_positions, int iteration) {
        if (!fair_mode) return;
        fairness::FairnessParams params = config.fairness;
        params.seed = mix_seed(mix_seed(config.seed, 0xFA1C0),
                               static_cast<std::uint64_t>(iteration));
        if (params.identity) {
            post = fairness::FairPostProcessor::identity(h->n_classes());
            return;
        }
        if (pool_positions.empty()) return;  // keep the last calibration for the final report
        post = fairness::FairPostProcessor::calibrate(
            *h, subset(pool_master, pool_positions), params);
    };

    auto pool_positions = [&]() {
        std::vector<std::size_t> out;
        out.reserve(pool_master.size() - acquired.size());
        for (std::size_t i = 0; i < pool_master.size(); ++i)
            if (!acquired.count(i)) out.push_back(i);
        return out;
    };

    auto record = [&](int iteration) {
        IterationRecord rec;
        rec.iteration = iteration;
        rec.n_labeled = train_now.size();
        rec.base = evaluate(*h, splits.test);
        if (fair_mode) rec.fair = evaluate_fair(*h, post, splits.test);
        trace.records.push_back(std::move(rec));
    };

    std::vector<std::size_t> remaining = pool_positions();
    recalibrate(remaining, 0);
    record(0);

    StopReason reason = StopReason::budget_exhausted;
    double best_fair_unfairness = std::numeric_limits<double>::infinity();
    int stalled = 0;

    for (int t = 1;; ++t) {
        if (remaining.empty()) {
            reason = StopReason::pool_exhausted;
            break;
        }

        const fairness::FairPostProcessor scoring_post = post;
        std::optional<FairProbaSource> fair_source;
        std::optional<sampling::ModelProbaSource> plain_source;
        const sampling::ProbaSource* source = nullptr;
        if (fair_mode) {
            fair_source.emplace(*h, scoring_post);
            source = &*fair_source;
        } else {
            plain_source.emplace(*h);
            source = &*plain_source;
        }

        std::vector<const Instance*> pool_view;
        pool_view.reserve(remaining.size());
        for (std::size_t master : remaining) pool_view.push_back(&pool_master.instances[master]);

        std::vector<double> entropies;
        if (config.stopping.max_confidence) {
            entropies.reserve(pool_view.size());
            for (const Instance* inst : pool_view)
                entropies.push_back(sampling::entropy_score(source->proba(*inst)));
        }
        LoopState state;
        state.completed_iterations = t - 1;
        state.pool_entropies = entropies;
        state.test_error = 1.0 - trace.records.back().base.accuracy;
        if (const std::optional<StopReason> r = check_stopping(config.stopping, state)) {
            reason = *r;
            break;
        }

        sampling::ScoringContext context;
        context.classifier = h.get();
        context.model_config = &mc;
        context.classifier_ptr = h;
        context.train = &train_now;
        context.pool = std::move(pool_view);
        context.probas = source;

        sampling::ScoredPool scored;
        scored.indices = remaining;
        scored.scores = sampling::score_pool(config.strategy, context, scoring_rng);

        const std::size_t take = std::min<std::size_t>(config.batch_size, remaining.size());
        for (std::size_t position : sampling::select_batch(scored, take)) {
            const std::size_t master = remaining[position];
            acquired_labels[master] = splits.oracle.query(master);
            acquired.insert(master);
            trace.queried.push_back(master);
        }

        train_now = assemble_train(splits.train, pool_master, acquired, acquired_labels);
        h = fit_or_cold_start(mc, train_now, false);
        remaining = pool_positions();
        recalibrate(remaining, t);
        record(t);

        if (fair_mode && config.stopping.unfairness_window &&
            trace.records.back().fair->unfairness_dp) {
            const double unf = *trace.records.back().fair->unfairness_dp;
            if (unf < best_fair_unfairness) {
                best_fair_unfairness = unf;
                stalled = 0;
            } else if (++stalled >= *config.stopping.unfairness_window) {
                reason = StopReason::unfairness_stalled;
                break;
            }
        }
    }

    trace.stop_reason = reason;
    trace.final_model = h;
    return trace;
}

} // namespace

RunTrace run_active_learning(data::Splits splits, const RunConfig& config) {
    return run_impl(std::move(splits), config, false);
}

RunTrace run_fair_active_learning(data::Splits splits, const RunConfig& config) {
    return run_impl(std::move(splits), config, true);
}

AggregatedTrace aggregate_runs(std::span<const RunTrace> traces) {
    if (traces.empty()) raise(Errc::empty_input, "no traces to aggregate");
    const std::size_t n_records = traces.front().records.size();
    for (const RunTrace& trace : traces)
        if (trace.records.size() != n_records)
            raise(Errc::shape_mismatch, "traces disagree on the iteration count");

    const bool has_fair = traces.front().records.front().fair.has_value();
    AggregatedTrace out;
    for (std::size_t r = 0; r < n_records; ++r) {
        const int iteration = traces.front().records[r].iteration;
        auto aggregate_one = [&](auto select) {
            AggregatedRecord agg;
            agg.iteration = iteration;
            std::vector<double> acc, f1, dp, rate, labeled;
            for (const RunTrace& trace : traces) {
                const IterationRecord& rec = trace.records[r];
                if (rec.iteration != iteration)
                    raise(Errc::shape_mismatch, "traces disagree on iteration ids");
                if (rec.fair.has_value() != has_fair)
                    raise(Errc::shape_mismatch, "traces disagree on fair reports");
                const metrics::EvaluationReport& rep = select(rec);
                labeled.push_back(static_cast<double>(rec.n_labeled));
                acc.push_back(rep.accuracy);
                f1.push_back(rep.f1);
                if (rep.unfairness_dp) dp.push_back(*rep.unfairness_dp);
                if (rep.unfairness_rate) rate.push_back(*rep.unfairness_rate);
            }
            if (!dp.empty() && dp.size() != traces.size())
                raise(Errc::shape_mismatch, "traces disagree on unfairness reports");
            agg.n_labeled = metrics::mean_std(labeled).mean;
            agg.accuracy = metrics::mean_std(acc);
            agg.f1 = metrics::mean_std(f1);
            if (!dp.empty()) agg.unfairness_dp = metrics::mean_std(dp);
            if (!rate.empty() && rate.size() == traces.size())
                agg.unfairness_rate = metrics::mean_std(rate);
            return agg;
        };
        out.base.push_back(
            aggregate_one([](const IterationRecord& rec) -> const metrics::EvaluationReport& {
                return rec.base;
            }));
        if (has_fair)
            out.fair.push_back(
                aggregate_one([](const IterationRecord& rec) -> const metrics::EvaluationReport& {
                    return *rec.fair;
                }));
    }
    return out;
}

} // namespace fal::engine
