#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "fal/dataset.hpp"
#include "fal/engine.hpp"
#include "fal/error.hpp"

using namespace fal;
using namespace fal::engine;

namespace {

template <typename Fn>
std::optional<Errc> raised(Fn&& fn) {
    try {
        fn();
        return std::nullopt;
    } catch (const Error& e) {
        return e.code();
    }
}

data::Splits gaussian_splits(std::size_t n_per_class, std::size_t train, std::size_t test,
                             std::uint64_t seed) {
    data::GaussianSpec spec;
    spec.n_per_class = n_per_class;
    const Dataset ds = data::gen_two_gaussians(spec, seed);
    data::SplitSpec split;
    split.initial_train_size = train;
    split.test_size = test;
    split.seed = seed;
    return data::make_splits(ds, split);
}

data::Splits unfair_splits(std::size_t n_per_class, std::size_t train, std::size_t test,
                           std::uint64_t seed) {
    data::GaussianSpec spec;
    spec.n_per_class = n_per_class;
    const Dataset ds = data::gen_two_gaussians_unfair(spec, 0.9, seed);
    data::SplitSpec split;
    split.initial_train_size = train;
    split.test_size = test;
    split.seed = seed;
    return data::make_splits(ds, split);
}

RunConfig basic_config(sampling::StrategyKind kind, std::size_t batch, int iterations,
                       std::uint64_t seed) {
    RunConfig config;
    config.model.include_sensitive = true;
    config.strategy.kind = kind;
    config.batch_size = batch;
    config.stopping.max_iterations = iterations;
    config.seed = seed;
    return config;
}

bool records_equal(const IterationRecord& a, const IterationRecord& b) {
    if (a.iteration != b.iteration || a.n_labeled != b.n_labeled) return false;
    if (a.base.accuracy != b.base.accuracy || a.base.f1 != b.base.f1) return false;
    if (a.base.unfairness_dp != b.base.unfairness_dp) return false;
    return true;
}

} // namespace

TEST_CASE("stopping rules fire in their documented order") {
    StoppingConfig budget_only;
    budget_only.max_iterations = 5;
    LoopState state;

    state.completed_iterations = 4;
    CHECK_FALSE(check_stopping(budget_only, state).has_value());
    state.completed_iterations = 5;
    CHECK(check_stopping(budget_only, state) == StopReason::budget_exhausted);

    StoppingConfig confidence;
    confidence.max_iterations = 100;
    confidence.max_confidence = 0.001;
    const std::vector<double> silent{0.0, 0.0, 0.0};
    const std::vector<double> noisy{0.0, 0.002, 0.0};
    state.completed_iterations = 1;
    state.pool_entropies = silent;
    CHECK(check_stopping(confidence, state) == StopReason::confidence_reached);
    state.pool_entropies = noisy;
    CHECK_FALSE(check_stopping(confidence, state).has_value());

    StoppingConfig error_rule;
    error_rule.max_iterations = 100;
    error_rule.min_error = 0.15;
    state.pool_entropies = {};
    state.test_error = 0.10;
    CHECK(check_stopping(error_rule, state) == StopReason::error_target_reached);
    state.test_error = 0.20;
    CHECK_FALSE(check_stopping(error_rule, state).has_value());

    // budget wins when several rules fire at once
    StoppingConfig both;
    both.max_iterations = 3;
    both.min_error = 0.5;
    state.completed_iterations = 3;
    state.test_error = 0.0;
    CHECK(check_stopping(both, state) == StopReason::budget_exhausted);
}

TEST_CASE("a pool of 30 with batches of 10 empties in exactly three iterations") {
    const data::Splits splits = gaussian_splits(25, 10, 10, 3);  // pool = 50 - 20 = 30
    REQUIRE(splits.pool.size() == 30);

    const RunConfig config = basic_config(sampling::StrategyKind::random, 10, 100, 5);
    const RunTrace trace = run_active_learning(splits, config);

    REQUIRE(trace.records.size() == 4);  // initial fit plus three query rounds
    CHECK(trace.stop_reason == StopReason::pool_exhausted);
    CHECK(trace.queried.size() == 30);

    const std::vector<std::size_t> labeled_counts{10, 20, 30, 40};
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        CHECK(trace.records[i].iteration == static_cast<int>(i));
        CHECK(trace.records[i].n_labeled == labeled_counts[i]);
        CHECK_FALSE(trace.records[i].fair.has_value());
    }

    // no pool position queried twice, all within range
    std::set<std::size_t> seen(trace.queried.begin(), trace.queried.end());
    CHECK(seen.size() == trace.queried.size());
    CHECK(*std::max_element(trace.queried.begin(), trace.queried.end()) < 30);
}

TEST_CASE("the budget rule caps the number of query rounds") {
    const data::Splits splits = gaussian_splits(40, 10, 20, 11);
    const RunConfig config = basic_config(sampling::StrategyKind::entropy, 5, 2, 1);
    const RunTrace trace = run_active_learning(splits, config);

    CHECK(trace.records.size() == 3);
    CHECK(trace.stop_reason == StopReason::budget_exhausted);
    CHECK(trace.queried.size() == 10);
    CHECK(trace.records.back().n_labeled == 20);
}

TEST_CASE("the final batch shrinks to the remaining pool") {
    const data::Splits splits = gaussian_splits(25, 10, 10, 7);  // pool = 30
    const RunConfig config = basic_config(sampling::StrategyKind::random, 20, 100, 2);
    const RunTrace trace = run_active_learning(splits, config);

    REQUIRE(trace.records.size() == 3);
    CHECK(trace.records[1].n_labeled == 30);  // full batch
    CHECK(trace.records[2].n_labeled == 40);  // leftover 10
    CHECK(trace.stop_reason == StopReason::pool_exhausted);
}

TEST_CASE("a generous confidence threshold stops before any query") {
    const data::Splits splits = gaussian_splits(30, 10, 10, 19);
    RunConfig config = basic_config(sampling::StrategyKind::entropy, 5, 100, 3);
    config.stopping.max_confidence = 10.0;  // every entropy is below log 2
    const RunTrace trace = run_active_learning(splits, config);

    CHECK(trace.records.size() == 1);
    CHECK(trace.queried.empty());
    CHECK(trace.stop_reason == StopReason::confidence_reached);
}

TEST_CASE("a trivially satisfied error target stops before any query") {
    const data::Splits splits = gaussian_splits(30, 10, 10, 23);
    RunConfig config = basic_config(sampling::StrategyKind::entropy, 5, 100, 3);
    config.stopping.min_error = 1.0;
    const RunTrace trace = run_active_learning(splits, config);

    CHECK(trace.records.size() == 1);
    CHECK(trace.stop_reason == StopReason::error_target_reached);
}

TEST_CASE("runs are reproducible and share their initial evaluation") {
    const data::Splits splits = gaussian_splits(60, 10, 30, 41);

    const RunConfig random_config = basic_config(sampling::StrategyKind::random, 4, 6, 77);
    const RunTrace a = run_active_learning(splits, random_config);
    const RunTrace b = run_active_learning(splits, random_config);
    REQUIRE(a.records.size() == b.records.size());
    CHECK(a.queried == b.queried);
    for (std::size_t i = 0; i < a.records.size(); ++i)
        CHECK(records_equal(a.records[i], b.records[i]));

    // a different strategy under the same seed starts from the same model
    const RunConfig entropy_config = basic_config(sampling::StrategyKind::entropy, 4, 6, 77);
    const RunTrace c = run_active_learning(splits, entropy_config);
    CHECK(records_equal(a.records[0], c.records[0]));
}

TEST_CASE("identity post-processing reproduces the plain loop bit for bit") {
    const data::Splits splits = unfair_splits(60, 10, 40, 13);

    RunConfig config = basic_config(sampling::StrategyKind::entropy, 5, 6, 99);
    const RunTrace plain = run_active_learning(splits, config);

    config.fair = true;
    config.fairness.identity = true;
    const RunTrace fair = run_fair_active_learning(splits, config);

    REQUIRE(plain.records.size() == fair.records.size());
    CHECK(plain.queried == fair.queried);
    CHECK(plain.stop_reason == fair.stop_reason);
    for (std::size_t i = 0; i < plain.records.size(); ++i) {
        CHECK(records_equal(plain.records[i], fair.records[i]));
        // the identity transform scores exactly the raw model
        REQUIRE(fair.records[i].fair.has_value());
        CHECK(fair.records[i].fair->accuracy == plain.records[i].base.accuracy);
        CHECK(fair.records[i].fair->f1 == plain.records[i].base.f1);
    }
}

TEST_CASE("the fair loop reduces the fair model's disparity") {
    const data::Splits splits = unfair_splits(150, 10, 100, 29);

    RunConfig config = basic_config(sampling::StrategyKind::entropy, 5, 5, 3);
    config.fair = true;
    const RunTrace trace = run_fair_active_learning(splits, config);

    REQUIRE(trace.records.size() == 6);
    for (const IterationRecord& record : trace.records) {
        REQUIRE(record.fair.has_value());
        REQUIRE(record.base.unfairness_dp.has_value());
        REQUIRE(record.fair->unfairness_dp.has_value());
    }
    const IterationRecord& last = trace.records.back();
    CHECK(*last.fair->unfairness_dp < *last.base.unfairness_dp);
    CHECK(*last.fair->unfairness_dp <= 0.25);
    CHECK(last.fair->accuracy >= 0.5);
}

TEST_CASE("the fair loop demands a sensitive attribute") {
    const data::Splits splits = gaussian_splits(30, 10, 10, 31);
    RunConfig config = basic_config(sampling::StrategyKind::entropy, 5, 3, 1);
    config.fair = true;
    CHECK(raised([&] { run_fair_active_learning(splits, config); }) ==
          Errc::missing_sensitive);
}

TEST_CASE("an initial train set with one class is a cold start failure") {
    data::Splits splits = gaussian_splits(30, 10, 10, 37);
    for (Instance& inst : splits.train.instances) inst.label = 1;
    const RunConfig config = basic_config(sampling::StrategyKind::random, 5, 3, 1);
    CHECK(raised([&] { run_active_learning(splits, config); }) == Errc::cold_start_failure);
}

TEST_CASE("evaluation reports carry fairness metrics only when measurable") {
    const data::Splits plain = gaussian_splits(40, 10, 20, 43);
    model::ModelConfig mc;
    mc.include_sensitive = false;
    const model::ClassifierPtr model = model::fit(mc, plain.train);

    const metrics::EvaluationReport no_sensitive = evaluate(*model, plain.test);
    CHECK_FALSE(no_sensitive.unfairness_dp.has_value());
    CHECK_FALSE(no_sensitive.unfairness_rate.has_value());

    const data::Splits unfair = unfair_splits(40, 10, 20, 43);
    const model::ClassifierPtr aware = model::fit(mc, unfair.train);
    const metrics::EvaluationReport with_sensitive = evaluate(*aware, unfair.test);
    REQUIRE(with_sensitive.unfairness_dp.has_value());
    REQUIRE(with_sensitive.unfairness_rate.has_value());
    CHECK(std::isfinite(*with_sensitive.unfairness_dp));
}

TEST_CASE("the rate metric degrades to NaN when nothing is predicted correctly") {
    // an untrained-in-practice model: zero iterations predict class 1 everywhere
    Dataset train;
    train.n_classes = 2;
    train.has_sensitive = true;
    for (int i = 0; i < 6; ++i) {
        Instance inst;
        inst.features = {double(i), 0.0};
        inst.label = 1 + i % 2;
        inst.sensitive = i % 2 == 0 ? +1 : -1;
        train.instances.push_back(inst);
    }
    model::ModelConfig mc;
    mc.iterations = 0;
    const model::ClassifierPtr model = model::fit(mc, train);

    Dataset test = train;
    for (Instance& inst : test.instances) inst.label = 2;  // constant class-1 model: all wrong

    const metrics::EvaluationReport report = evaluate(*model, test);
    CHECK(report.accuracy == 0.0);
    REQUIRE(report.unfairness_rate.has_value());
    CHECK(std::isnan(*report.unfairness_rate));
    REQUIRE(report.unfairness_dp.has_value());
    CHECK(*report.unfairness_dp == 0.0);  // constant predictions are trivially parity
}

TEST_CASE("fair proba source preserves the fair argmax") {
    const data::Splits splits = unfair_splits(80, 30, 30, 53);
    model::ModelConfig mc;
    const model::ClassifierPtr classifier = model::fit(mc, splits.train);

    fairness::FairnessParams params;
    params.seed = 5;
    const fairness::FairPostProcessor post =
        fairness::FairPostProcessor::calibrate(*classifier, splits.pool, params);
    const FairProbaSource source(*classifier, post);

    for (std::size_t i = 0; i < splits.pool.size(); i += 7) {
        const Instance& x = splits.pool.instances[i];
        const std::vector<double> p = source.proba(x);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);

        const std::vector<double> raw = classifier->predict_proba(x);
        const int vote = source.member_vote(raw, x);
        const std::vector<double> adapted = source.adapt(raw, x);
        const auto top = std::max_element(adapted.begin(), adapted.end());
        CHECK(vote == static_cast<int>(top - adapted.begin()) + 1);
    }

    // identity source forwards the raw vector unchanged
    const fairness::FairPostProcessor none = fairness::FairPostProcessor::identity(2);
    const FairProbaSource identity_source(*classifier, none);
    const Instance& probe = splits.pool.instances[0];
    CHECK(identity_source.adapt(classifier->predict_proba(probe), probe) ==
          classifier->predict_proba(probe));
}

TEST_CASE("aggregation averages iterations across traces") {
    RunTrace a, b;
    for (int i = 0; i < 2; ++i) {
        IterationRecord ra;
        ra.iteration = i;
        ra.n_labeled = 10 + 5 * static_cast<std::size_t>(i);
        ra.base.accuracy = 0.4;
        ra.base.f1 = 0.3;
        a.records.push_back(ra);

        IterationRecord rb = ra;
        rb.base.accuracy = 0.6;
        rb.base.f1 = 0.5;
        b.records.push_back(rb);
    }

    const std::vector<RunTrace> traces{a, b};
    const AggregatedTrace agg = aggregate_runs(traces);
    REQUIRE(agg.base.size() == 2);
    CHECK(agg.fair.empty());
    CHECK(agg.base[0].accuracy.mean == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(agg.base[0].accuracy.stddev == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(agg.base[0].f1.mean == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(agg.base[1].n_labeled == doctest::Approx(15.0));

    // single trace: the mean is the trace, the spread is zero
    const std::vector<RunTrace> solo{a};
    const AggregatedTrace single = aggregate_runs(solo);
    CHECK(single.base[0].accuracy.mean == 0.4);
    CHECK(single.base[0].accuracy.stddev == 0.0);

    RunTrace shorter = a;
    shorter.records.pop_back();
    const std::vector<RunTrace> mismatched{a, shorter};
    CHECK(raised([&] { aggregate_runs(mismatched); }) == Errc::shape_mismatch);

    RunTrace with_fair = a;
    with_fair.records[0].fair = with_fair.records[0].base;
    with_fair.records[1].fair = with_fair.records[1].base;
    const std::vector<RunTrace> inconsistent{a, with_fair};
    CHECK(raised([&] { aggregate_runs(inconsistent); }) == Errc::shape_mismatch);
}

TEST_CASE("stalled unfairness can stop the fair loop early") {
    const data::Splits splits = unfair_splits(100, 10, 60, 59);
    RunConfig config = basic_config(sampling::StrategyKind::entropy, 3, 30, 8);
    config.fair = true;
    config.stopping.unfairness_window = 1;  // stop at the first non-improving round

    const RunTrace trace = run_fair_active_learning(splits, config);
    CHECK(trace.stop_reason == StopReason::unfairness_stalled);
    CHECK(trace.records.size() < 31);
}

TEST_CASE("entropy matches random sampling on easy data across seeds") {
    // paired comparison over 15 seeds: means may not trail by more than 0.01
    double entropy_total = 0.0, random_total = 0.0;
    for (std::uint64_t seed = 0; seed < 15; ++seed) {
        const data::Splits splits = gaussian_splits(150, 10, 100, 1000 + seed);
        const RunConfig entropy_config =
            basic_config(sampling::StrategyKind::entropy, 3, 20, 2000 + seed);
        const RunConfig random_config =
            basic_config(sampling::StrategyKind::random, 3, 20, 2000 + seed);
        entropy_total += run_active_learning(splits, entropy_config).records.back().base.accuracy;
        random_total += run_active_learning(splits, random_config).records.back().base.accuracy;
    }
    CHECK(entropy_total / 15.0 >= random_total / 15.0 - 0.01);
}

TEST_CASE("stop reasons have stable names") {
    CHECK(stop_reason_name(StopReason::budget_exhausted) == "budget_exhausted");
    CHECK(stop_reason_name(StopReason::pool_exhausted) == "pool_exhausted");
    CHECK(stop_reason_name(StopReason::confidence_reached) == "confidence_reached");
    CHECK(stop_reason_name(StopReason::error_target_reached) == "error_target_reached");
    CHECK(stop_reason_name(StopReason::unfairness_stalled) == "unfairness_stalled");
}
