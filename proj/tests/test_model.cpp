#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "fal/classifier.hpp"
#include "fal/dataset.hpp"
#include "fal/error.hpp"

using namespace fal;
using namespace fal::model;

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

Instance make_instance(std::vector<double> x, std::optional<int> label = std::nullopt,
                       std::optional<int> sensitive = std::nullopt) {
    Instance inst;
    inst.features = std::move(x);
    inst.label = label;
    inst.sensitive = sensitive;
    return inst;
}

Dataset tiny_two_class() {
    Dataset ds;
    ds.n_classes = 2;
    ds.instances = {
        make_instance({-1.0, 0.5}, 1), make_instance({-2.0, -0.5}, 1),
        make_instance({-1.5, 1.0}, 1), make_instance({+1.0, 0.0}, 2),
        make_instance({+2.0, 1.5}, 2), make_instance({+1.5, -1.0}, 2),
    };
    return ds;
}

Dataset three_class_line(std::size_t per_class, std::uint64_t seed) {
    Dataset ds;
    ds.n_classes = 3;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.5);
    for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < per_class; ++i)
            ds.instances.push_back(make_instance({(k - 1) * 4.0 + noise(rng)}, k + 1));
    return ds;
}

double weight_l2_sq_excluding_bias(const SoftmaxRegression& model) {
    const std::size_t cols = model.encoder().encoded_dim() + 1;
    double total = 0.0;
    const std::vector<double>& w = model.weights();
    for (std::size_t i = 0; i < w.size(); ++i)
        if (i % cols != cols - 1) total += w[i] * w[i];
    return total;
}

} // namespace

TEST_CASE("encoder standardizes and appends the raw sensitive value") {
    Dataset train;
    train.n_classes = 2;
    train.has_sensitive = true;
    train.instances = {make_instance({1.0, 10.0}, 1, +1), make_instance({3.0, 30.0}, 2, -1)};
    Dataset pool;
    pool.n_classes = 2;
    pool.has_sensitive = true;
    pool.instances = {make_instance({5.0, 50.0}, std::nullopt, -1)};

    const Dataset* sources[] = {&train, &pool};
    const FeatureEncoder enc = fit_encoder(sources, true);
    CHECK(enc.encoded_dim() == 3);

    // statistics over train + pool: means (3, 30), population stds well defined
    double mean0 = (1.0 + 3.0 + 5.0) / 3.0;
    double var0 = ((1 - mean0) * (1 - mean0) + (3 - mean0) * (3 - mean0) +
                   (5 - mean0) * (5 - mean0)) /
                  3.0;
    const std::vector<double> encoded = enc.encode(train.instances[0]);
    CHECK(encoded[0] == doctest::Approx((1.0 - mean0) / std::sqrt(var0)).epsilon(1e-12));
    CHECK(encoded[2] == +1.0);  // sensitive appended raw

    // standardized column has zero mean and unit population variance
    double mean_enc = 0.0, var_enc = 0.0;
    std::vector<std::vector<double>> all;
    for (const Dataset* src : sources)
        for (const Instance& inst : src->instances) all.push_back(enc.encode(inst));
    for (const auto& row : all) mean_enc += row[0];
    mean_enc /= static_cast<double>(all.size());
    for (const auto& row : all) var_enc += (row[0] - mean_enc) * (row[0] - mean_enc);
    var_enc /= static_cast<double>(all.size());
    CHECK(std::abs(mean_enc) < 1e-12);
    CHECK(var_enc == doctest::Approx(1.0).epsilon(1e-12));

    // constant columns encode to zero rather than dividing by zero
    Dataset constant;
    constant.n_classes = 2;
    constant.instances = {make_instance({7.0}, 1), make_instance({7.0}, 2)};
    const Dataset* one[] = {&constant};
    const FeatureEncoder const_enc = fit_encoder(one, false);
    CHECK(const_enc.encode(constant.instances[0])[0] == 0.0);

    // encoding an instance without the attribute fails when it is included
    CHECK(raised([&] { enc.encode(make_instance({1.0, 2.0})); }) == Errc::missing_sensitive);
    // dimension mismatch is rejected
    CHECK(raised([&] { enc.encode(make_instance({1.0}, 1, +1)); }) == Errc::dimension_mismatch);
}

TEST_CASE("zero-iteration softmax regression predicts the uniform distribution") {
    ModelConfig config;
    config.iterations = 0;
    config.include_sensitive = false;
    const Dataset train = three_class_line(4, 1);
    const SoftmaxRegression model = SoftmaxRegression::train(config, train);

    for (double w : model.weights()) CHECK(w == 0.0);
    const std::vector<double> p = model.predict_proba(train.instances[0]);
    REQUIRE(p.size() == 3);
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // uniform probabilities tie-break to the lowest class
    CHECK(model.predict(train.instances[5]) == 1);
}

TEST_CASE("predict_proba is a valid distribution everywhere") {
    data::GaussianSpec spec;
    spec.n_per_class = 100;
    const Dataset ds = data::gen_two_gaussians(spec, 21);
    ModelConfig config;
    config.include_sensitive = false;
    const ClassifierPtr model = fit(config, ds);

    for (std::size_t i = 0; i < ds.size(); i += 4) {
        const std::vector<double> p = model->predict_proba(ds.instances[i]);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("predict_proba equals the scalar-by-scalar softmax of the linear scores") {
    ModelConfig config;
    config.include_sensitive = false;
    config.iterations = 120;
    const Dataset train = tiny_two_class();
    const SoftmaxRegression model = SoftmaxRegression::train(config, train);

    const Instance probe = make_instance({0.3, -0.7});
    const std::vector<double> z = model.encoder().encode(probe);
    const std::vector<double>& w = model.weights();
    const std::size_t cols = z.size() + 1;

    std::vector<double> logits(2, 0.0);
    for (int k = 0; k < 2; ++k) {
        for (std::size_t j = 0; j < z.size(); ++j) logits[k] += w[k * cols + j] * z[j];
        logits[k] += w[k * cols + z.size()];  // bias
    }
    const double top = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - top), e1 = std::exp(logits[1] - top);

    const std::vector<double> p = model.predict_proba(probe);
    CHECK(p[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
}

TEST_CASE("training is deterministic for a fixed configuration") {
    data::GaussianSpec spec;
    spec.n_per_class = 50;
    const Dataset ds = data::gen_two_gaussians(spec, 33);
    ModelConfig config;
    config.include_sensitive = false;
    config.seed = 9;

    const SoftmaxRegression a = SoftmaxRegression::train(config, ds);
    const SoftmaxRegression b = SoftmaxRegression::train(config, ds);
    CHECK(a.weights() == b.weights());

    config.kind = ModelKind::bagged_committee;
    config.committee_size = 4;
    const ClassifierPtr c1 = fit(config, ds);
    const ClassifierPtr c2 = fit(config, ds);
    for (std::size_t i = 0; i < ds.size(); i += 7)
        CHECK(c1->predict_proba(ds.instances[i]) == c2->predict_proba(ds.instances[i]));
}

TEST_CASE("softmax regression separates well-separated gaussians") {
    data::GaussianSpec spec;
    spec.n_per_class = 1000;
    spec.mean_0[0] = -3.0;
    spec.mean_1[0] = +3.0;
    const Dataset train = data::gen_two_gaussians(spec, 101);
    const Dataset fresh = data::gen_two_gaussians(spec, 202);

    ModelConfig config;
    config.include_sensitive = false;
    const ClassifierPtr model = fit(config, train);

    std::size_t correct = 0, bayes_correct = 0;
    for (const Instance& inst : fresh.instances) {
        if (model->predict(inst) == *inst.label) ++correct;
        // equal-covariance gaussians: the optimal rule is the midpoint hyperplane
        const int bayes = inst.features[0] < 0.0 ? 1 : 2;
        if (bayes == *inst.label) ++bayes_correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(fresh.size());
    const double bayes_acc =
        static_cast<double>(bayes_correct) / static_cast<double>(fresh.size());

    CHECK(acc >= 0.99);
    CHECK(acc >= bayes_acc - 0.01);  // tracks the optimal boundary closely
}

TEST_CASE("example_loss is the cross entropy of the predicted distribution") {
    ModelConfig config;
    config.include_sensitive = false;
    const Dataset train = tiny_two_class();
    const SoftmaxRegression model = SoftmaxRegression::train(config, train);

    for (const Instance& inst : train.instances)
        for (int k = 1; k <= 2; ++k) {
            const std::vector<double> p = model.predict_proba(inst);
            CHECK(model.example_loss(inst, k) ==
                  doctest::Approx(-std::log(p[k - 1])).epsilon(1e-12));
        }
}

TEST_CASE("training gradient norm matches central finite differences") {
    ModelConfig config;
    config.include_sensitive = false;
    config.iterations = 60;
    const Dataset train = tiny_two_class();
    SoftmaxRegression model = SoftmaxRegression::train(config, train);
    const std::size_t n_weights = model.weights().size();

    std::mt19937_64 rng(77);
    std::normal_distribution<double> draw(0.0, 0.8);
    const double h = 1e-6;

    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> w(n_weights);
        for (double& v : w) v = draw(rng);
        model.set_weights(w);

        const Instance& x = train.instances[trial % train.size()];
        const int label = 1 + trial % 2;

        double grad_sq = 0.0;
        for (std::size_t j = 0; j < n_weights; ++j) {
            std::vector<double> plus = w, minus = w;
            plus[j] += h;
            minus[j] -= h;
            model.set_weights(plus);
            const double up = model.example_loss(x, label);
            model.set_weights(minus);
            const double down = model.example_loss(x, label);
            const double g = (up - down) / (2 * h);
            grad_sq += g * g;
        }
        model.set_weights(w);
        const double fd_norm = std::sqrt(grad_sq);
        const double closed = model.training_gradient_norm(x, label);
        REQUIRE(fd_norm > 1e-4);  // the check below is relative
        CHECK(std::abs(closed - fd_norm) / fd_norm < 1e-5);
    }
}

TEST_CASE("gradient norm vanishes on a confidently correct example") {
    ModelConfig config;
    config.include_sensitive = false;
    const Dataset train = tiny_two_class();
    SoftmaxRegression model = SoftmaxRegression::train(config, train);

    // a huge margin drives the predicted probability to 1 within machine precision
    const std::size_t cols = model.encoder().encoded_dim() + 1;
    std::vector<double> w(model.weights().size(), 0.0);
    w[0 * cols + cols - 1] = 60.0;  // class-1 bias
    model.set_weights(w);

    const Instance probe = make_instance({0.0, 0.0});
    CHECK(model.predict_proba(probe)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(model.training_gradient_norm(probe, 1) <= 1e-12);
}

TEST_CASE("weighted training equals training with duplicated instances") {
    Dataset base = tiny_two_class();
    ModelConfig config;
    config.include_sensitive = false;
    config.iterations = 200;
    // the encoder must see identical statistics on both paths
    const Dataset* sources[] = {&base};
    config.encoder = fit_encoder(sources, false);

    std::vector<double> weights(base.size(), 1.0);
    weights[2] = 2.0;
    const SoftmaxRegression weighted = SoftmaxRegression::train(config, base, weights);

    Dataset duplicated = base;
    duplicated.instances.push_back(base.instances[2]);
    const SoftmaxRegression duplicate_fit = SoftmaxRegression::train(config, duplicated);

    REQUIRE(weighted.weights().size() == duplicate_fit.weights().size());
    for (std::size_t i = 0; i < weighted.weights().size(); ++i)
        CHECK(weighted.weights()[i] == doctest::Approx(duplicate_fit.weights()[i]).epsilon(1e-12));
}

TEST_CASE("predict is invariant under a constant logit shift") {
    ModelConfig config;
    config.include_sensitive = false;
    const Dataset train = tiny_two_class();
    SoftmaxRegression model = SoftmaxRegression::train(config, train);

    std::vector<int> before;
    for (const Instance& inst : train.instances) before.push_back(model.predict(inst));

    std::vector<double> w = model.weights();
    const std::size_t cols = model.encoder().encoded_dim() + 1;
    for (int k = 0; k < model.n_classes(); ++k) w[k * cols + cols - 1] += 13.25;
    model.set_weights(w);

    for (std::size_t i = 0; i < train.size(); ++i)
        CHECK(model.predict(train.instances[i]) == before[i]);
}

TEST_CASE("refit continues from the current parameters") {
    ModelConfig config;
    config.include_sensitive = false;
    config.iterations = 150;
    const Dataset train = tiny_two_class();
    const SoftmaxRegression model = SoftmaxRegression::train(config, train);

    const SoftmaxRegression same = model.refit(train, 0);
    CHECK(same.weights() == model.weights());

    // more descent steps cannot worsen the regularized objective materially
    auto objective = [&](const SoftmaxRegression& m) {
        double total = 0.0;
        for (const Instance& inst : train.instances) total += m.example_loss(inst, *inst.label);
        return total / static_cast<double>(train.size()) +
               1e-4 * weight_l2_sq_excluding_bias(m);
    };
    const SoftmaxRegression better = model.refit(train, 100);
    CHECK(objective(better) <= objective(model) + 1e-9);

    Dataset relabeled = train;
    relabeled.n_classes = 3;
    relabeled.instances[0].label = 3;
    CHECK(raised([&] { model.refit(relabeled, 5); }) == Errc::shape_mismatch);
}

TEST_CASE("bagged committee averages its members") {
    data::GaussianSpec spec;
    spec.n_per_class = 40;
    const Dataset ds = data::gen_two_gaussians(spec, 55);
    ModelConfig config;
    config.kind = ModelKind::bagged_committee;
    config.committee_size = 5;
    config.include_sensitive = false;
    config.seed = 3;

    const BaggedCommittee model = BaggedCommittee::train(config, ds);
    REQUIRE(model.members().size() == 5);
    for (double w : model.members().weights) CHECK(w == model.members().weights.front());

    const Instance& probe = ds.instances[11];
    std::vector<double> mean(2, 0.0);
    for (const ClassifierPtr& member : model.members().members) {
        const std::vector<double> p = member->predict_proba(probe);
        for (std::size_t k = 0; k < 2; ++k) mean[k] += p[k];
    }
    for (double& v : mean) v /= 5.0;

    const std::vector<double> p = model.predict_proba(probe);
    CHECK(p[0] == doctest::Approx(mean[0]).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(mean[1]).epsilon(1e-12));
}

TEST_CASE("a committee of identical members reduces to a single member") {
    // with only one instance per class every valid bootstrap is {A, B}, so
    // both members converge to identical parameters
    Dataset ds;
    ds.n_classes = 2;
    ds.instances = {make_instance({-1.0, 0.0}, 1), make_instance({+1.0, 0.0}, 2)};

    ModelConfig config;
    config.kind = ModelKind::bagged_committee;
    config.committee_size = 2;
    config.include_sensitive = false;
    const BaggedCommittee model = BaggedCommittee::train(config, ds);

    const Instance probe = make_instance({0.25, 0.0});
    const std::vector<double> whole = model.predict_proba(probe);
    const std::vector<double> single = model.members().members[0]->predict_proba(probe);
    CHECK(whole[0] == doctest::Approx(single[0]).epsilon(1e-12));
    CHECK(whole[1] == doctest::Approx(single[1]).epsilon(1e-12));
}

TEST_CASE("bootstrapped committees are seed deterministic") {
    data::GaussianSpec spec;
    spec.n_per_class = 30;
    const Dataset ds = data::gen_two_gaussians(spec, 8);
    ModelConfig config;
    config.include_sensitive = false;

    const Committee a = bag_committee(config, ds, 4, 99);
    const Committee b = bag_committee(config, ds, 4, 99);
    REQUIRE(a.size() == 4);
    REQUIRE(b.size() == 4);
    for (std::size_t m = 0; m < a.size(); ++m) {
        const auto* wa = dynamic_cast<const SoftmaxRegression*>(a.members[m].get());
        const auto* wb = dynamic_cast<const SoftmaxRegression*>(b.members[m].get());
        REQUIRE(wa != nullptr);
        REQUIRE(wb != nullptr);
        CHECK(wa->weights() == wb->weights());
    }

    // members differ from one another (bootstraps resample)
    const auto* w0 = dynamic_cast<const SoftmaxRegression*>(a.members[0].get());
    const auto* w1 = dynamic_cast<const SoftmaxRegression*>(a.members[1].get());
    CHECK(w0->weights() != w1->weights());

    CHECK(raised([&] { bag_committee(config, ds, 1, 0); }) == Errc::committee_too_small);
}

TEST_CASE("boosted stumps fit axis-aligned structure") {
    data::GaussianSpec spec;
    spec.n_per_class = 150;
    const Dataset ds = data::gen_two_gaussians(spec, 71);

    ModelConfig config;
    config.kind = ModelKind::boosted_stumps;
    config.include_sensitive = false;
    const ClassifierPtr model = fit(config, ds);

    std::size_t correct = 0;
    double sum_check = 0.0;
    for (const Instance& inst : ds.instances) {
        if (model->predict(inst) == *inst.label) ++correct;
        const std::vector<double> p = model->predict_proba(inst);
        sum_check = std::max(sum_check, std::abs(p[0] + p[1] - 1.0));
        CHECK(p[0] >= 0.0);
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) >= 0.93);
    CHECK(sum_check <= 1e-9);
    CHECK_FALSE(model->gradient_capable());
    CHECK(raised([&] { model->training_gradient_norm(ds.instances[0], 1); }) ==
          Errc::gradient_unsupported);
}

TEST_CASE("boosted stumps handle three classes") {
    const Dataset ds = three_class_line(120, 13);
    ModelConfig config;
    config.kind = ModelKind::boosted_stumps;
    config.boosting_rounds = 40;
    config.include_sensitive = false;
    const ClassifierPtr model = fit(config, ds);

    std::size_t correct = 0;
    for (const Instance& inst : ds.instances)
        if (model->predict(inst) == *inst.label) ++correct;
    CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) >= 0.85);
}

TEST_CASE("depth-two stumps capture interactions depth-one stumps cannot") {
    // XOR layout: label = 1 when the coordinates agree in sign
    Dataset ds;
    ds.n_classes = 2;
    for (int rep = 0; rep < 3; ++rep) {
        ds.instances.push_back(make_instance({-1.0, -1.0}, 1));
        ds.instances.push_back(make_instance({+1.0, +1.0}, 1));
        ds.instances.push_back(make_instance({-1.0, +1.0}, 2));
        ds.instances.push_back(make_instance({+1.0, -1.0}, 2));
    }

    ModelConfig config;
    config.kind = ModelKind::boosted_stumps;
    config.include_sensitive = false;
    config.stump_depth = 2;
    const ClassifierPtr deep = fit(config, ds);
    std::size_t correct = 0;
    for (const Instance& inst : ds.instances)
        if (deep->predict(inst) == *inst.label) ++correct;
    CHECK(correct == ds.size());

    config.stump_depth = 1;
    const ClassifierPtr shallow = fit(config, ds);
    std::size_t shallow_correct = 0;
    for (const Instance& inst : ds.instances)
        if (shallow->predict(inst) == *inst.label) ++shallow_correct;
    CHECK(shallow_correct < ds.size());
}

TEST_CASE("fit dispatches on the configured kind") {
    const Dataset ds = tiny_two_class();
    ModelConfig config;
    config.include_sensitive = false;
    config.committee_size = 2;

    config.kind = ModelKind::softmax_regression;
    CHECK(dynamic_cast<const SoftmaxRegression*>(fit(config, ds).get()) != nullptr);
    config.kind = ModelKind::bagged_committee;
    CHECK(dynamic_cast<const BaggedCommittee*>(fit(config, ds).get()) != nullptr);
    config.kind = ModelKind::boosted_stumps;
    CHECK(dynamic_cast<const BoostedStumps*>(fit(config, ds).get()) != nullptr);
}

TEST_CASE("fit error contracts") {
    ModelConfig config;
    config.include_sensitive = false;

    Dataset empty;
    empty.n_classes = 2;
    CHECK(raised([&] { fit(config, empty); }) == Errc::empty_train_set);

    Dataset single;
    single.n_classes = 2;
    single.instances = {make_instance({0.0}, 1), make_instance({1.0}, 1)};
    CHECK(raised([&] { fit(config, single); }) == Errc::single_class_train_set);

    Dataset unlabeled = tiny_two_class();
    unlabeled.instances[3].label.reset();
    CHECK(raised([&] { fit(config, unlabeled); }) == Errc::missing_label);

    const SoftmaxRegression untrained;
    CHECK(raised([&] { untrained.predict_proba(make_instance({0.0, 0.0})); }) ==
          Errc::untrained_model);

    const Dataset ds = tiny_two_class();
    const ClassifierPtr model = fit(config, ds);
    CHECK(raised([&] { model->predict_proba(make_instance({0.0})); }) ==
          Errc::dimension_mismatch);
}

TEST_CASE("refit_with_example warm-starts softmax regression") {
    const Dataset ds = tiny_two_class();
    ModelConfig config;
    config.include_sensitive = false;
    const Dataset* sources[] = {&ds};
    config.encoder = fit_encoder(sources, false);

    const ClassifierPtr model = fit(config, ds);
    const Instance extra = make_instance({0.5, 0.5}, 2);
    const ClassifierPtr updated = refit_with_example(model, config, ds, extra, 10);

    // the warm start with a handful of steps moves parameters only slightly
    const auto* before = dynamic_cast<const SoftmaxRegression*>(model.get());
    const auto* after = dynamic_cast<const SoftmaxRegression*>(updated.get());
    REQUIRE(before != nullptr);
    REQUIRE(after != nullptr);
    CHECK(before->weights() != after->weights());
    double drift = 0.0;
    for (std::size_t i = 0; i < before->weights().size(); ++i)
        drift = std::max(drift, std::abs(before->weights()[i] - after->weights()[i]));
    CHECK(drift < 0.5);
}
