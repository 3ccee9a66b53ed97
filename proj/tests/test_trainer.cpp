#include <cmath>
#include <numeric>

#include "doctest.h"
#include "limeil/error.hpp"
#include "limeil/parallel.hpp"
#include "limeil/trainer.hpp"
#include "oracles.hpp"

using namespace limeil;

namespace {

// Two classes separated along the first pixel.
std::vector<Spectrogram> separable(std::size_t n, std::uint64_t seed) {
    std::vector<Spectrogram> out;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Spectrogram s(4, 4);
        const int label = static_cast<int>(i % 2);
        for (float& v : s.values) v = static_cast<float>(rng.uniform() - 0.5);
        s.values[0] = static_cast<float>((label ? 1.0 : -1.0) * (0.5 + rng.uniform()));
        s.label = label;
        out.push_back(s);
    }
    return out;
}

// Plain logistic regression by gradient descent.
double logistic_oracle_accuracy(const std::vector<Spectrogram>& data) {
    std::vector<double> w(17, 0.0);
    for (int it = 0; it < 500; ++it) {
        std::vector<double> g(17, 0.0);
        for (const auto& s : data) {
            double z = w[16];
            for (std::size_t i = 0; i < 16; ++i) z += w[i] * s.values[i];
            const double r = 1.0 / (1.0 + std::exp(-z)) - s.label;
            for (std::size_t i = 0; i < 16; ++i) g[i] += r * s.values[i];
            g[16] += r;
        }
        for (std::size_t i = 0; i < 17; ++i) w[i] -= 0.1 * g[i] / static_cast<double>(data.size());
    }
    std::size_t ok = 0;
    for (const auto& s : data) {
        double z = w[16];
        for (std::size_t i = 0; i < 16; ++i) z += w[i] * s.values[i];
        ok += (z > 0) == (s.label == 1);
    }
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

ModelState constant_class0(std::size_t inputs, std::size_t classes) {
    ModelState m = build_model(parse_arch("in:1x" + std::to_string(inputs) + "x1;out" + std::to_string(classes)), 1);
    std::fill(m.params.begin(), m.params.end(), 0.0);
    m.params[inputs * classes] = 1.0;
    return m;
}

}  // namespace

TEST_CASE("weighted batch loss") {
    const std::vector<double> l{0.5, 1.5, 2.0};
    CHECK(weighted_batch_loss(l, std::vector<double>(3, 1.0)) == doctest::Approx(4.0 / 3));
    CHECK(weighted_batch_loss(std::vector<double>{0.7, 9.0}, std::vector<double>{2.0, 0.0}) == 0.7);
    Rng rng(2);
    std::vector<double> ls(100), ws(100);
    for (std::size_t i = 0; i < 100; ++i) {
        ls[i] = rng.uniform() * 3;
        ws[i] = rng.uniform() * 2;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < 100; ++i) acc += ls[i] * ws[i];
    CHECK(std::abs(weighted_batch_loss(ls, ws) - acc / 100) < 1e-12);
    CHECK_THROWS_AS(weighted_batch_loss(ls, std::vector<double>(3)), Error);
}

TEST_CASE("batch objective gradient matches finite differences") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        ModelState m = build_model(parse_arch("in:6x6x1;c3x2-p2-fc5-out3"), seed);
        Rng rng(seed);
        for (double& p : m.params) p += 0.05 * rng.normal();
        std::vector<Spectrogram> data;
        std::vector<double> w;
        for (int i = 0; i < 5; ++i) {
            data.push_back(oracle::random_spectrogram(seed * 10 + i, 6, 6, i % 3));
            w.push_back(0.2 + rng.uniform());
        }
        std::vector<const Spectrogram*> ptrs;
        for (const auto& s : data) ptrs.push_back(&s);
        EwcState ewc;
        ewc.anchor.params_star = m.params;
        for (double& p : ewc.anchor.params_star) p += 0.1 * rng.normal();
        ewc.fisher.values.resize(m.params.size());
        for (double& f : ewc.fisher.values) f = rng.uniform();
        const double lambda = 2.5;
        const BatchObjective obj = batch_objective(m, ptrs, w, &ewc, lambda);
        CHECK(obj.penalty > 0.0);
        const auto num = oracle::central_difference(
            [&](const std::vector<double>& p) {
                ModelState t = m;
                t.params = p;
                return batch_objective(t, ptrs, w, &ewc, lambda).total();
            },
            m.params);
        CHECK(oracle::max_rel_error(obj.grad, num) < 1e-4);
    }
}

TEST_CASE("training on separable data") {
    const auto data = separable(200, 3);
    REQUIRE(logistic_oracle_accuracy(data) == 1.0);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 16;
    cfg.lr = 0.01;
    cfg.seed = 5;
    const auto r = train(build_model(parse_arch("in:4x4x1;fc8-out2"), 1), WeightedDataset::originals(data), cfg);
    CHECK(r.history.size() == 20);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);
    CHECK(evaluate(r.model, data).accuracy >= 0.95);
}

TEST_CASE("lambda zero is bit-identical to no EWC") {
    const auto data = separable(64, 4);
    const ModelState init = build_model(parse_arch("in:4x4x1;fc8-out2"), 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 8;
    EwcState ewc{make_anchor(init, 1), fisher_diagonal(init, data)};
    for (double& p : ewc.anchor.params_star) p += 1.0;
    const auto plain = train(init, WeightedDataset::originals(data), cfg);
    cfg.lambda = 0.0;
    const auto zero = train(init, WeightedDataset::originals(data), cfg, &ewc);
    CHECK(plain.model.params == zero.model.params);
    cfg.lambda = 1.0;
    const auto on = train(init, WeightedDataset::originals(data), cfg, &ewc);
    CHECK(plain.model.params != on.model.params);
}

TEST_CASE("with zero data weight, training descends the penalty") {
    const auto data = separable(32, 6);
    ModelState init = build_model(parse_arch("in:4x4x1;fc4-out2"), 3);
    EwcState ewc{make_anchor(init, 1), FisherDiagonal{std::vector<double>(init.params.size(), 1.0), 1}};
    for (double& p : init.params) p += 0.5;
    WeightedDataset ds;
    ds.admit(data, std::vector<double>(data.size(), 0.0), "zero");
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.lambda = 2.0;
    cfg.weight_floor_enabled = false;
    const double before = ewc_penalty(init.params, ewc.anchor, ewc.fisher, 2.0).value;
    const auto r = train(init, ds, cfg, &ewc);
    // Epoch losses are averaged before each step, so the first equals the start.
    CHECK(r.history.front().train_loss == doctest::Approx(before));
    for (std::size_t e = 1; e < r.history.size(); ++e) CHECK(r.history[e].train_loss < r.history[e - 1].train_loss);
    CHECK(ewc_penalty(r.model.params, ewc.anchor, ewc.fisher, 2.0).value < before);
}

TEST_CASE("training is deterministic and independent of the worker count") {
    const auto data = separable(100, 7);
    const ModelState init = build_model(parse_arch("in:4x4x1;c3x2-fc6-out2"), 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 20;
    cfg.seed = 1;
    set_worker_count(1);
    const auto a = train(init, WeightedDataset::originals(data), cfg);
    set_worker_count(3);
    const auto b = train(init, WeightedDataset::originals(data), cfg);
    set_worker_count(0);
    CHECK(a.model.params == b.model.params);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].train_loss == b.history[i].train_loss);
    cfg.seed = 2;
    CHECK(train(init, WeightedDataset::originals(data), cfg).model.params != a.model.params);
}

TEST_CASE("best validation epoch is restored") {
    const auto data = separable(80, 9);
    const auto val = separable(40, 10);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.lr = 0.02;
    const auto r = train(build_model(parse_arch("in:4x4x1;fc8-out2"), 5), WeightedDataset::originals(data), cfg,
                         nullptr, val);
    double best = -1.0;
    std::size_t best_epoch = 0;
    for (const auto& h : r.history) {
        REQUIRE(h.val_accuracy.has_value());
        if (*h.val_accuracy > best) {
            best = *h.val_accuracy;
            best_epoch = h.epoch;
        }
    }
    CHECK(r.best_epoch == best_epoch);
    CHECK(evaluate(r.model, val).accuracy == best);
}

TEST_CASE("divergence is reported") {
    auto data = separable(8, 1);
    data[3].values[2] = std::numeric_limits<float>::infinity();
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.shuffle = false;
    try {
        train(build_model(parse_arch("in:4x4x1;fc4-out2"), 1), WeightedDataset::originals(data), cfg);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Divergence);
        CHECK(std::string(e.what()).find("epoch 1, batch 1") != std::string::npos);
    }
}

TEST_CASE("weighted dataset admission") {
    const auto data = separable(4, 1);
    WeightedDataset ds = WeightedDataset::originals(data);
    ds.admit(std::vector<Spectrogram>(data.begin(), data.begin() + 2), std::vector<double>{0.5, 2.0}, "s1");
    CHECK(ds.size() == 6);
    CHECK(ds.items[0].cohort == "original");
    CHECK(ds.items[5].weight == 2.0);
    CHECK(ds.items[5].cohort == "s1");
    CHECK_THROWS_AS(ds.admit(data, std::vector<double>{1.0}, "bad"), Error);
    CHECK_THROWS_AS(ds.admit(std::vector<Spectrogram>{data[0]}, std::vector<double>{-1.0}, "bad"), Error);
}

TEST_CASE("evaluation and misclassification") {
    // Perfect model: one-hot inputs, identity weights.
    ModelState perfect = build_model(parse_arch("in:1x3x1;out3"), 1);
    std::fill(perfect.params.begin(), perfect.params.end(), 0.0);
    for (int k = 0; k < 3; ++k) perfect.params[k * 3 + k] = 5.0;
    std::vector<Spectrogram> data;
    for (int i = 0; i < 12; ++i) {
        Spectrogram s(1, 3);
        s.label = i % 3 == 0 ? 0 : (i % 2 ? 1 : 2);
        s.values[static_cast<std::size_t>(s.label)] = 1.0f;
        data.push_back(s);
    }
    const auto rep = evaluate(perfect, data);
    CHECK(rep.accuracy == 1.0);
    std::size_t diag = 0, total = 0;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p) {
            total += rep.confusion[t][p];
            if (t == p) diag += rep.confusion[t][p];
            else CHECK(rep.confusion[t][p] == 0);
        }
    CHECK(diag == total);
    CHECK(select_misclassified(perfect, data).empty());

    const ModelState zero = constant_class0(3, 3);
    const auto rz = evaluate(zero, data);
    const double prevalence = static_cast<double>(std::count_if(data.begin(), data.end(), [](auto& s) { return s.label == 0; })) / 12.0;
    CHECK(rz.accuracy == prevalence);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(rz.confusion[t][1] == 0);
        CHECK(rz.confusion[t][2] == 0);
    }
    const auto wrong = select_misclassified(zero, data);
    CHECK(wrong.size() == 8);
    for (const auto& s : wrong) CHECK(s.label != 0);

    // Random model: accuracy is the confusion trace over the total.
    const ModelState rnd = build_model(parse_arch("in:1x3x1;fc4-out3"), 11);
    const auto rr = evaluate(rnd, data);
    std::size_t tr = 0;
    for (std::size_t k = 0; k < 3; ++k) tr += rr.confusion[k][k];
    CHECK(rr.accuracy == static_cast<double>(tr) / 12.0);
    CHECK(select_misclassified(rnd, data).size() + tr == 12);
    CHECK(predict_all(rnd, data).size() == 12);
}

TEST_CASE("CSV outputs") {
    std::vector<EpochRecord> h{{1, 0.5, 0.75}, {2, 0.25, std::nullopt}};
    CHECK(history_csv(h) == "epoch,train_loss,val_accuracy\n1,0.5,0.75\n2,0.25,\n");
    EvalReport r;
    r.confusion = {{3, 1}, {0, 2}};
    CHECK(confusion_csv(r) == "true\\pred,class0,class1\nclass0,3,1\nclass1,0,2\n");
    const std::vector<std::string> names{"yes", "no"};
    CHECK(confusion_csv(r, names) == "true\\pred,yes,no\nyes,3,1\nno,0,2\n");
}
