#include <cmath>

#include "doctest.h"
#include "limeil/error.hpp"
#include "limeil/ewc.hpp"
#include "oracles.hpp"

using namespace limeil;

namespace {

Anchor anchor_of(std::vector<double> p) { return Anchor{std::move(p), 0}; }
FisherDiagonal fisher_of(std::vector<double> f) { return FisherDiagonal{std::move(f), 1}; }

}  // namespace

TEST_CASE("penalty identities") {
    const std::vector<double> theta{0.3, -1.2, 4.0};
    const Penalty zero = ewc_penalty(theta, anchor_of(theta), fisher_of({1, 2, 3}), 5.0);
    CHECK(zero.value == 0.0);
    CHECK(zero.grad == std::vector<double>(3, 0.0));

    const Penalty scalar = ewc_penalty(std::vector<double>{4.0}, anchor_of({1.0}), fisher_of({1.0}), 2.0);
    CHECK(scalar.value == 9.0);
    CHECK(scalar.grad[0] == 6.0);

    const Penalty off = ewc_penalty(theta, anchor_of({0, 0, 0}), fisher_of({1, 1, 1}), 0.0);
    CHECK(off.value == 0.0);
    CHECK(off.grad == std::vector<double>(3, 0.0));

    CHECK_THROWS_AS(ewc_penalty(theta, anchor_of({0, 0}), fisher_of({1, 1, 1}), 1.0), Error);
    CHECK_THROWS_AS(ewc_penalty(theta, anchor_of(theta), fisher_of({1, 1, 1}), -1.0), Error);
}

TEST_CASE("penalty gradient matches finite differences and the penalty is convex") {
    Rng rng(12);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> theta(20), star(20), f(20);
        for (std::size_t i = 0; i < 20; ++i) {
            theta[i] = rng.normal();
            star[i] = rng.normal();
            f[i] = rng.uniform();
        }
        const double lambda = 0.5 + rng.uniform() * 10;
        const auto pen = ewc_penalty(theta, anchor_of(star), fisher_of(f), lambda);
        // Central differences are exact on a quadratic, so a wide step only
        // trims roundoff.
        const auto num = oracle::central_difference(
            [&](const std::vector<double>& t) { return ewc_penalty(t, anchor_of(star), fisher_of(f), lambda).value; },
            theta, 1e-3);
        CHECK(oracle::max_rel_error(pen.grad, num, 1e-3) < 1e-8);

        std::vector<double> other(20), mid(20);
        for (std::size_t i = 0; i < 20; ++i) {
            other[i] = rng.normal();
            mid[i] = 0.5 * (theta[i] + other[i]);
        }
        const double pm = ewc_penalty(mid, anchor_of(star), fisher_of(f), lambda).value;
        const double po = ewc_penalty(other, anchor_of(star), fisher_of(f), lambda).value;
        CHECK(pm <= 0.5 * (pen.value + po) + 1e-12);
    }
}

TEST_CASE("scalar logistic Fisher") {
    // Two-class affine model with zero parameters: p(y=1 | x=1) = 1/2.
    ModelState m = build_model(parse_arch("in:1x1x1;out2"), 1);
    std::fill(m.params.begin(), m.params.end(), 0.0);
    Spectrogram s(1, 1);
    s.values[0] = 1.0f;
    s.label = 1;
    const FisherDiagonal f = fisher_diagonal(m, std::vector<Spectrogram>{s});
    CHECK(f.sample_count == 1);
    for (double v : f.values) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("Fisher of one sample is its squared gradient") {
    const ModelState m = build_model(parse_arch("in:6x6x1;c3x2-p2-fc4-out3"), 3);
    const Spectrogram s = oracle::random_spectrogram(4, 6, 6, 2);
    const auto lg = softmax_cross_entropy(forward(m, s).values, 2);
    const auto g = backward(m, s, lg.grad_logits);
    const FisherDiagonal f = fisher_diagonal(m, std::vector<Spectrogram>{s});
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(f.values[i] == doctest::Approx(g[i] * g[i]).epsilon(1e-12));
}

TEST_CASE("Fisher is a non-negative mean and vanishes for saturated predictions") {
    const ModelState m = build_model(parse_arch("in:6x6x1;c3x2-fc4-out3"), 3);
    std::vector<Spectrogram> data;
    for (int i = 0; i < 40; ++i) data.push_back(oracle::random_spectrogram(100 + i, 6, 6, i % 3));
    const FisherDiagonal f = fisher_diagonal(m, data);
    CHECK(f.sample_count == 40);
    CHECK(std::all_of(f.values.begin(), f.values.end(), [](double v) { return v >= 0.0; }));
    // Mean of per-sample Fisher values.
    std::vector<double> acc(m.params.size(), 0.0);
    for (const auto& s : data) {
        const auto one = fisher_diagonal(m, std::vector<Spectrogram>{s});
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += one.values[i] / 40.0;
    }
    CHECK(oracle::max_rel_error(f.values, acc, 1e-12) < 1e-10);

    ModelState sat = build_model(parse_arch("in:2x2x1;out3"), 1);
    std::fill(sat.params.begin(), sat.params.end(), 0.0);
    sat.params[12 + 1] = 1000.0;  // bias of class 1
    std::vector<Spectrogram> ones;
    for (int i = 0; i < 3; ++i) ones.push_back(oracle::random_spectrogram(i, 2, 2, 1));
    const FisherDiagonal fz = fisher_diagonal(sat, ones);
    CHECK(std::all_of(fz.values.begin(), fz.values.end(), [](double v) { return v < 1e-300; }));
    CHECK_THROWS_AS(fisher_diagonal(sat, std::vector<Spectrogram>{}), Error);
}

TEST_CASE("anchors are snapshots") {
    ModelState m = build_model(parse_arch("in:3x3x1;fc4-out2"), 2);
    const Anchor a = make_anchor(m, 4);
    CHECK(a.params_star == m.params);
    CHECK(a.session_id == 4);
    adam_step(m, std::vector<double>(m.params.size(), 1.0), 0.1);
    CHECK(a.params_star != m.params);
    params_load(m, a.params_star);
    const FisherDiagonal f = fisher_of(std::vector<double>(m.params.size(), 1.0));
    CHECK(ewc_penalty(m.params, a, f, 3.0).value == 0.0);
}

TEST_CASE("Fisher pool samples correct predictions only") {
    // Output fixed on class 0.
    ModelState m = build_model(parse_arch("in:2x2x1;out2"), 1);
    std::fill(m.params.begin(), m.params.end(), 0.0);
    m.params[8] = 5.0;
    std::vector<Spectrogram> data;
    for (int i = 0; i < 200; ++i) data.push_back(oracle::random_spectrogram(i, 2, 2, i % 4 == 0 ? 1 : 0));
    const auto idx = sample_fisher_pool(m, data, 0.05, 7);
    CHECK(idx.size() == 7);  // floor(0.05 * 150)
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    for (std::size_t i : idx) CHECK(data[i].label == 0);
    CHECK(sample_fisher_pool(m, data, 0.05, 7) == idx);
    CHECK(sample_fisher_pool(m, data, 0.001, 7).size() == 1);
    CHECK(sample_fisher_pool(m, data, 1.0, 7).size() == 150);

    for (auto& s : data) s.label = 1;
    CHECK_THROWS_AS(sample_fisher_pool(m, data, 0.05, 7), Error);
    CHECK_THROWS_AS(sample_fisher_pool(m, data, 0.0, 7), Error);
}
