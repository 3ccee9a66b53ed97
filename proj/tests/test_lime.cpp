#include <cmath>
#include <numeric>

#include "doctest.h"
#include "limeil/error.hpp"
#include "limeil/lime.hpp"
#include "limeil/sessions.hpp"
#include "limeil/slic.hpp"
#include "oracles.hpp"

using namespace limeil;

namespace {

Spectrogram textured(std::uint64_t seed, std::size_t f = 16, std::size_t t = 16) {
    Spectrogram s(f, t);
    Rng rng(seed);
    for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < t; ++j)
            s.at(i, j) = static_cast<float>(0.2 + 0.6 * ((i / 4 + j / 4) % 2) + 0.1 * rng.uniform());
    return s;
}

// A "model" that reads the mask back off the input and is linear in it.
struct PlantedPredictor {
    std::vector<std::size_t> probe_pixel;  // one pixel per segment
    std::vector<double> coef;
    float baseline;

    std::vector<double> operator()(const Spectrogram& x) const {
        double p = 0.1;
        for (std::size_t s = 0; s < coef.size(); ++s)
            if (x.values[probe_pixel[s]] != baseline) p += coef[s];
        return {p, 1.0 - p};
    }
};

PlantedPredictor plant(const SegmentMap& map, std::vector<double> coef, float baseline) {
    PlantedPredictor pp{std::vector<std::size_t>(map.n_segments), std::move(coef), baseline};
    for (std::size_t p = map.labels.size(); p-- > 0;) pp.probe_pixel[static_cast<std::size_t>(map.labels[p])] = p;
    return pp;
}

SegmentMap grid_map(std::size_t rows, std::size_t cols, std::size_t block) {
    SegmentMap m;
    m.rows = rows;
    m.cols = cols;
    const std::size_t per_row = cols / block;
    for (std::size_t y = 0; y < rows; ++y)
        for (std::size_t x = 0; x < cols; ++x) m.labels.push_back(static_cast<int>((y / block) * per_row + x / block));
    m.n_segments = (rows / block) * per_row;
    return m;
}

}  // namespace

TEST_CASE("perturbation masks") {
    const MaskSet a = perturb(16, 64, 9);
    const MaskSet b = perturb(16, 64, 9);
    CHECK(a.bits == b.bits);
    CHECK(perturb(16, 64, 10).bits != a.bits);
    const auto r0 = a.row(0);
    CHECK(std::all_of(r0.begin(), r0.end(), [](std::uint8_t v) { return v == 1; }));
    CHECK_THROWS_AS(perturb(16, 17, 1), Error);

    const MaskSet big = perturb(16, 10000, 4);
    double on = 0.0;
    for (std::size_t i = 16; i < big.bits.size(); ++i) on += big.bits[i];
    CHECK(std::abs(on / static_cast<double>(big.bits.size() - 16) - 0.5) < 0.015);
}

TEST_CASE("apply_mask") {
    const Spectrogram s = textured(1);
    const SegmentMap map = grid_map(16, 16, 4);
    std::vector<std::uint8_t> ones(map.n_segments, 1), zeros(map.n_segments, 0);
    CHECK(apply_mask(s, map, ones, -1.0).values == s.values);
    const auto blank = apply_mask(s, map, zeros, 0.25).values;
    CHECK(std::all_of(blank.begin(), blank.end(), [](float v) { return v == 0.25f; }));
    auto one_off = ones;
    one_off[5] = 0;
    const auto m = apply_mask(s, map, one_off, -1.0);
    for (std::size_t p = 0; p < s.size(); ++p)
        CHECK((m.values[p] != s.values[p]) == (map.labels[p] == 5));
    CHECK_THROWS_AS(apply_mask(s, map, std::vector<std::uint8_t>(3, 1), 0.0), Error);
}

TEST_CASE("cosine distance") {
    const std::vector<std::uint8_t> ones{1, 1}, e1{1, 0}, e2{0, 1};
    CHECK(cosine_distance(std::span<const std::uint8_t>(ones), std::span<const std::uint8_t>(ones)) ==
          doctest::Approx(0.0));
    CHECK(cosine_distance(std::span<const std::uint8_t>(e1), std::span<const std::uint8_t>(e2)) == 1.0);
    CHECK(cosine_distance(std::span<const std::uint8_t>(ones), std::span<const std::uint8_t>(e1)) ==
          doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-12));
    const std::vector<double> z{0, 0}, a{1, 2};
    CHECK_THROWS_AS(cosine_distance(std::span<const double>(z), std::span<const double>(a)), Error);
}

TEST_CASE("kernel weight") {
    CHECK(kernel_weight(0.0) == 1.0);
    CHECK(std::abs(kernel_weight(0.25, 0.25) - std::exp(-0.5)) < 1e-12);
    double prev = 2.0;
    for (double d = 0.0; d <= 1.0; d += 0.05) {
        const double w = kernel_weight(d);
        CHECK(w < prev);
        prev = w;
    }
    CHECK_THROWS_AS(kernel_weight(0.1, 0.0), Error);
}

TEST_CASE("mask kernel weights give all-off rows the maximal distance") {
    MaskSet m;
    m.n_samples = 3;
    m.n_segments = 2;
    m.bits = {1, 1, 1, 0, 0, 0};
    const auto w = mask_kernel_weights(m, 0.25);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == doctest::Approx(kernel_weight(1.0 - 1.0 / std::sqrt(2.0))));
    CHECK(w[2] == doctest::Approx(kernel_weight(1.0)));
}

TEST_CASE("weighted ridge") {
    MaskSet id;
    id.n_samples = 3;
    id.n_segments = 2;
    id.bits = {1, 0, 0, 1, 0, 0};
    const std::vector<double> y{2, 3, 0}, w{1, 1, 1};
    const RidgeFit fit = weighted_ridge(id, y, w, 1e-8);
    CHECK(fit.coefficients[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(fit.coefficients[1] == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(std::abs(fit.intercept) < 1e-6);

    const MaskSet m = perturb(5, 40, 3);
    const std::vector<double> c(40, 0.7);
    std::vector<double> wr(40);
    Rng rng(5);
    for (double& v : wr) v = 0.1 + rng.uniform();
    const RidgeFit flat = weighted_ridge(m, c, wr, 1e-6);
    for (double v : flat.coefficients) CHECK(std::abs(v) < 1e-8);
    CHECK(flat.intercept == doctest::Approx(0.7).epsilon(1e-8));

    // Dense normal-equation oracle.
    std::vector<double> yr(40);
    for (double& v : yr) v = rng.normal();
    const double ridge = 0.01;
    const RidgeFit got = weighted_ridge(m, yr, wr, ridge);
    std::vector<std::vector<double>> a(6, std::vector<double>(6, 0.0));
    std::vector<double> b(6, 0.0);
    for (std::size_t i = 0; i < 40; ++i) {
        double x[6];
        for (std::size_t s = 0; s < 5; ++s) x[s] = m.bits[i * 5 + s];
        x[5] = 1.0;
        for (int r = 0; r < 6; ++r) {
            b[r] += wr[i] * x[r] * yr[i];
            for (int k = 0; k < 6; ++k) a[r][k] += wr[i] * x[r] * x[k];
        }
    }
    for (int s = 0; s < 5; ++s) a[s][s] += ridge;
    const auto beta = oracle::solve(a, b);
    for (std::size_t s = 0; s < 5; ++s) CHECK(std::abs(got.coefficients[s] - beta[s]) < 1e-8);
    CHECK(std::abs(got.intercept - beta[5]) < 1e-8);

    CHECK_THROWS_AS(weighted_ridge(m, yr, std::vector<double>(40, 0.0), 0.0), Error);
}

TEST_CASE("explanations of a constant model vanish") {
    const Spectrogram s = textured(2);
    SlicConfig sc;
    sc.segments = 9;
    const SegmentMap map = slic(s, sc);
    const Predictor constant = [](const Spectrogram&) { return std::vector<double>{0.3, 0.7}; };
    LimeConfig cfg;
    cfg.n_samples = 128;
    const Explanation e = explain(constant, s, map, 1, cfg);
    CHECK(e.target_class == 1);
    for (double v : e.scores) CHECK(std::abs(v) < 1e-6);
    CHECK(e.intercept == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("planted linear model is recovered") {
    const Spectrogram s = textured(3);
    const SegmentMap map = grid_map(16, 16, 4);
    std::vector<double> c(16);
    Rng rng(4);
    for (double& v : c) v = 0.05 * (rng.uniform() - 0.5);
    const PlantedPredictor pp = plant(map, c, -1.0f);
    LimeConfig cfg;
    cfg.baseline = -1.0;
    cfg.seed = 21;
    const auto ex = explain_classes(Predictor(pp), s, map, std::vector<std::size_t>{0, 1}, cfg);
    CHECK(oracle::max_abs_diff(ex[0].scores, c) < 1e-4);
    std::vector<double> neg(c);
    for (double& v : neg) v = -v;
    CHECK(oracle::max_abs_diff(ex[1].scores, neg) < 1e-4);
    CHECK(ex[0].intercept == doctest::Approx(0.1).epsilon(1e-4));

    const auto again = explain_classes(Predictor(pp), s, map, std::vector<std::size_t>{0, 1}, cfg);
    CHECK(again[0].scores == ex[0].scores);
}

TEST_CASE("explanation outputs") {
    Explanation e{{0.5, -0.25, 0.125}, 2, 0.1};
    const std::string csv = explanation_csv(e);
    CHECK(csv.rfind("# target_class=2,intercept=0.1", 0) == 0);
    CHECK(csv.find("segment_id,score\n0,0.5\n1,-0.25\n2,0.125\n") != std::string::npos);

    SegmentMap map;
    map.rows = 1;
    map.cols = 3;
    map.labels = {0, 1, 2};
    map.n_segments = 3;
    const std::string pgm = top_segments_pgm(e, map, 2);
    CHECK(pgm == std::string("P5\n3 1\n255\n") + '\xff' + '\0' + '\xff');
}

TEST_CASE("model explanations are deterministic") {
    const ModelState model = build_model(parse_arch("in:16x16x1;c3x2-p2-fc8-out3"), 5);
    const Spectrogram s = textured(6);
    SlicConfig sc;
    sc.segments = 8;
    const SegmentMap map = slic(s, sc);
    LimeConfig cfg;
    cfg.n_samples = 64;
    cfg.seed = 3;
    const Explanation a = explain(model, s, map, 1, cfg);
    const Explanation b = explain(model, s, map, 1, cfg);
    CHECK(a.scores == b.scores);
    CHECK(a.scores.size() == map.n_segments);
    CHECK_THROWS_AS(explain(model, textured(6, 8, 8), map, 1, cfg), Error);
}

TEST_CASE("explanation-distance weights") {
    const Explanation same{{0.3, -0.2, 0.1}, 0, 0};
    for (auto m : {WeightMetric::Euclidean, WeightMetric::Manhattan, WeightMetric::Cosine})
        CHECK(sample_weight(same, same, m) == doctest::Approx(0.0));
    const Explanation p{{1, 0}, 0, 0}, t{{0, 1}, 1, 0};
    CHECK(sample_weight(p, t, WeightMetric::Euclidean) == 2.0);
    CHECK(sample_weight(p, t, WeightMetric::Manhattan) == 2.0);
    CHECK(sample_weight(p, t, WeightMetric::Cosine) == 1.0);
    CHECK(sample_weight(p, t, WeightMetric::Euclidean, true) == doctest::Approx(std::sqrt(2.0)));

    const Explanation a{{0.5, -1.0, 2.0, 0.25}, 0, 0}, b{{1.5, 0.0, -1.0, 0.75}, 0, 0};
    const Explanation ap{{2.0, 0.25, 0.5, -1.0}, 0, 0}, bp{{-1.0, 0.75, 1.5, 0.0}, 0, 0};
    CHECK(sample_weight(a, b, WeightMetric::Euclidean) == doctest::Approx(sample_weight(ap, bp, WeightMetric::Euclidean)));
    CHECK(sample_weight(a, b, WeightMetric::Euclidean) == doctest::Approx(1 + 1 + 9 + 0.25));
    CHECK_THROWS_AS(sample_weight(a, Explanation{{1.0}, 0, 0}, WeightMetric::Euclidean), Error);
    CHECK(parse_metric("manhattan") == WeightMetric::Manhattan);
    CHECK_THROWS_AS(parse_metric("chebyshev"), Error);
}

TEST_CASE("LIME weights of a planted misclassifier") {
    Spectrogram s = textured(7);
    s.label = 1;
    LimeWeightConfig cfg;
    cfg.slic.segments = 9;
    cfg.lime.baseline = -1.0;
    cfg.lime.seed = 8;
    const SegmentMap map = slic(s, cfg.slic);
    std::vector<double> c(map.n_segments, 0.06);
    const PlantedPredictor pp = plant(map, c, -1.0f);
    REQUIRE(pp(s)[0] > pp(s)[1]);  // predicts class 0, truth is 1
    const std::vector<Spectrogram> batch{s};
    const auto w = generate_lime_weights(Predictor(pp), batch, cfg);
    double expected = 0.0;
    for (double v : c) expected += 4 * v * v;
    REQUIRE(w.size() == 1);
    CHECK(std::abs(w[0] - expected) < 1e-3);
    CHECK(generate_lime_weights(Predictor(pp), batch, cfg) == w);

    // Constant-probability model: both explanations vanish.
    const Predictor flat = [](const Spectrogram&) { return std::vector<double>{0.8, 0.2}; };
    CHECK(std::abs(generate_lime_weights(flat, batch, cfg)[0]) < 1e-6);

    Spectrogram right = s;
    right.label = 0;
    CHECK_THROWS_AS(generate_lime_weights(Predictor(pp), std::vector<Spectrogram>{right}, cfg), Error);
}
