#include "limeil/lime.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "limeil/error.hpp"
#include "limeil/parallel.hpp"
#include "limeil/rng.hpp"

namespace limeil {

MaskSet perturb(std::size_t n_segments, std::size_t n_samples, std::uint64_t seed) {
    require(n_segments >= 1, ErrorCode::InvalidArgument, "need at least one segment");
    require(n_samples >= n_segments + 2, ErrorCode::InvalidArgument,
            std::to_string(n_samples) + " perturbations are too few for " +
                std::to_string(n_segments) + " segments (need at least segments + 2)");
    MaskSet m;
    m.n_samples = n_samples;
    m.n_segments = n_segments;
    m.bits.assign(n_samples * n_segments, 1);
    Rng rng(seed);
    for (std::size_t i = n_segments; i < m.bits.size(); ++i) m.bits[i] = rng.bernoulli(0.5) ? 1 : 0;
    return m;
}

Spectrogram apply_mask(const Spectrogram& spec, const SegmentMap& map,
                       std::span<const std::uint8_t> mask, double baseline) {
    require(map.labels.size() == spec.values.size(), ErrorCode::ShapeMismatch,
            "segment map does not match the spectrogram shape");
    require(mask.size() == map.n_segments, ErrorCode::LengthMismatch,
            "mask has " + std::to_string(mask.size()) + " entries for " +
                std::to_string(map.n_segments) + " segments");
    Spectrogram out = spec;
    const auto b = static_cast<float>(baseline);
    for (std::size_t p = 0; p < out.values.size(); ++p)
        if (!mask[static_cast<std::size_t>(map.labels[p])]) out.values[p] = b;
    return out;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorCode::LengthMismatch, "cosine distance of unequal lengths");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    require(na > 0.0 && nb > 0.0, ErrorCode::InvalidArgument,
            "cosine distance is undefined for a zero vector");
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double cosine_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    std::vector<double> da(a.begin(), a.end()), db(b.begin(), b.end());
    return cosine_distance(std::span<const double>(da), std::span<const double>(db));
}

double kernel_weight(double dist, double sigma) {
    require(sigma > 0.0, ErrorCode::InvalidArgument, "kernel width must be positive");
    require(dist >= 0.0, ErrorCode::InvalidArgument, "distance must be non-negative");
    return std::sqrt(std::exp(-(dist * dist) / (sigma * sigma)));
}

RidgeFit weighted_ridge(const MaskSet& design, std::span<const double> y,
                        std::span<const double> w, double ridge) {
    const std::size_t n = design.n_samples, S = design.n_segments;
    require(y.size() == n && w.size() == n, ErrorCode::LengthMismatch,
            "regression targets/weights do not match the design rows");
    require(ridge >= 0.0, ErrorCode::InvalidArgument, "ridge must be non-negative");
    double wsum = 0.0;
    for (double wi : w) {
        require(wi >= 0.0 && std::isfinite(wi), ErrorCode::InvalidArgument,
                "regression weights must be finite and non-negative");
        wsum += wi;
    }
    require(wsum > 0.0, ErrorCode::InvalidArgument, "regression weights are all zero");

    const Eigen::Index d = static_cast<Eigen::Index>(S + 1);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd row(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto bits = design.row(i);
        for (std::size_t s = 0; s < S; ++s) row[static_cast<Eigen::Index>(s)] = bits[s];
        row[d - 1] = 1.0;
        A.selfadjointView<Eigen::Lower>().rankUpdate(row, w[i]);
        rhs.noalias() += (w[i] * y[i]) * row;
    }
    A = A.selfadjointView<Eigen::Lower>();
    for (Eigen::Index s = 0; s + 1 < d; ++s) A(s, s) += ridge;

    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    require(llt.info() == Eigen::Success, ErrorCode::Singular,
            "weighted normal equations are singular");
    const Eigen::VectorXd beta = llt.solve(rhs);
    require(beta.allFinite(), ErrorCode::Singular, "regression produced non-finite coefficients");

    RidgeFit fit;
    fit.coefficients.assign(beta.data(), beta.data() + S);
    fit.intercept = beta[d - 1];
    return fit;
}

Predictor model_predictor(const ModelState& model) {
    return [&model](const Spectrogram& s) { return softmax(forward(model, s).values); };
}

std::vector<double> mask_kernel_weights(const MaskSet& masks, double sigma) {
    std::vector<double> w(masks.n_samples);
    const auto reference = masks.row(0);
    for (std::size_t i = 0; i < masks.n_samples; ++i) {
        const auto r = masks.row(i);
        const bool any_on = std::any_of(r.begin(), r.end(), [](std::uint8_t b) { return b != 0; });
        const double dist = any_on ? cosine_distance(reference, r) : 1.0;
        w[i] = kernel_weight(std::max(0.0, dist), sigma);
    }
    return w;
}

std::vector<Explanation> explain_classes(const Predictor& predict, const Spectrogram& spec,
                                         const SegmentMap& map, std::span<const std::size_t> classes,
                                         const LimeConfig& cfg) {
    require(map.labels.size() == spec.values.size(), ErrorCode::ShapeMismatch,
            "segment map does not match the spectrogram shape");
    const MaskSet masks = perturb(map.n_segments, cfg.n_samples, cfg.seed);
    double baseline = 0.0;
    if (cfg.baseline) {
        baseline = *cfg.baseline;
    } else if (!spec.values.empty()) {
        double sum = 0.0;
        for (float v : spec.values) sum += v;
        baseline = sum / static_cast<double>(spec.values.size());
    }

    std::vector<std::vector<double>> probs(masks.n_samples);
    parallel_for(masks.n_samples, [&](std::size_t i) {
        probs[i] = predict(apply_mask(spec, map, masks.row(i), baseline));
    });
    const std::vector<double> weights = mask_kernel_weights(masks, cfg.sigma);

    std::vector<Explanation> out;
    out.reserve(classes.size());
    std::vector<double> y(masks.n_samples);
    for (std::size_t cls : classes) {
        for (std::size_t i = 0; i < masks.n_samples; ++i) {
            require(cls < probs[i].size(), ErrorCode::InvalidArgument,
                    "target class " + std::to_string(cls) + " out of range");
            y[i] = probs[i][cls];
        }
        RidgeFit fit = weighted_ridge(masks, y, weights, cfg.ridge);
        out.push_back({std::move(fit.coefficients), cls, fit.intercept});
    }
    return out;
}

Explanation explain(const Predictor& predict, const Spectrogram& spec, const SegmentMap& map,
                    std::size_t target_class, const LimeConfig& cfg) {
    const std::size_t classes[] = {target_class};
    return std::move(explain_classes(predict, spec, map, classes, cfg).front());
}

Explanation explain(const ModelState& model, const Spectrogram& spec, const SegmentMap& map,
                    std::size_t target_class, const LimeConfig& cfg) {
    (void)forward(model, spec);  // validates the input shape up front
    return explain(model_predictor(model), spec, map, target_class, cfg);
}

std::string explanation_csv(const Explanation& e) {
    std::ostringstream os;
    os.precision(17);
    os << "# target_class=" << e.target_class << ",intercept=" << e.intercept << "\n";
    os << "segment_id,score\n";
    for (std::size_t s = 0; s < e.scores.size(); ++s) os << s << "," << e.scores[s] << "\n";
    return os.str();
}

std::string top_segments_pgm(const Explanation& e, const SegmentMap& map, std::size_t k) {
    require(e.scores.size() == map.n_segments, ErrorCode::LengthMismatch,
            "explanation does not match the segment map");
    std::vector<std::size_t> order(e.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return e.scores[a] > e.scores[b]; });
    std::vector<bool> top(e.scores.size(), false);
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) top[order[i]] = true;
    std::string out = "P5\n" + std::to_string(map.cols) + " " + std::to_string(map.rows) + "\n255\n";
    for (int l : map.labels) out.push_back(top[static_cast<std::size_t>(l)] ? '\xff' : '\0');
    return out;
}

}  // namespace limeil
