#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "limeil/nn.hpp"
#include "limeil/slic.hpp"
#include "limeil/spectrogram.hpp"

namespace limeil {

/// n_samples x n_segments on/off matrix; row 0 is the unperturbed instance.
struct MaskSet {
    std::size_t n_samples = 0;
    std::size_t n_segments = 0;
    std::vector<std::uint8_t> bits;

    std::span<const std::uint8_t> row(std::size_t i) const {
        return {bits.data() + i * n_segments, n_segments};
    }
};

/// Row 0 all ones, remaining entries i.i.d. Bernoulli(0.5). Requires
/// n_samples >= n_segments + 2.
MaskSet perturb(std::size_t n_segments, std::size_t n_samples, std::uint64_t seed);

/// Pixels of "off" segments are replaced by `baseline`.
Spectrogram apply_mask(const Spectrogram& spec, const SegmentMap& map,
                       std::span<const std::uint8_t> mask, double baseline);

double cosine_distance(std::span<const double> a, std::span<const double> b);
double cosine_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// sqrt(exp(-dist^2 / sigma^2)).
double kernel_weight(double dist, double sigma = 0.25);

struct RidgeFit {
    std::vector<double> coefficients;
    double intercept = 0.0;
};

/// Weighted least squares with an appended (unregularised) intercept column:
/// (X'WX + ridge*I) beta = X'Wy, solved by Cholesky.
RidgeFit weighted_ridge(const MaskSet& design, std::span<const double> y,
                        std::span<const double> w, double ridge);

struct Explanation {
    std::vector<double> scores;  // one per segment
    std::size_t target_class = 0;
    double intercept = 0.0;
};

struct LimeConfig {
    std::size_t n_samples = 256;
    double sigma = 0.25;
    std::optional<double> baseline;  // unset: mean of the spectrogram
    double ridge = 1e-6;
    std::uint64_t seed = 0;
};

/// Class-probability function evaluated on perturbed inputs.
using Predictor = std::function<std::vector<double>(const Spectrogram&)>;

/// softmax(forward(model, x)).
Predictor model_predictor(const ModelState& model);

/// Per-variation kernel weights: cosine distance in mask space between row 0
/// and each row. A row with every segment off has no direction and is given
/// the maximal binary distance 1.
std::vector<double> mask_kernel_weights(const MaskSet& masks, double sigma);

/// One shared set of perturbations and predictions; one regression per
/// requested class (target = that class's probability).
std::vector<Explanation> explain_classes(const Predictor& predict, const Spectrogram& spec,
                                         const SegmentMap& map, std::span<const std::size_t> classes,
                                         const LimeConfig& cfg);

Explanation explain(const Predictor& predict, const Spectrogram& spec, const SegmentMap& map,
                    std::size_t target_class, const LimeConfig& cfg);
Explanation explain(const ModelState& model, const Spectrogram& spec, const SegmentMap& map,
                    std::size_t target_class, const LimeConfig& cfg);

/// `# target_class=<c>,intercept=<b>` then `segment_id,score` rows.
std::string explanation_csv(const Explanation& e);

/// PGM with the `k` highest-scoring segments white and the rest black.
std::string top_segments_pgm(const Explanation& e, const SegmentMap& map, std::size_t k);

}  // namespace limeil
