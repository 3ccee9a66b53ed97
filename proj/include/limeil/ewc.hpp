#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "limeil/nn.hpp"
#include "limeil/spectrogram.hpp"

namespace limeil {

struct FisherDiagonal {
    std::vector<double> values;
    std::size_t sample_count = 0;
};

struct Anchor {
    std::vector<double> params_star;
    std::uint64_t session_id = 0;
};

/// Empirical Fisher diagonal: mean over samples of (d log p(label | x) / d theta)^2.
FisherDiagonal fisher_diagonal(const ModelState& model, std::span<const Spectrogram> samples);

struct Penalty {
    double value = 0.0;
    std::vector<double> grad;
};

/// sum_j (lambda / 2) F_j (theta_j - theta*_j)^2 and its gradient.
Penalty ewc_penalty(std::span<const double> params, const Anchor& anchor,
                    const FisherDiagonal& fisher, double lambda);

Anchor make_anchor(const ModelState& model, std::uint64_t session_id);

/// Indices (ascending) of a seeded without-replacement sample of
/// max(1, floor(fraction * correct)) samples the model predicts correctly.
std::vector<std::size_t> sample_fisher_pool(const ModelState& model,
                                            std::span<const Spectrogram> candidates,
                                            double fraction, std::uint64_t seed);

}  // namespace limeil
