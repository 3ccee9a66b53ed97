#include "limeil/ewc.hpp"

#include <algorithm>
#include <cmath>

#include "limeil/error.hpp"
#include "limeil/parallel.hpp"
#include "limeil/rng.hpp"

namespace limeil {
namespace {
// Fixed reduction blocks keep the accumulation order independent of threads.
constexpr std::size_t kFisherBlock = 16;
}

FisherDiagonal fisher_diagonal(const ModelState& model, std::span<const Spectrogram> samples) {
    require(!samples.empty(), ErrorCode::InvalidArgument, "Fisher estimation needs samples");
    const std::size_t P = model.params.size();
    const std::size_t blocks = (samples.size() + kFisherBlock - 1) / kFisherBlock;
    std::vector<std::vector<double>> partial(blocks);
    parallel_for(blocks, [&](std::size_t b) {
        std::vector<double>& acc = partial[b];
        acc.assign(P, 0.0);
        std::vector<double> g(P);
        const std::size_t end = std::min(samples.size(), (b + 1) * kFisherBlock);
        for (std::size_t i = b * kFisherBlock; i < end; ++i) {
            const Spectrogram& s = samples[i];
            require(s.label >= 0, ErrorCode::InvalidArgument, "negative label");
            std::fill(g.begin(), g.end(), 0.0);
            // Cross-entropy gradient is -d log p; its square is the same.
            accumulate_loss_gradient(model, s.values, static_cast<std::size_t>(s.label), 1.0, g);
            for (std::size_t j = 0; j < P; ++j) acc[j] += g[j] * g[j];
        }
    });
    FisherDiagonal f;
    f.values.assign(P, 0.0);
    f.sample_count = samples.size();
    for (const auto& acc : partial)
        for (std::size_t j = 0; j < P; ++j) f.values[j] += acc[j];
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (double& v : f.values) v *= inv;
    return f;
}

Penalty ewc_penalty(std::span<const double> params, const Anchor& anchor,
                    const FisherDiagonal& fisher, double lambda) {
    const std::size_t n = params.size();
    require(anchor.params_star.size() == n && fisher.values.size() == n, ErrorCode::LengthMismatch,
            "EWC penalty: params (" + std::to_string(n) + "), anchor (" +
                std::to_string(anchor.params_star.size()) + ") and Fisher (" +
                std::to_string(fisher.values.size()) + ") lengths differ");
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::InvalidArgument,
            "EWC lambda must be finite and non-negative");
    Penalty p;
    p.grad.assign(n, 0.0);
    if (lambda == 0.0) return p;
    for (std::size_t j = 0; j < n; ++j) {
        const double diff = params[j] - anchor.params_star[j];
        const double lf = lambda * fisher.values[j];
        p.value += 0.5 * lf * diff * diff;
        p.grad[j] = lf * diff;
    }
    return p;
}

Anchor make_anchor(const ModelState& model, std::uint64_t session_id) {
    return Anchor{params_snapshot(model), session_id};
}

std::vector<std::size_t> sample_fisher_pool(const ModelState& model,
                                            std::span<const Spectrogram> candidates,
                                            double fraction, std::uint64_t seed) {
    require(fraction > 0.0 && fraction <= 1.0, ErrorCode::InvalidArgument,
            "Fisher sample fraction must be in (0, 1]");
    std::vector<std::uint8_t> correct(candidates.size(), 0);
    parallel_for(candidates.size(), [&](std::size_t i) {
        const auto& s = candidates[i];
        correct[i] = static_cast<int>(predict_class(model, s.values)) == s.label ? 1 : 0;
    });
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (correct[i]) pool.push_back(i);
    require(!pool.empty(), ErrorCode::InvalidArgument,
            "no correctly predicted samples available for Fisher estimation");
    const auto take = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool.size()))));
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(pool));
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace limeil
