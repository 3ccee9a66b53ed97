#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "limeil/spectrogram.hpp"

namespace limeil {

enum class LayerKind { Conv3x3, MaxPool2x2, Dense, Output };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t units = 0;  // filters, neurons or classes; unused for pooling

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Shape3 {
    std::size_t height = 0;  // frequency bins
    std::size_t width = 0;   // time frames
    std::size_t channels = 0;

    std::size_t size() const noexcept { return height * width * channels; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Layer sequence of a plain VGG-style network. Conv layers are 3x3, stride 1,
/// zero padding 1 and followed by ReLU; dense layers are followed by ReLU; the
/// single trailing Output layer is affine.
struct ArchDescriptor {
    Shape3 input;
    std::vector<LayerSpec> layers;

    friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

/// Parses `in:<H>x<W>x<C>;tok-tok-...` with tokens c3x<n>, p2, fc<n>, out<n>.
ArchDescriptor parse_arch(std::string_view text);
std::string to_string(const ArchDescriptor& arch);

/// Throws Error(InvalidArch) describing the first violated rule.
void validate(const ArchDescriptor& arch);
std::size_t parameter_count(const ArchDescriptor& arch);
std::size_t output_classes(const ArchDescriptor& arch);

/// Architecture plus flat parameters and Adam moments.
///
/// Parameter layout, layer by layer: conv weights [out][in][3][3] then bias
/// [out]; dense/output weights [out][in] then bias [out]. Dense inputs are the
/// flattened channel-major activations.
struct ModelState {
    ArchDescriptor arch;
    std::vector<double> params;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::uint64_t step_count = 0;
};

struct Logits {
    std::vector<double> values;
};

/// He-normal weights (std = sqrt(2 / fan_in)) from xoshiro256** seeded by
/// `seed`, zero biases, zeroed Adam state.
ModelState build_model(const ArchDescriptor& arch, std::uint64_t seed);

Logits forward(const ModelState& model, std::span<const float> input);
Logits forward(const ModelState& model, const Spectrogram& input);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad_logits;
};

std::vector<double> softmax(std::span<const double> logits);
LossAndGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label);

/// Gradient of dot(logits(params), grad_logits) with respect to params.
std::vector<double> backward(const ModelState& model, std::span<const float> input,
                             std::span<const double> grad_logits);
std::vector<double> backward(const ModelState& model, const Spectrogram& input,
                             std::span<const double> grad_logits);

/// One forward + backward pass of softmax cross-entropy on a labelled input.
/// The parameter gradient scaled by `scale` is added into `grad_accum`.
/// Returns the unscaled loss and the logits.
double accumulate_loss_gradient(const ModelState& model, std::span<const float> input,
                                std::size_t label, double scale, std::span<double> grad_accum,
                                Logits* logits_out = nullptr);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam update in place. Non-finite gradients raise NonFinite
/// before any state is touched.
void adam_step(ModelState& model, std::span<const double> grad, double lr,
               const AdamConfig& cfg = {});

/// Clears Adam moments and the step counter.
void reset_optimizer(ModelState& model);

std::vector<double> params_snapshot(const ModelState& model);
void params_load(ModelState& model, std::span<const double> params);

/// Index of the largest value; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);
std::size_t predict_class(const ModelState& model, std::span<const float> input);

}  // namespace limeil
