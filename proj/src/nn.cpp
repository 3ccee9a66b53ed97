#include "limeil/nn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "limeil/error.hpp"
#include "limeil/rng.hpp"

namespace limeil {
namespace {

struct LayerPlan {
    LayerKind kind;
    Shape3 in;
    Shape3 out;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    bool relu = false;
};

std::string shape_str(const Shape3& s) {
    std::ostringstream os;
    os << s.height << "x" << s.width << "x" << s.channels;
    return os.str();
}

std::vector<LayerPlan> plan_layers(const ArchDescriptor& arch) {
    require(arch.input.height > 0 && arch.input.width > 0 && arch.input.channels > 0,
            ErrorCode::InvalidArch, "input shape must be positive, got " + shape_str(arch.input));
    require(!arch.layers.empty(), ErrorCode::InvalidArch, "architecture has no layers");

    std::vector<LayerPlan> plan;
    plan.reserve(arch.layers.size());
    Shape3 shape = arch.input;
    bool flat = false;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& spec = arch.layers[i];
        const bool last = i + 1 == arch.layers.size();
        LayerPlan lp{spec.kind, shape, shape};
        switch (spec.kind) {
            case LayerKind::Conv3x3:
                require(!flat, ErrorCode::InvalidArch,
                        "conv layer " + std::to_string(i) + " follows a dense layer");
                require(spec.units > 0, ErrorCode::InvalidArch,
                        "conv layer " + std::to_string(i) + " has zero filters");
                lp.out = {shape.height, shape.width, spec.units};
                lp.weight_offset = offset;
                offset += 9 * shape.channels * spec.units;
                lp.bias_offset = offset;
                offset += spec.units;
                lp.relu = true;
                break;
            case LayerKind::MaxPool2x2:
                require(!flat, ErrorCode::InvalidArch,
                        "pool layer " + std::to_string(i) + " follows a dense layer");
                lp.out = {shape.height / 2, shape.width / 2, shape.channels};
                require(lp.out.height > 0 && lp.out.width > 0, ErrorCode::InvalidArch,
                        "max-pool layer " + std::to_string(i) + " underflows spatial dims " +
                            shape_str(shape));
                break;
            case LayerKind::Dense:
            case LayerKind::Output: {
                const bool is_output = spec.kind == LayerKind::Output;
                require(spec.units > 0, ErrorCode::InvalidArch,
                        "layer " + std::to_string(i) + " has zero units");
                require(!is_output || last, ErrorCode::InvalidArch,
                        "output layer must be the last layer (found at " + std::to_string(i) + ")");
                lp.in = {1, 1, shape.size()};
                lp.out = {1, 1, spec.units};
                lp.weight_offset = offset;
                offset += shape.size() * spec.units;
                lp.bias_offset = offset;
                offset += spec.units;
                lp.relu = !is_output;
                flat = true;
                break;
            }
        }
        plan.push_back(lp);
        shape = lp.out;
    }
    require(arch.layers.back().kind == LayerKind::Output, ErrorCode::InvalidArch,
            "architecture must end with an output layer");
    return plan;
}

std::size_t plan_param_count(const std::vector<LayerPlan>& plan) {
    std::size_t n = 0;
    for (const auto& lp : plan) {
        if (lp.kind == LayerKind::MaxPool2x2) continue;
        n = lp.bias_offset + lp.out.channels;
    }
    return n;
}

struct Trace {
    std::vector<std::vector<double>> acts;          // acts[0] = input, acts[l+1] = output of layer l
    std::vector<std::vector<std::uint32_t>> argmax;  // pooling winners, per layer
};

void conv_forward(const LayerPlan& lp, const double* w, const double* b, const double* in,
                  double* out) {
    const std::size_t H = lp.in.height, W = lp.in.width, C = lp.in.channels, O = lp.out.channels;
    const std::size_t plane = H * W;
    for (std::size_t o = 0; o < O; ++o) {
        double* dst = out + o * plane;
        std::fill(dst, dst + plane, b[o]);
        for (std::size_t c = 0; c < C; ++c) {
            const double* src = in + c * plane;
            const double* k = w + (o * C + c) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const long dy = ky - 1;
                const std::size_t y0 = dy < 0 ? 1 : 0;
                const std::size_t y1 = dy > 0 ? H - 1 : H;
                for (int kx = 0; kx < 3; ++kx) {
                    const long dx = kx - 1;
                    const double kv = k[ky * 3 + kx];
                    const std::size_t x0 = dx < 0 ? 1 : 0;
                    const std::size_t x1 = dx > 0 ? W - 1 : W;
                    for (std::size_t y = y0; y < y1; ++y) {
                        double* drow = dst + y * W;
                        const double* srow = src + (y + dy) * W;
                        for (std::size_t x = x0; x < x1; ++x) drow[x] += kv * srow[x + dx];
                    }
                }
            }
        }
    }
}

void conv_backward(const LayerPlan& lp, const double* w, const double* in, const double* g_out,
                   double* grad_w, double* grad_b, double* g_in, double scale) {
    const std::size_t H = lp.in.height, W = lp.in.width, C = lp.in.channels, O = lp.out.channels;
    const std::size_t plane = H * W;
    for (std::size_t o = 0; o < O; ++o) {
        const double* g = g_out + o * plane;
        double bsum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) bsum += g[p];
        grad_b[o] += scale * bsum;
        for (std::size_t c = 0; c < C; ++c) {
            const double* src = in + c * plane;
            const double* k = w + (o * C + c) * 9;
            double* gk = grad_w + (o * C + c) * 9;
            double* gsrc = g_in ? g_in + c * plane : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
                const long dy = ky - 1;
                const std::size_t y0 = dy < 0 ? 1 : 0;
                const std::size_t y1 = dy > 0 ? H - 1 : H;
                for (int kx = 0; kx < 3; ++kx) {
                    const long dx = kx - 1;
                    const std::size_t x0 = dx < 0 ? 1 : 0;
                    const std::size_t x1 = dx > 0 ? W - 1 : W;
                    const double kv = k[ky * 3 + kx];
                    double acc = 0.0;
                    for (std::size_t y = y0; y < y1; ++y) {
                        const double* grow = g + y * W;
                        const double* srow = src + (y + dy) * W;
                        for (std::size_t x = x0; x < x1; ++x) acc += grow[x] * srow[x + dx];
                        if (gsrc) {
                            double* girow = gsrc + (y + dy) * W;
                            for (std::size_t x = x0; x < x1; ++x) girow[x + dx] += kv * grow[x];
                        }
                    }
                    gk[ky * 3 + kx] += scale * acc;
                }
            }
        }
    }
}

Trace run_forward(const ModelState& model, const std::vector<LayerPlan>& plan,
                  std::span<const float> input) {
    Trace tr;
    tr.acts.resize(plan.size() + 1);
    tr.argmax.resize(plan.size());
    tr.acts[0].assign(input.begin(), input.end());
    const double* params = model.params.data();
    for (std::size_t l = 0; l < plan.size(); ++l) {
        const LayerPlan& lp = plan[l];
        const std::vector<double>& in = tr.acts[l];
        std::vector<double>& out = tr.acts[l + 1];
        out.assign(lp.out.size(), 0.0);
        switch (lp.kind) {
            case LayerKind::Conv3x3:
                conv_forward(lp, params + lp.weight_offset, params + lp.bias_offset, in.data(),
                             out.data());
                break;
            case LayerKind::MaxPool2x2: {
                auto& idx = tr.argmax[l];
                idx.resize(out.size());
                const std::size_t H = lp.in.height, W = lp.in.width;
                const std::size_t OH = lp.out.height, OW = lp.out.width;
                for (std::size_t c = 0; c < lp.in.channels; ++c) {
                    for (std::size_t y = 0; y < OH; ++y) {
                        for (std::size_t x = 0; x < OW; ++x) {
                            std::size_t best = c * H * W + 2 * y * W + 2 * x;
                            for (std::size_t dy = 0; dy < 2; ++dy)
                                for (std::size_t dx = 0; dx < 2; ++dx) {
                                    const std::size_t j = c * H * W + (2 * y + dy) * W + 2 * x + dx;
                                    if (in[j] > in[best]) best = j;
                                }
                            const std::size_t o = c * OH * OW + y * OW + x;
                            out[o] = in[best];
                            idx[o] = static_cast<std::uint32_t>(best);
                        }
                    }
                }
                break;
            }
            case LayerKind::Dense:
            case LayerKind::Output: {
                const std::size_t n_in = lp.in.channels, n_out = lp.out.channels;
                const double* w = params + lp.weight_offset;
                const double* b = params + lp.bias_offset;
                for (std::size_t o = 0; o < n_out; ++o) {
                    const double* row = w + o * n_in;
                    double acc = b[o];
                    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
                    out[o] = acc;
                }
                break;
            }
        }
        if (lp.relu)
            for (double& v : out) v = v > 0.0 ? v : 0.0;
    }
    return tr;
}

void run_backward(const ModelState& model, const std::vector<LayerPlan>& plan, Trace& tr,
                  std::span<const double> grad_logits, double scale, std::span<double> grad) {
    const double* params = model.params.data();
    std::vector<double> g(grad_logits.begin(), grad_logits.end());
    std::vector<double> g_in;
    for (std::size_t l = plan.size(); l-- > 0;) {
        const LayerPlan& lp = plan[l];
        const std::vector<double>& in = tr.acts[l];
        const std::vector<double>& out = tr.acts[l + 1];
        if (lp.relu)
            for (std::size_t j = 0; j < g.size(); ++j)
                if (!(out[j] > 0.0)) g[j] = 0.0;
        const bool need_input_grad = l > 0;
        g_in.assign(need_input_grad ? in.size() : 0, 0.0);
        switch (lp.kind) {
            case LayerKind::Conv3x3:
                conv_backward(lp, params + lp.weight_offset, in.data(), g.data(),
                              grad.data() + lp.weight_offset, grad.data() + lp.bias_offset,
                              need_input_grad ? g_in.data() : nullptr, scale);
                break;
            case LayerKind::MaxPool2x2:
                if (need_input_grad) {
                    const auto& idx = tr.argmax[l];
                    for (std::size_t j = 0; j < g.size(); ++j) g_in[idx[j]] += g[j];
                }
                break;
            case LayerKind::Dense:
            case LayerKind::Output: {
                const std::size_t n_in = lp.in.channels, n_out = lp.out.channels;
                const double* w = params + lp.weight_offset;
                double* gw = grad.data() + lp.weight_offset;
                double* gb = grad.data() + lp.bias_offset;
                for (std::size_t o = 0; o < n_out; ++o) {
                    const double go = g[o];
                    gb[o] += scale * go;
                    if (go == 0.0) continue;
                    const double sgo = scale * go;
                    double* grow = gw + o * n_in;
                    for (std::size_t i = 0; i < n_in; ++i) grow[i] += sgo * in[i];
                    if (need_input_grad) {
                        const double* row = w + o * n_in;
                        for (std::size_t i = 0; i < n_in; ++i) g_in[i] += row[i] * go;
                    }
                }
                break;
            }
        }
        g.swap(g_in);
    }
}

void check_input(const ModelState& model, std::size_t actual) {
    const std::size_t expected = model.arch.input.size();
    require(actual == expected, ErrorCode::ShapeMismatch,
            "input has " + std::to_string(actual) + " values, expected " +
                std::to_string(expected) + " (" + shape_str(model.arch.input) + ")");
}

void check_spectrogram(const ModelState& model, const Spectrogram& s) {
    const Shape3& in = model.arch.input;
    require(in.channels == 1 && s.freq_bins == in.height && s.time_frames == in.width,
            ErrorCode::ShapeMismatch,
            "spectrogram is " + std::to_string(s.freq_bins) + "x" + std::to_string(s.time_frames) +
                ", model expects " + shape_str(in));
    check_input(model, s.values.size());
}

bool parse_count(std::string_view s, std::size_t& out) {
    if (s.empty()) return false;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

}  // namespace

ArchDescriptor parse_arch(std::string_view text) {
    auto bad = [&](const std::string& why) {
        fail(ErrorCode::InvalidArch, "bad architecture descriptor '" + std::string(text) + "': " + why);
    };
    std::string compact;
    for (char ch : text)
        if (ch != ' ' && ch != '\t' && ch != '\n' && ch != '\r') compact.push_back(ch);
    std::string_view s = compact;
    if (!s.starts_with("in:")) bad("must start with 'in:'");
    s.remove_prefix(3);
    const auto semi = s.find(';');
    if (semi == std::string_view::npos) bad("missing ';' after input shape");
    const std::string_view shape = s.substr(0, semi);
    std::string_view rest = s.substr(semi + 1);

    ArchDescriptor arch;
    std::size_t dims[3];
    std::size_t start = 0;
    for (int d = 0; d < 3; ++d) {
        const auto x = d < 2 ? shape.find('x', start) : std::string_view::npos;
        if (d < 2 && x == std::string_view::npos) bad("input shape must be HxWxC");
        const auto part = shape.substr(start, d < 2 ? x - start : std::string_view::npos);
        if (!parse_count(part, dims[d])) bad("invalid input dimension '" + std::string(part) + "'");
        start = x + 1;
    }
    arch.input = {dims[0], dims[1], dims[2]};

    while (!rest.empty()) {
        const auto dash = rest.find('-');
        const std::string_view tok = rest.substr(0, dash);
        rest = dash == std::string_view::npos ? std::string_view{} : rest.substr(dash + 1);
        if (dash != std::string_view::npos && rest.empty()) bad("trailing '-'");
        LayerSpec spec;
        std::size_t n = 0;
        if (tok == "p2") {
            spec.kind = LayerKind::MaxPool2x2;
        } else if (tok.starts_with("c3x") && parse_count(tok.substr(3), n)) {
            spec = {LayerKind::Conv3x3, n};
        } else if (tok.starts_with("fc") && parse_count(tok.substr(2), n)) {
            spec = {LayerKind::Dense, n};
        } else if (tok.starts_with("out") && parse_count(tok.substr(3), n)) {
            spec = {LayerKind::Output, n};
        } else {
            bad("unknown layer token '" + std::string(tok) + "'");
        }
        arch.layers.push_back(spec);
    }
    return arch;
}

std::string to_string(const ArchDescriptor& arch) {
    std::ostringstream os;
    os << "in:" << shape_str(arch.input) << ";";
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        if (i) os << "-";
        const auto& l = arch.layers[i];
        switch (l.kind) {
            case LayerKind::Conv3x3: os << "c3x" << l.units; break;
            case LayerKind::MaxPool2x2: os << "p2"; break;
            case LayerKind::Dense: os << "fc" << l.units; break;
            case LayerKind::Output: os << "out" << l.units; break;
        }
    }
    return os.str();
}

void validate(const ArchDescriptor& arch) { (void)plan_layers(arch); }

std::size_t parameter_count(const ArchDescriptor& arch) {
    return plan_param_count(plan_layers(arch));
}

std::size_t output_classes(const ArchDescriptor& arch) {
    validate(arch);
    return arch.layers.back().units;
}

ModelState build_model(const ArchDescriptor& arch, std::uint64_t seed) {
    const auto plan = plan_layers(arch);
    ModelState model;
    model.arch = arch;
    const std::size_t n = plan_param_count(plan);
    model.params.assign(n, 0.0);
    model.adam_m.assign(n, 0.0);
    model.adam_v.assign(n, 0.0);
    Rng rng(seed);
    for (const auto& lp : plan) {
        if (lp.kind == LayerKind::MaxPool2x2) continue;
        const std::size_t fan_in =
            lp.kind == LayerKind::Conv3x3 ? 9 * lp.in.channels : lp.in.channels;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::size_t j = lp.weight_offset; j < lp.bias_offset; ++j)
            model.params[j] = stddev * rng.normal();
    }
    return model;
}

Logits forward(const ModelState& model, std::span<const float> input) {
    check_input(model, input.size());
    const auto plan = plan_layers(model.arch);
    Trace tr = run_forward(model, plan, input);
    return Logits{std::move(tr.acts.back())};
}

Logits forward(const ModelState& model, const Spectrogram& input) {
    check_spectrogram(model, input);
    return forward(model, std::span<const float>(input.values));
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double mx = *std::max_element(p.begin(), p.end());
    double sum = 0.0;
    for (double& v : p) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

LossAndGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
    require(label < logits.size(), ErrorCode::InvalidArgument,
            "label " + std::to_string(label) + " out of range for " +
                std::to_string(logits.size()) + " classes");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double log_norm = mx + std::log(sum);
    LossAndGrad out;
    out.loss = log_norm - logits[label];
    out.grad_logits.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k)
        out.grad_logits[k] = std::exp(logits[k] - log_norm) - (k == label ? 1.0 : 0.0);
    return out;
}

std::vector<double> backward(const ModelState& model, std::span<const float> input,
                             std::span<const double> grad_logits) {
    check_input(model, input.size());
    const auto plan = plan_layers(model.arch);
    const std::size_t classes = plan.back().out.channels;
    require(grad_logits.size() == classes, ErrorCode::ShapeMismatch,
            "grad_logits has " + std::to_string(grad_logits.size()) + " entries, expected " +
                std::to_string(classes));
    std::vector<double> grad(model.params.size(), 0.0);
    Trace tr = run_forward(model, plan, input);
    run_backward(model, plan, tr, grad_logits, 1.0, grad);
    return grad;
}

std::vector<double> backward(const ModelState& model, const Spectrogram& input,
                             std::span<const double> grad_logits) {
    check_spectrogram(model, input);
    return backward(model, std::span<const float>(input.values), grad_logits);
}

double accumulate_loss_gradient(const ModelState& model, std::span<const float> input,
                                std::size_t label, double scale, std::span<double> grad_accum,
                                Logits* logits_out) {
    check_input(model, input.size());
    require(grad_accum.size() == model.params.size(), ErrorCode::LengthMismatch,
            "gradient buffer length mismatch");
    const auto plan = plan_layers(model.arch);
    Trace tr = run_forward(model, plan, input);
    LossAndGrad lg = softmax_cross_entropy(tr.acts.back(), label);
    if (scale != 0.0) run_backward(model, plan, tr, lg.grad_logits, scale, grad_accum);
    if (logits_out) logits_out->values = tr.acts.back();
    return lg.loss;
}

void adam_step(ModelState& model, std::span<const double> grad, double lr, const AdamConfig& cfg) {
    const std::size_t n = model.params.size();
    require(grad.size() == n, ErrorCode::LengthMismatch,
            "gradient has " + std::to_string(grad.size()) + " entries, model has " +
                std::to_string(n) + " parameters");
    for (std::size_t j = 0; j < n; ++j)
        require(std::isfinite(grad[j]), ErrorCode::NonFinite,
                "non-finite gradient at parameter " + std::to_string(j));
    model.step_count += 1;
    const double t = static_cast<double>(model.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t j = 0; j < n; ++j) {
        const double g = grad[j];
        model.adam_m[j] = cfg.beta1 * model.adam_m[j] + (1.0 - cfg.beta1) * g;
        model.adam_v[j] = cfg.beta2 * model.adam_v[j] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = model.adam_m[j] / c1;
        const double v_hat = model.adam_v[j] / c2;
        model.params[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

void reset_optimizer(ModelState& model) {
    std::fill(model.adam_m.begin(), model.adam_m.end(), 0.0);
    std::fill(model.adam_v.begin(), model.adam_v.end(), 0.0);
    model.step_count = 0;
}

std::vector<double> params_snapshot(const ModelState& model) { return model.params; }

void params_load(ModelState& model, std::span<const double> params) {
    require(params.size() == model.params.size(), ErrorCode::LengthMismatch,
            "parameter vector has " + std::to_string(params.size()) + " entries, model has " +
                std::to_string(model.params.size()));
    std::copy(params.begin(), params.end(), model.params.begin());
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k)
        if (values[k] > values[best]) best = k;
    return best;
}

std::size_t predict_class(const ModelState& model, std::span<const float> input) {
    return argmax(forward(model, input).values);
}

}  // namespace limeil
