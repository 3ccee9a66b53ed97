#include "limeil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "limeil/error.hpp"
#include "limeil/parallel.hpp"
#include "limeil/rng.hpp"

namespace limeil {
namespace {

// Per-sample gradients are summed in fixed blocks, then blocks in order, so
// the result does not depend on the worker count.
constexpr std::size_t kGradBlock = 8;
constexpr std::size_t kLargeModel = 1u << 22;

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

WeightedDataset WeightedDataset::originals(std::span<const Spectrogram> data) {
    WeightedDataset ds;
    ds.items.reserve(data.size());
    for (const auto& s : data) ds.items.push_back({s, 1.0, "original"});
    return ds;
}

void WeightedDataset::admit(std::span<const Spectrogram> data, std::span<const double> weights,
                            const std::string& cohort) {
    require(data.size() == weights.size(), ErrorCode::LengthMismatch,
            "cohort has " + std::to_string(data.size()) + " samples but " +
                std::to_string(weights.size()) + " weights");
    for (std::size_t i = 0; i < data.size(); ++i) {
        require(std::isfinite(weights[i]) && weights[i] >= 0.0, ErrorCode::InvalidArgument,
                "sample weights must be finite and non-negative");
        items.push_back({data[i], weights[i], cohort});
    }
}

std::vector<Spectrogram> WeightedDataset::spectrograms() const {
    std::vector<Spectrogram> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.spec);
    return out;
}

double weighted_batch_loss(std::span<const double> losses, std::span<const double> weights) {
    require(!losses.empty(), ErrorCode::InvalidArgument, "weighted loss of an empty batch");
    require(losses.size() == weights.size(), ErrorCode::LengthMismatch,
            "losses and weights differ in length");
    double acc = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) acc += weights[i] * losses[i];
    return acc / static_cast<double>(losses.size());
}

BatchObjective batch_objective(const ModelState& model, std::span<const Spectrogram* const> inputs,
                               std::span<const double> weights, const EwcState* ewc, double lambda) {
    require(!inputs.empty(), ErrorCode::InvalidArgument, "empty batch");
    require(inputs.size() == weights.size(), ErrorCode::LengthMismatch,
            "batch inputs and weights differ in length");
    const std::size_t P = model.params.size();
    const std::size_t N = inputs.size();
    const double inv_n = 1.0 / static_cast<double>(N);
    const std::size_t block = P > kLargeModel ? N : kGradBlock;
    const std::size_t blocks = (N + block - 1) / block;

    std::vector<double> losses(N);
    std::vector<std::vector<double>> partial(blocks);
    parallel_for(blocks, [&](std::size_t b) {
        auto& acc = partial[b];
        acc.assign(P, 0.0);
        const std::size_t end = std::min(N, (b + 1) * block);
        for (std::size_t i = b * block; i < end; ++i) {
            const Spectrogram& s = *inputs[i];
            require(s.label >= 0, ErrorCode::InvalidArgument, "negative label");
            losses[i] = accumulate_loss_gradient(model, s.values, static_cast<std::size_t>(s.label),
                                                 weights[i] * inv_n, acc);
        }
    });

    BatchObjective out;
    out.data_loss = weighted_batch_loss(losses, weights);
    out.grad = std::move(partial.front());
    for (std::size_t b = 1; b < blocks; ++b)
        for (std::size_t j = 0; j < P; ++j) out.grad[j] += partial[b][j];
    if (ewc && lambda > 0.0) {
        const Penalty pen = ewc_penalty(model.params, ewc->anchor, ewc->fisher, lambda);
        out.penalty = pen.value;
        for (std::size_t j = 0; j < P; ++j) out.grad[j] += pen.grad[j];
    }
    return out;
}

TrainResult train(ModelState model, const WeightedDataset& data, const TrainConfig& cfg,
                  const EwcState* ewc, std::span<const Spectrogram> validation) {
    require(cfg.lr > 0.0, ErrorCode::InvalidArgument, "learning rate must be positive");
    require(cfg.batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be at least 1");
    require(data.size() > 0, ErrorCode::InvalidArgument, "training set is empty");
    require(cfg.lambda >= 0.0, ErrorCode::InvalidArgument, "lambda must be non-negative");

    std::vector<double> weights(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double w = data.items[i].weight;
        weights[i] = cfg.weight_floor_enabled ? std::max(w, cfg.weight_floor) : w;
    }

    TrainResult result;
    std::optional<double> best_acc;
    ModelState best;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<const Spectrogram*> batch_inputs;
    std::vector<double> batch_weights;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.shuffle) {
            std::iota(order.begin(), order.end(), 0);
            Rng rng(derive_seed(cfg.seed, epoch));
            rng.shuffle(std::span<std::size_t>(order));
        }
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch_inputs.clear();
            batch_weights.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch_inputs.push_back(&data.items[order[i]].spec);
                batch_weights.push_back(weights[order[i]]);
            }
            BatchObjective obj = batch_objective(model, batch_inputs, batch_weights, ewc, cfg.lambda);
            const bool finite = std::isfinite(obj.total()) &&
                                std::all_of(obj.grad.begin(), obj.grad.end(),
                                            [](double g) { return std::isfinite(g); });
            require(finite, ErrorCode::Divergence,
                    "training diverged at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(n_batches + 1));
            adam_step(model, obj.grad, cfg.lr);
            loss_sum += obj.total();
            ++n_batches;
        }
        EpochRecord rec{epoch, loss_sum / static_cast<double>(n_batches), std::nullopt};
        if (!validation.empty()) {
            rec.val_accuracy = evaluate(model, validation).accuracy;
            if (!best_acc || *rec.val_accuracy > *best_acc) {
                best_acc = rec.val_accuracy;
                best = model;
                result.best_epoch = epoch;
            }
        }
        result.history.push_back(rec);
    }
    if (best_acc) {
        result.model = std::move(best);
    } else {
        result.model = std::move(model);
        result.best_epoch = cfg.epochs;
    }
    return result;
}

std::vector<std::size_t> predict_all(const ModelState& model, std::span<const Spectrogram> data) {
    std::vector<std::size_t> pred(data.size());
    parallel_for(data.size(), [&](std::size_t i) { pred[i] = argmax(forward(model, data[i]).values); });
    return pred;
}

EvalReport evaluate(const ModelState& model, std::span<const Spectrogram> data) {
    require(!data.empty(), ErrorCode::InvalidArgument, "cannot evaluate on an empty dataset");
    const std::size_t C = output_classes(model.arch);
    std::vector<std::size_t> pred(data.size());
    std::vector<double> loss(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const auto& s = data[i];
        require(s.label >= 0 && static_cast<std::size_t>(s.label) < C, ErrorCode::InvalidArgument,
                "label " + std::to_string(s.label) + " out of range for " + std::to_string(C) +
                    " classes");
        const Logits z = forward(model, s);
        pred[i] = argmax(z.values);
        loss[i] = softmax_cross_entropy(z.values, static_cast<std::size_t>(s.label)).loss;
    });
    EvalReport r;
    r.total = data.size();
    r.confusion.assign(C, std::vector<std::size_t>(C, 0));
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto t = static_cast<std::size_t>(data[i].label);
        ++r.confusion[t][pred[i]];
        correct += t == pred[i];
        loss_sum += loss[i];
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
    r.mean_loss = loss_sum / static_cast<double>(r.total);
    return r;
}

std::vector<Spectrogram> select_misclassified(const ModelState& model,
                                              std::span<const Spectrogram> data) {
    const auto pred = predict_all(model, data);
    std::vector<Spectrogram> out;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (static_cast<int>(pred[i]) != data[i].label) out.push_back(data[i]);
    return out;
}

std::string history_csv(std::span<const EpochRecord> history) {
    std::string out = "epoch,train_loss,val_accuracy\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + "," + fmt_double(r.train_loss) + ",";
        if (r.val_accuracy) out += fmt_double(*r.val_accuracy);
        out += "\n";
    }
    return out;
}

std::string confusion_csv(const EvalReport& report, std::span<const std::string> class_names) {
    const std::size_t C = report.confusion.size();
    auto name = [&](std::size_t k) {
        return k < class_names.size() ? class_names[k] : "class" + std::to_string(k);
    };
    std::string out = "true\\pred";
    for (std::size_t k = 0; k < C; ++k) out += "," + name(k);
    out += "\n";
    for (std::size_t t = 0; t < C; ++t) {
        out += name(t);
        for (std::size_t p = 0; p < C; ++p) out += "," + std::to_string(report.confusion[t][p]);
        out += "\n";
    }
    return out;
}

}  // namespace limeil
