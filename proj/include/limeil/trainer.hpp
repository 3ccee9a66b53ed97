#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "limeil/ewc.hpp"
#include "limeil/nn.hpp"
#include "limeil/spectrogram.hpp"

namespace limeil {

struct WeightedItem {
    Spectrogram spec;  // label is spec.label
    double weight = 1.0;
    std::string cohort = "original";
};

struct WeightedDataset {
    std::vector<WeightedItem> items;

    std::size_t size() const noexcept { return items.size(); }
    static WeightedDataset originals(std::span<const Spectrogram> data);
    /// Appends a cohort; existing items are never modified.
    void admit(std::span<const Spectrogram> data, std::span<const double> weights,
               const std::string& cohort);
    std::vector<Spectrogram> spectrograms() const;
};

struct TrainConfig {
    double lr = 0.001;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    bool shuffle = true;
    bool weight_floor_enabled = true;
    double weight_floor = 1e-3;
};

struct EwcState {
    Anchor anchor;
    FisherDiagonal fisher;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_accuracy;
};

struct TrainResult {
    ModelState model;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

/// (1/N) sum w_i L_i with N the number of samples.
double weighted_batch_loss(std::span<const double> losses, std::span<const double> weights);

struct BatchObjective {
    double data_loss = 0.0;     // weighted cross-entropy term
    double penalty = 0.0;       // EWC term, 0 when absent or lambda == 0
    double total() const noexcept { return data_loss + penalty; }
    std::vector<double> grad;
};

/// Loss and gradient of one mini-batch: weighted cross-entropy plus, when
/// `ewc` is given and lambda > 0, the EWC penalty. Weights are used as given.
BatchObjective batch_objective(const ModelState& model, std::span<const Spectrogram* const> inputs,
                               std::span<const double> weights, const EwcState* ewc, double lambda);

/// Mini-batch Adam training. Without a validation set the final parameters
/// are returned; with one, the parameters of the epoch with the best
/// validation accuracy (earliest on ties).
TrainResult train(ModelState model, const WeightedDataset& data, const TrainConfig& cfg,
                  const EwcState* ewc = nullptr, std::span<const Spectrogram> validation = {});

struct EvalReport {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::size_t total = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
};

EvalReport evaluate(const ModelState& model, std::span<const Spectrogram> data);
std::vector<std::size_t> predict_all(const ModelState& model, std::span<const Spectrogram> data);
std::vector<Spectrogram> select_misclassified(const ModelState& model,
                                              std::span<const Spectrogram> data);

std::string history_csv(std::span<const EpochRecord> history);
/// C x C grid with a header row of class names (defaults to class<k>).
std::string confusion_csv(const EvalReport& report, std::span<const std::string> class_names = {});

}  // namespace limeil
