#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "limeil/ewc.hpp"
#include "limeil/lime.hpp"
#include "limeil/nn.hpp"
#include "limeil/slic.hpp"
#include "limeil/trainer.hpp"

namespace limeil {

enum class WeightMetric { Euclidean, Manhattan, Cosine };
enum class TrainingMode { Traditional, Weighted, WeightedEwc };

WeightMetric parse_metric(std::string_view name);
std::string_view to_string(WeightMetric m) noexcept;
TrainingMode parse_mode(std::string_view name);
std::string_view to_string(TrainingMode m) noexcept;

/// Disagreement between the predicted-class and true-class explanations.
/// Euclidean is the squared form sum (E_p - E_t)^2; `sqrt_weights` takes the
/// square root (the literal distance). Manhattan is sum |E_p - E_t|, cosine is
/// 1 - cos(E_p, E_t).
double sample_weight(const Explanation& predicted, const Explanation& truth, WeightMetric metric,
                     bool sqrt_weights = false);

struct LimeWeightConfig {
    SlicConfig slic;
    LimeConfig lime;
    WeightMetric metric = WeightMetric::Euclidean;
    bool sqrt_weights = false;
};

/// For each misclassified sample: SLIC segmentation, explanations for the
/// predicted and the true class from one shared perturbation set (seed derived
/// from cfg.lime.seed and the sample index), then sample_weight.
std::vector<double> generate_lime_weights(const Predictor& predict,
                                          std::span<const Spectrogram> misclassified,
                                          const LimeWeightConfig& cfg);
std::vector<double> generate_lime_weights(const ModelState& model,
                                          std::span<const Spectrogram> misclassified,
                                          const LimeWeightConfig& cfg);

/// Speaker-disjoint validation chunks, one per incremental session.
struct SessionPlan {
    std::vector<std::vector<Spectrogram>> chunks;
    std::size_t n_sessions() const noexcept { return chunks.size(); }
};

/// Speakers sorted, shuffled by `seed`, dealt round-robin into n chunks.
SessionPlan plan_sessions(std::span<const Spectrogram> validation, std::size_t n, std::uint64_t seed);

struct ExperimentData {
    std::vector<Spectrogram> train;
    std::vector<Spectrogram> validation;  // model selection for initial training
    std::vector<Spectrogram> test;
    std::vector<Spectrogram> probe;       // optional initial-distribution retention probe
};

struct IncrementalConfig {
    TrainingMode mode = TrainingMode::WeightedEwc;
    double lambda = 1.0;
    double fisher_fraction = 0.05;
    TrainConfig train;
    LimeWeightConfig weights;
    std::uint64_t seed = 0;
    /// Every generated LIME weight is replaced by 1 (pipeline-equivalence hook).
    bool force_unit_lime_weights = false;
    std::optional<std::filesystem::path> checkpoint_dir;
};

struct SessionRecord {
    std::size_t session_id = 0;
    TrainingMode mode = TrainingMode::WeightedEwc;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::size_t train_size = 0;
    std::size_t added_count = 0;
    double mean_new_weight = 0.0;  // 0 when nothing was admitted
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    std::optional<double> session_accuracy;  // on this session's validation chunk
    std::optional<double> probe_accuracy;
    std::size_t fisher_samples = 0;
    std::string checkpoint_path;
    std::vector<EpochRecord> history;
    EvalReport test_report;
};

struct IncrementalRun {
    std::vector<SessionRecord> records;  // initial training + one per session
    ModelState final_model;
};

/// Initial training only: fresh model from the run seed, trained on the train split
/// with validation for model selection.
TrainResult train_initial(const ExperimentData& data, const ArchDescriptor& arch,
                          const IncrementalConfig& cfg);

/// Initial training on the train split, explanation-weighted cohorts of misclassified
/// validation samples (selected and explained with the initial model), then
/// one retraining session per chunk with optional EWC anchored at the
/// previous session's parameters.
IncrementalRun run_incremental(const ExperimentData& data, const ArchDescriptor& arch,
                               const SessionPlan& plan, const IncrementalConfig& cfg);

/// `session,mode,lambda,seed,train_size,added,mean_new_weight,test_accuracy,test_loss`
std::string session_csv(std::span<const SessionRecord> records);

struct SweepRow {
    double lambda = 0.0;
    std::size_t session = 0;
    double test_accuracy = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<IncrementalRun> runs;  // one per lambda, in input order
};

/// One weighted_ewc run per lambda with identical seeds and data.
SweepResult sweep_lambda(const ExperimentData& data, const ArchDescriptor& arch,
                         const SessionPlan& plan, const IncrementalConfig& base,
                         std::span<const double> lambdas);
std::string sweep_csv(std::span<const SweepRow> rows);

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    std::string arch;
    std::vector<double> params;
    std::optional<EwcState> ewc;
    std::uint32_t session_id = 0;
};

Checkpoint make_checkpoint(const ModelState& model, std::uint32_t session_id,
                           const EwcState* ewc = nullptr);
/// Fresh Adam state, parameters from the checkpoint.
ModelState model_from_checkpoint(const Checkpoint& ck);

std::vector<char> checkpoint_encode(const Checkpoint& ck);
Checkpoint checkpoint_decode(std::span<const char> bytes);
void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace limeil
