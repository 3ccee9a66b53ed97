#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "limeil/audio.hpp"
#include "limeil/nn.hpp"
#include "limeil/sessions.hpp"

namespace limeil {

enum class DataKind { Manifest, Synthetic, Cache };

struct SyntheticSource {
    SyntheticConfig gen;
    // Noise multiplier for the validation split, which feeds the sessions.
    double shift_noise = 1.0;
    // Extra draw from the undistorted generator, used as a retention probe.
    std::size_t probe_per_class = 0;
};

struct RunConfig {
    DataKind data = DataKind::Synthetic;
    std::filesystem::path manifest;
    std::filesystem::path cache;
    SyntheticSource synthetic;
    SplitRatios split;

    std::string arch;
    TrainConfig train;

    std::size_t sessions = 3;
    TrainingMode mode = TrainingMode::WeightedEwc;
    double lambda = 1.0;
    double fisher_fraction = 0.05;
    std::vector<double> lambdas{0.0, 1.0, 100.0};

    SlicConfig slic;
    LimeConfig lime;
    WeightMetric metric = WeightMetric::Euclidean;
    bool sqrt_weights = false;

    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
};

/// A single JSON document. Unknown keys are rejected, omitted optional keys
/// keep the defaults above, relative data paths resolve against the config
/// file's directory. All failures raise ErrorCode::Config.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});

/// Semantic checks shared by file and programmatic configs.
void validate_config(const RunConfig& cfg);

IncrementalConfig incremental_config(const RunConfig& cfg);

struct PreparedData {
    ExperimentData data;
    SessionPlan plan;
};

/// Loads or generates the dataset, splits it by speaker and deals the
/// validation split into session chunks.
PreparedData prepare_data(const RunConfig& cfg);

}  // namespace limeil
