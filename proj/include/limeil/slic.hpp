#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "limeil/spectrogram.hpp"

namespace limeil {

/// Dense per-pixel segment labels 0..n_segments-1, row-major like Spectrogram.
struct SegmentMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> labels;
    std::size_t n_segments = 0;

    int at(std::size_t r, std::size_t c) const { return labels[r * cols + c]; }
};

struct SlicConfig {
    std::size_t segments = 32;
    double compactness = 10.0;
    std::size_t iterations = 10;
    // Accepted for interface stability; grid seeding is deterministic and
    // consumes no randomness.
    std::uint64_t seed = 0;
};

/// SLIC on a single-channel image. Intensities are min-max normalised to
/// [0, 1]; distance D^2 = dI^2 + (compactness * d_xy / S)^2 with
/// S = sqrt(rows * cols / k). Centers start on a lattice of ceil(sqrt(k))
/// columns by ceil(k / columns) rows. A pixel keeps its label unless a center
/// whose 2S x 2S window covers it is strictly closer (lowest center index on
/// ties), so sum(D^2) never increases. Finishes with 4-connectivity
/// enforcement and dense relabelling in scan order.
///
/// When `objective` is non-null it receives sum(D^2) after initialisation and
/// after every assignment and update step.
SegmentMap slic(std::span<const float> image, std::size_t rows, std::size_t cols,
                const SlicConfig& cfg, std::vector<double>* objective = nullptr);
SegmentMap slic(const Spectrogram& spec, const SlicConfig& cfg,
                std::vector<double>* objective = nullptr);

std::vector<std::size_t> segment_pixel_counts(const SegmentMap& map);

/// Binary PGM (P5), labels scaled to gray levels 0..255.
std::string encode_pgm(const SegmentMap& map);
void write_pgm(const SegmentMap& map, const std::filesystem::path& path);

}  // namespace limeil
