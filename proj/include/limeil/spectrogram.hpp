#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace limeil {

/// Frequency x time magnitude image, row-major (one row per frequency bin).
/// Values are stored as 32-bit floats, the precision of the on-disk cache.
struct Spectrogram {
    std::size_t freq_bins = 0;
    std::size_t time_frames = 0;
    std::vector<float> values;
    int label = 0;
    std::string speaker_id;
    std::string source_id;

    Spectrogram() = default;
    Spectrogram(std::size_t f, std::size_t t) : freq_bins(f), time_frames(t), values(f * t, 0.0f) {}

    std::size_t size() const noexcept { return values.size(); }
    float& at(std::size_t f, std::size_t t) { return values[f * time_frames + t]; }
    float at(std::size_t f, std::size_t t) const { return values[f * time_frames + t]; }

    friend bool operator==(const Spectrogram&, const Spectrogram&) = default;
};

}  // namespace limeil
