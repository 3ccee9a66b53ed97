#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "limeil/spectrogram.hpp"

namespace limeil {

inline constexpr std::size_t kSampleRate = 16000;
inline constexpr std::size_t kClipLength = 16000;

struct AudioClip {
    std::vector<double> samples;  // in [-1, 1]
    std::size_t sample_rate = kSampleRate;
    int label = 0;
    std::string speaker_id;
    std::string source_id;
};

/// RIFF/WAVE reader for 16-bit signed PCM mono. Samples are scaled by
/// 1/32768. Chunks other than `fmt ` and `data` are skipped.
AudioClip read_wav(const std::filesystem::path& path);
AudioClip parse_wav(std::string_view bytes, std::string source_id = {});

/// Zero-pads or tail-truncates to exactly `target` samples.
AudioClip normalize_length(AudioClip clip, std::size_t target = kClipLength);

struct StftConfig {
    std::size_t n_fft = 256;
    std::size_t hop = 128;
    std::size_t freq_bins = 128;  // bins 0..n_fft/2-1; the Nyquist bin is dropped
    std::size_t frames = 128;     // frame axis zero-padded (or truncated) to this length
};

/// log1p magnitude STFT with a periodic Hann window. Frames start at
/// multiples of `hop` and must fit entirely inside the clip.
Spectrogram spectrogram(const AudioClip& clip, const StftConfig& cfg = {});

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    std::vector<Spectrogram> train;
    std::vector<Spectrogram> validation;
    std::vector<Spectrogram> test;
};

/// Speaker-disjoint split. Speakers are sorted, shuffled by `seed`, and cut at
/// cumulative floor boundaries counted from the test end: test gets
/// floor(r_test * n), validation floor((r_test + r_val) * n) - test, and train
/// the remainder. Validation and test are raised to one speaker each when the
/// floors give zero. Clip order is preserved within each split.
DatasetSplit split_by_speaker(const std::vector<Spectrogram>& clips, std::uint64_t seed,
                              const SplitRatios& ratios = {});

struct SyntheticConfig {
    std::size_t classes = 4;
    std::size_t per_class = 200;
    std::uint64_t seed = 0;
    double noise_level = 0.1;
    std::size_t freq_bins = 128;
    std::size_t time_frames = 128;
    std::size_t speakers = 20;
};

/// Rectangular time-frequency energy blob per class (placement a fixed
/// function of the class index) plus uniform noise in [0, noise_level).
/// Samples are emitted class-major; speaker ids round-robin over the pool.
std::vector<Spectrogram> gen_synthetic(const SyntheticConfig& cfg);

/// Blob rectangle for class k: rows [f0, f1), columns [t0, t1).
struct BlobRect {
    std::size_t f0, f1, t0, t1;
};
BlobRect synthetic_blob(std::size_t k, std::size_t classes, std::size_t freq_bins,
                        std::size_t time_frames);

/// "SPC1" spectrogram cache. All records share the same F x T.
void cache_write(const std::vector<Spectrogram>& dataset, const std::filesystem::path& path);
std::vector<Spectrogram> cache_read(const std::filesystem::path& path);
std::vector<char> cache_encode(const std::vector<Spectrogram>& dataset);
std::vector<Spectrogram> cache_decode(std::span<const char> bytes);

struct ManifestEntry {
    std::filesystem::path path;
    int label = 0;
    std::string speaker_id;
};

/// CSV lines `path,label,speaker_id`; an optional header line is skipped and
/// relative paths resolve against the manifest's directory. An empty
/// speaker_id falls back to speaker_from_filename.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Speech Commands naming: the part of the file stem before "_nohash_".
std::string speaker_from_filename(const std::filesystem::path& path);

/// read_wav -> 16 kHz check -> normalize_length -> spectrogram for each entry.
std::vector<Spectrogram> ingest_manifest(const std::filesystem::path& manifest,
                                         const StftConfig& cfg = {});

}  // namespace limeil
