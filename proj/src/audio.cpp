#include "limeil/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <unordered_map>

#include "limeil/binary_io.hpp"
#include "limeil/error.hpp"
#include "limeil/rng.hpp"

namespace limeil {
namespace {

constexpr char kCacheMagic[4] = {'S', 'P', 'C', '1'};
constexpr std::uint64_t kMaxPixels = 1ULL << 28;

// The FFTW planner is not thread-safe; execution on distinct arrays is.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwBuffers {
    explicit FftwBuffers(std::size_t n)
        : in(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
          out(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    }
    ~FftwBuffers() {
        {
            std::lock_guard lock(fftw_planner_mutex());
            fftw_destroy_plan(plan);
        }
        fftw_free(in);
        fftw_free(out);
    }
    FftwBuffers(const FftwBuffers&) = delete;
    FftwBuffers& operator=(const FftwBuffers&) = delete;

    double* in;
    fftw_complex* out;
    fftw_plan plan;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

AudioClip parse_wav(std::string_view bytes, std::string source_id) {
    ByteReader r(std::span<const char>(bytes.data(), bytes.size()));
    const std::string riff = r.bytes(4, "RIFF magic");
    if (riff != "RIFF") fail(ErrorCode::BadMagic, "not a RIFF file (magic '" + riff + "')");
    (void)r.u32("RIFF size");
    const std::string wave = r.bytes(4, "WAVE magic");
    if (wave != "WAVE") fail(ErrorCode::BadMagic, "not a WAVE file (form type '" + wave + "')");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    for (;;) {
        const std::string id = r.bytes(4, "chunk id");
        const std::uint32_t size = r.u32("chunk size");
        if (id == "fmt ") {
            require(size >= 16, ErrorCode::Truncated, "fmt chunk shorter than 16 bytes");
            format = r.u16("audio format");
            channels = r.u16("channel count");
            rate = r.u32("sample rate");
            (void)r.u32("byte rate");
            (void)r.u16("block align");
            bits = r.u16("bits per sample");
            (void)r.bytes(size - 16 + (size & 1), "fmt extension");
            have_fmt = true;
        } else if (id == "data") {
            require(have_fmt, ErrorCode::UnsupportedEncoding, "data chunk precedes fmt chunk");
            if (format != 1)
                fail(ErrorCode::UnsupportedEncoding,
                     "only PCM (format 1) is supported, got format " + std::to_string(format));
            if (channels != 1)
                fail(ErrorCode::UnsupportedChannels,
                     "only mono is supported, got " + std::to_string(channels) + " channels");
            if (bits != 16)
                fail(ErrorCode::UnsupportedBitDepth,
                     "only 16-bit samples are supported, got " + std::to_string(bits));
            const std::string payload = r.bytes(size, "sample data");
            AudioClip clip;
            clip.sample_rate = rate;
            clip.source_id = std::move(source_id);
            clip.samples.resize(size / 2);
            for (std::size_t i = 0; i < clip.samples.size(); ++i) {
                std::int16_t v;
                std::memcpy(&v, payload.data() + 2 * i, 2);
                clip.samples[i] = static_cast<double>(v) / 32768.0;
            }
            return clip;
        } else {
            (void)r.bytes(size + (size & 1), "chunk " + id);
        }
    }
}

AudioClip read_wav(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_wav(std::string_view(bytes.data(), bytes.size()), path.string());
}

AudioClip normalize_length(AudioClip clip, std::size_t target) {
    clip.samples.resize(target, 0.0);
    return clip;
}

Spectrogram spectrogram(const AudioClip& clip, const StftConfig& cfg) {
    require(cfg.n_fft >= 2 && cfg.hop >= 1 && cfg.freq_bins <= cfg.n_fft / 2 && cfg.freq_bins > 0 &&
                cfg.frames > 0,
            ErrorCode::InvalidArgument, "invalid STFT configuration");
    Spectrogram spec(cfg.freq_bins, cfg.frames);
    spec.label = clip.label;
    spec.speaker_id = clip.speaker_id;
    spec.source_id = clip.source_id;

    const std::size_t n = cfg.n_fft;
    const std::size_t len = clip.samples.size();
    const std::size_t available = len >= n ? (len - n) / cfg.hop + 1 : 0;
    const std::size_t frames = std::min(available, cfg.frames);
    if (frames == 0) return spec;

    std::vector<double> window(n);
    for (std::size_t i = 0; i < n; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                         static_cast<double>(n));

    FftwBuffers fft(n);
    for (std::size_t t = 0; t < frames; ++t) {
        const double* frame = clip.samples.data() + t * cfg.hop;
        for (std::size_t i = 0; i < n; ++i) fft.in[i] = frame[i] * window[i];
        fftw_execute_dft_r2c(fft.plan, fft.in, fft.out);
        for (std::size_t k = 0; k < cfg.freq_bins; ++k) {
            const double mag = std::hypot(fft.out[k][0], fft.out[k][1]);
            spec.at(k, t) = static_cast<float>(std::log1p(mag));
        }
    }
    return spec;
}

DatasetSplit split_by_speaker(const std::vector<Spectrogram>& clips, std::uint64_t seed,
                              const SplitRatios& ratios) {
    require(ratios.train >= 0 && ratios.validation >= 0 && ratios.test >= 0 &&
                std::abs(ratios.train + ratios.validation + ratios.test - 1.0) < 1e-9,
            ErrorCode::InvalidArgument, "split ratios must be non-negative and sum to 1");
    std::set<std::string> unique;
    for (const auto& c : clips) {
        require(!c.speaker_id.empty(), ErrorCode::InvalidArgument,
                "clip '" + c.source_id + "' has no speaker id");
        unique.insert(c.speaker_id);
    }
    std::vector<std::string> speakers(unique.begin(), unique.end());
    const std::size_t n = speakers.size();
    require(n >= 3, ErrorCode::InvalidArgument,
            "speaker split needs at least 3 speakers, got " + std::to_string(n));
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(speakers));

    const double dn = static_cast<double>(n);
    std::size_t n_test = static_cast<std::size_t>(std::floor(ratios.test * dn + 1e-9));
    std::size_t n_val =
        static_cast<std::size_t>(std::floor((ratios.test + ratios.validation) * dn + 1e-9)) - n_test;
    n_test = std::max<std::size_t>(n_test, 1);
    n_val = std::max<std::size_t>(n_val, 1);
    const std::size_t n_train = n - n_val - n_test;

    enum Part { Train, Val, Test };
    std::unordered_map<std::string, Part> part;
    for (std::size_t i = 0; i < n; ++i)
        part[speakers[i]] = i < n_train ? Train : (i < n_train + n_val ? Val : Test);

    DatasetSplit out;
    for (const auto& c : clips) {
        switch (part.at(c.speaker_id)) {
            case Train: out.train.push_back(c); break;
            case Val: out.validation.push_back(c); break;
            case Test: out.test.push_back(c); break;
        }
    }
    return out;
}

BlobRect synthetic_blob(std::size_t k, std::size_t classes, std::size_t freq_bins,
                        std::size_t time_frames) {
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(classes))));
    const std::size_t rows = (classes + cols - 1) / cols;
    const std::size_t cell_h = freq_bins / rows;
    const std::size_t cell_w = time_frames / cols;
    require(cell_h >= 2 && cell_w >= 2, ErrorCode::InvalidArgument,
            "spectrogram too small for " + std::to_string(classes) + " synthetic classes");
    const std::size_t r = k / cols, c = k % cols;
    BlobRect b;
    b.f0 = r * cell_h + cell_h / 4;
    b.f1 = b.f0 + std::max<std::size_t>(1, cell_h / 2);
    b.t0 = c * cell_w + cell_w / 4;
    b.t1 = b.t0 + std::max<std::size_t>(1, cell_w / 2);
    return b;
}

std::vector<Spectrogram> gen_synthetic(const SyntheticConfig& cfg) {
    require(cfg.classes >= 2, ErrorCode::InvalidArgument, "synthetic data needs at least 2 classes");
    require(cfg.speakers >= 1, ErrorCode::InvalidArgument, "speaker pool must be non-empty");
    require(cfg.noise_level >= 0.0, ErrorCode::InvalidArgument, "noise_level must be >= 0");
    std::vector<BlobRect> blobs;
    for (std::size_t k = 0; k < cfg.classes; ++k)
        blobs.push_back(synthetic_blob(k, cfg.classes, cfg.freq_bins, cfg.time_frames));

    auto paint = [&](Spectrogram& s, const BlobRect& b, float amp) {
        for (std::size_t f = b.f0; f < b.f1; ++f)
            for (std::size_t t = b.t0; t < b.t1; ++t) s.at(f, t) += amp;
    };

    std::vector<Spectrogram> out;
    out.reserve(cfg.classes * cfg.per_class);
    for (std::size_t k = 0; k < cfg.classes; ++k) {
        for (std::size_t j = 0; j < cfg.per_class; ++j) {
            const std::size_t index = k * cfg.per_class + j;
            Spectrogram s(cfg.freq_bins, cfg.time_frames);
            s.label = static_cast<int>(k);
            s.speaker_id = "spk" + std::to_string(index % cfg.speakers);
            s.source_id = "synthetic:" + std::to_string(cfg.seed) + ":" + std::to_string(index);
            paint(s, blobs[k], 1.0f);
            if (cfg.noise_level > 0.0) {
                Rng rng(derive_seed(cfg.seed, index));
                // A weaker decoy blob at another class's location.
                std::size_t other = static_cast<std::size_t>(rng.below(cfg.classes - 1));
                if (other >= k) ++other;
                paint(s, blobs[other], static_cast<float>(cfg.noise_level * rng.uniform()));
                for (float& v : s.values) v += static_cast<float>(cfg.noise_level * rng.uniform());
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<char> cache_encode(const std::vector<Spectrogram>& dataset) {
    const std::size_t F = dataset.empty() ? 0 : dataset.front().freq_bins;
    const std::size_t T = dataset.empty() ? 0 : dataset.front().time_frames;
    require(dataset.size() <= UINT32_MAX && F <= UINT32_MAX && T <= UINT32_MAX,
            ErrorCode::DimensionOverflow, "dataset too large for the SPC1 format");
    ByteWriter w;
    w.bytes(std::string_view(kCacheMagic, 4));
    w.u32(static_cast<std::uint32_t>(dataset.size()));
    w.u32(static_cast<std::uint32_t>(F));
    w.u32(static_cast<std::uint32_t>(T));
    for (const auto& s : dataset) {
        require(s.freq_bins == F && s.time_frames == T && s.values.size() == F * T,
                ErrorCode::ShapeMismatch, "all cached spectrograms must share one shape");
        require(s.label >= 0, ErrorCode::InvalidArgument, "negative label cannot be cached");
        require(s.speaker_id.size() <= UINT16_MAX, ErrorCode::DimensionOverflow,
                "speaker id longer than 65535 bytes");
        w.u32(static_cast<std::uint32_t>(s.label));
        w.u16(static_cast<std::uint16_t>(s.speaker_id.size()));
        w.bytes(s.speaker_id);
        for (float v : s.values) w.f32(v);
    }
    return w.data();
}

std::vector<Spectrogram> cache_decode(std::span<const char> bytes) {
    ByteReader r(bytes);
    const std::string magic = r.bytes(4, "cache magic");
    if (magic != std::string_view(kCacheMagic, 4))
        fail(ErrorCode::BadMagic, "not a spectrogram cache (magic '" + magic + "')");
    const std::uint32_t count = r.u32("record count");
    const std::uint32_t F = r.u32("frequency bins");
    const std::uint32_t T = r.u32("time frames");
    std::vector<Spectrogram> out;
    if (count == 0) return out;
    const std::uint64_t pixels = static_cast<std::uint64_t>(F) * T;
    require(F > 0 && T > 0 && pixels <= kMaxPixels, ErrorCode::DimensionOverflow,
            "implausible spectrogram dimensions " + std::to_string(F) + "x" + std::to_string(T));
    // Each record needs at least label + length + pixels.
    const std::uint64_t min_record = 6 + 4 * pixels;
    require(static_cast<std::uint64_t>(count) * min_record <= r.remaining(), ErrorCode::Truncated,
            "header claims " + std::to_string(count) + " records but the payload is only " +
                std::to_string(r.remaining()) + " bytes");
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Spectrogram s(F, T);
        s.label = static_cast<int>(r.u32("label"));
        const std::uint16_t len = r.u16("speaker id length");
        s.speaker_id = r.bytes(len, "speaker id");
        for (auto& v : s.values) v = r.f32("spectrogram values");
        out.push_back(std::move(s));
    }
    require(r.remaining() == 0, ErrorCode::InvalidArgument,
            std::to_string(r.remaining()) + " trailing bytes after the last record");
    return out;
}

void cache_write(const std::vector<Spectrogram>& dataset, const std::filesystem::path& path) {
    const auto bytes = cache_encode(dataset);
    write_file_atomic(path, bytes);
}

std::vector<Spectrogram> cache_read(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    auto out = cache_decode(bytes);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i].source_id = path.filename().string() + ":" + std::to_string(i);
    return out;
}

std::string speaker_from_filename(const std::filesystem::path& path) {
    const std::string stem = path.stem().string();
    const auto pos = stem.find("_nohash_");
    return pos == std::string::npos ? stem : stem.substr(0, pos);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t.starts_with('#')) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (;;) {
            const auto comma = t.find(',', start);
            cols.push_back(trim(std::string_view(t).substr(start, comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (lineno == 1 && cols.size() >= 2 && cols[0] == "path") continue;
        require(cols.size() == 2 || cols.size() == 3, ErrorCode::InvalidArgument,
                path.string() + ":" + std::to_string(lineno) + ": expected path,label,speaker_id");
        ManifestEntry e;
        e.path = cols[0];
        if (e.path.is_relative()) e.path = base / e.path;
        const auto& lab = cols[1];
        const auto res = std::from_chars(lab.data(), lab.data() + lab.size(), e.label);
        require(res.ec == std::errc() && res.ptr == lab.data() + lab.size() && e.label >= 0,
                ErrorCode::InvalidArgument,
                path.string() + ":" + std::to_string(lineno) + ": invalid label '" + lab + "'");
        e.speaker_id = cols.size() == 3 && !cols[2].empty() ? cols[2] : speaker_from_filename(e.path);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Spectrogram> ingest_manifest(const std::filesystem::path& manifest,
                                         const StftConfig& cfg) {
    std::vector<Spectrogram> out;
    for (const auto& e : read_manifest(manifest)) {
        AudioClip clip = read_wav(e.path);
        require(clip.sample_rate == kSampleRate, ErrorCode::UnsupportedSampleRate,
                e.path.string() + ": sample rate " + std::to_string(clip.sample_rate) +
                    " Hz, expected 16000");
        clip.label = e.label;
        clip.speaker_id = e.speaker_id;
        out.push_back(spectrogram(normalize_length(std::move(clip)), cfg));
    }
    return out;
}

}  // namespace limeil
