#include "limeil/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "limeil/error.hpp"
#include "limeil/rng.hpp"

namespace limeil {
namespace {

using nlohmann::json;

// Seed streams for data preparation, kept apart from the run streams.
enum DataSeed : std::uint64_t {
    kGenSeed = 10,
    kSplitSeed = 11,
    kProbeSeed = 12,
    kPlanSeed = 13,
};

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorCode::Config, msg); }

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) config_error("'" + (path.empty() ? "<root>" : path) + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* a) { return key == a; });
        if (!known) config_error("unknown key '" + join(path, key) + "'");
    }
}

void get_number(const json& obj, const std::string& path, const char* key, double& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number()) config_error("'" + join(path, key) + "' must be a number");
    out = v.get<double>();
    if (!std::isfinite(out)) config_error("'" + join(path, key) + "' must be finite");
}

void get_size(const json& obj, const std::string& path, const char* key, std::size_t& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned()) config_error("'" + join(path, key) + "' must be a non-negative integer");
    out = v.get<std::size_t>();
}

void get_u64(const json& obj, const std::string& path, const char* key, std::uint64_t& out) {
    std::size_t tmp = out;
    get_size(obj, path, key, tmp);
    out = tmp;
}

void get_bool(const json& obj, const std::string& path, const char* key, bool& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) config_error("'" + join(path, key) + "' must be true or false");
    out = v.get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key) {
    const auto& v = obj.at(key);
    if (!v.is_string()) config_error("'" + join(path, key) + "' must be a string");
    return v.get<std::string>();
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    return p.is_relative() && !base.empty() ? base / p : p;
}

void line_col(std::string_view text, std::size_t byte, std::size_t& line, std::size_t& col) {
    line = 1;
    col = 1;
    const std::size_t end = std::min(byte > 0 ? byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
}

void parse_data(const json& d, RunConfig& cfg, const std::filesystem::path& base) {
    check_keys(d, "data", {"manifest", "synthetic", "cache", "split"});
    std::vector<std::string> given;
    for (const char* k : {"manifest", "synthetic", "cache"})
        if (d.contains(k)) given.emplace_back(k);
    if (given.empty()) config_error("'data' needs one of 'manifest', 'synthetic' or 'cache'");
    if (given.size() > 1) {
        std::string names;
        for (std::size_t i = 0; i < given.size(); ++i)
            names += (i ? (i + 1 == given.size() ? "' and 'data." : "', 'data.") : "'data.") + given[i];
        config_error("conflicting data sources " + names + "'; give exactly one");
    }
    if (given[0] == "manifest") {
        cfg.data = DataKind::Manifest;
        cfg.manifest = resolve(get_string(d, "data", "manifest"), base);
    } else if (given[0] == "cache") {
        cfg.data = DataKind::Cache;
        cfg.cache = resolve(get_string(d, "data", "cache"), base);
    } else {
        cfg.data = DataKind::Synthetic;
        const auto& s = d.at("synthetic");
        const std::string p = "data.synthetic";
        check_keys(s, p, {"classes", "per_class", "noise_level", "freq_bins", "time_frames", "speakers",
                          "shift_noise", "probe_per_class"});
        auto& g = cfg.synthetic.gen;
        get_size(s, p, "classes", g.classes);
        get_size(s, p, "per_class", g.per_class);
        get_number(s, p, "noise_level", g.noise_level);
        get_size(s, p, "freq_bins", g.freq_bins);
        get_size(s, p, "time_frames", g.time_frames);
        get_size(s, p, "speakers", g.speakers);
        get_number(s, p, "shift_noise", cfg.synthetic.shift_noise);
        get_size(s, p, "probe_per_class", cfg.synthetic.probe_per_class);
    }
    if (d.contains("split")) {
        const auto& s = d.at("split");
        check_keys(s, "data.split", {"train", "validation", "test"});
        get_number(s, "data.split", "train", cfg.split.train);
        get_number(s, "data.split", "validation", cfg.split.validation);
        get_number(s, "data.split", "test", cfg.split.test);
    }
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
    json root;
    try {
        root = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        std::size_t line = 0;
        std::size_t col = 0;
        line_col(text, e.byte, line, col);
        config_error("JSON parse error at line " + std::to_string(line) + ", column " +
                     std::to_string(col) + ": " + e.what());
    }
    check_keys(root, "", {"data", "arch", "train", "sessions", "lime", "seed", "out_dir"});

    RunConfig cfg;
    if (!root.contains("data")) config_error("missing required key 'data'");
    parse_data(root.at("data"), cfg, base_dir);
    if (!root.contains("arch")) config_error("missing required key 'arch'");
    cfg.arch = get_string(root, "", "arch");

    if (root.contains("train")) {
        const auto& t = root.at("train");
        check_keys(t, "train", {"lr", "batch_size", "epochs", "shuffle", "weight_floor"});
        get_number(t, "train", "lr", cfg.train.lr);
        get_size(t, "train", "batch_size", cfg.train.batch_size);
        get_size(t, "train", "epochs", cfg.train.epochs);
        get_bool(t, "train", "shuffle", cfg.train.shuffle);
        if (t.contains("weight_floor")) {
            if (t.at("weight_floor").is_null()) {
                cfg.train.weight_floor_enabled = false;
            } else {
                get_number(t, "train", "weight_floor", cfg.train.weight_floor);
                cfg.train.weight_floor_enabled = true;
            }
        }
    }
    if (root.contains("sessions")) {
        const auto& s = root.at("sessions");
        check_keys(s, "sessions", {"count", "mode", "lambda", "fisher_fraction", "lambdas"});
        get_size(s, "sessions", "count", cfg.sessions);
        if (s.contains("mode")) {
            try {
                cfg.mode = parse_mode(get_string(s, "sessions", "mode"));
            } catch (const Error& e) {
                config_error(std::string("'sessions.mode': ") + e.what());
            }
        }
        get_number(s, "sessions", "lambda", cfg.lambda);
        get_number(s, "sessions", "fisher_fraction", cfg.fisher_fraction);
        if (s.contains("lambdas")) {
            const auto& l = s.at("lambdas");
            if (!l.is_array() || l.empty()) config_error("'sessions.lambdas' must be a non-empty array");
            cfg.lambdas.clear();
            for (const auto& v : l) {
                if (!v.is_number()) config_error("'sessions.lambdas' entries must be numbers");
                cfg.lambdas.push_back(v.get<double>());
            }
        }
    }
    if (root.contains("lime")) {
        const auto& l = root.at("lime");
        check_keys(l, "lime", {"segments", "compactness", "slic_iterations", "samples", "sigma",
                               "baseline", "ridge", "metric", "sqrt_weights"});
        get_size(l, "lime", "segments", cfg.slic.segments);
        get_number(l, "lime", "compactness", cfg.slic.compactness);
        get_size(l, "lime", "slic_iterations", cfg.slic.iterations);
        get_size(l, "lime", "samples", cfg.lime.n_samples);
        get_number(l, "lime", "sigma", cfg.lime.sigma);
        if (l.contains("baseline") && !l.at("baseline").is_null()) {
            double b = 0.0;
            get_number(l, "lime", "baseline", b);
            cfg.lime.baseline = b;
        }
        get_number(l, "lime", "ridge", cfg.lime.ridge);
        if (l.contains("metric")) {
            try {
                cfg.metric = parse_metric(get_string(l, "lime", "metric"));
            } catch (const Error& e) {
                config_error(std::string("'lime.metric': ") + e.what());
            }
        }
        get_bool(l, "lime", "sqrt_weights", cfg.sqrt_weights);
    }
    get_u64(root, "", "seed", cfg.seed);
    if (root.contains("out_dir")) cfg.out_dir = get_string(root, "", "out_dir");
    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) config_error("cannot read config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

void validate_config(const RunConfig& cfg) {
    try {
        validate(parse_arch(cfg.arch));
    } catch (const Error& e) {
        config_error(std::string("'arch': ") + e.what());
    }
    const ArchDescriptor arch = parse_arch(cfg.arch);
    if (cfg.data == DataKind::Manifest && !std::filesystem::is_regular_file(cfg.manifest))
        config_error("'data.manifest': file '" + cfg.manifest.string() + "' does not exist");
    if (cfg.data == DataKind::Cache && !std::filesystem::is_regular_file(cfg.cache))
        config_error("'data.cache': file '" + cfg.cache.string() + "' does not exist");
    if (cfg.data == DataKind::Synthetic) {
        const auto& g = cfg.synthetic.gen;
        if (g.classes < 2) config_error("'data.synthetic.classes' must be at least 2");
        if (g.per_class == 0) config_error("'data.synthetic.per_class' must be positive");
        if (g.speakers < 3) config_error("'data.synthetic.speakers' must be at least 3");
        if (g.noise_level < 0.0) config_error("'data.synthetic.noise_level' must be non-negative");
        if (cfg.synthetic.shift_noise < 0.0) config_error("'data.synthetic.shift_noise' must be non-negative");
        if (g.classes != output_classes(arch))
            config_error("'data.synthetic.classes' (" + std::to_string(g.classes) +
                         ") differs from the arch output width (" +
                         std::to_string(output_classes(arch)) + ")");
        if (g.freq_bins != arch.input.height || g.time_frames != arch.input.width ||
            arch.input.channels != 1)
            config_error("'data.synthetic' frames " + std::to_string(g.freq_bins) + "x" +
                         std::to_string(g.time_frames) + " do not match the arch input");
    }
    const auto& s = cfg.split;
    if (s.train < 0 || s.validation < 0 || s.test < 0 || std::abs(s.train + s.validation + s.test - 1.0) > 1e-9)
        config_error("'data.split' ratios must be non-negative and sum to 1");
    if (!(cfg.train.lr > 0.0)) config_error("'train.lr' must be positive");
    if (cfg.train.batch_size == 0) config_error("'train.batch_size' must be positive");
    if (cfg.train.weight_floor_enabled && cfg.train.weight_floor < 0.0)
        config_error("'train.weight_floor' must be non-negative");
    if (cfg.lambda < 0.0) config_error("'sessions.lambda' must be non-negative");
    for (double l : cfg.lambdas)
        if (!(l >= 0.0) || !std::isfinite(l)) config_error("'sessions.lambdas' entries must be non-negative");
    if (!(cfg.fisher_fraction > 0.0 && cfg.fisher_fraction <= 1.0))
        config_error("'sessions.fisher_fraction' must be in (0, 1]");
    if (cfg.slic.segments == 0) config_error("'lime.segments' must be positive");
    if (!(cfg.slic.compactness > 0.0)) config_error("'lime.compactness' must be positive");
    if (!(cfg.lime.sigma > 0.0)) config_error("'lime.sigma' must be positive");
    if (cfg.lime.ridge < 0.0) config_error("'lime.ridge' must be non-negative");
    if (cfg.lime.n_samples < cfg.slic.segments + 2)
        config_error("'lime.samples' must be at least 'lime.segments' + 2");
    if (cfg.out_dir.empty()) config_error("'out_dir' must not be empty");
}

IncrementalConfig incremental_config(const RunConfig& cfg) {
    IncrementalConfig ic;
    ic.mode = cfg.mode;
    ic.lambda = cfg.lambda;
    ic.fisher_fraction = cfg.fisher_fraction;
    ic.train = cfg.train;
    ic.weights.slic = cfg.slic;
    ic.weights.lime = cfg.lime;
    ic.weights.metric = cfg.metric;
    ic.weights.sqrt_weights = cfg.sqrt_weights;
    ic.seed = cfg.seed;
    return ic;
}

PreparedData prepare_data(const RunConfig& cfg) {
    std::vector<Spectrogram> all;
    std::vector<Spectrogram> shifted;
    std::vector<Spectrogram> probe;
    switch (cfg.data) {
        case DataKind::Manifest:
            all = ingest_manifest(cfg.manifest);
            break;
        case DataKind::Cache:
            all = cache_read(cfg.cache);
            break;
        case DataKind::Synthetic: {
            SyntheticConfig g = cfg.synthetic.gen;
            g.seed = derive_seed(cfg.seed, kGenSeed);
            all = gen_synthetic(g);
            if (cfg.synthetic.shift_noise != 1.0) {
                SyntheticConfig gs = g;
                gs.noise_level = g.noise_level * cfg.synthetic.shift_noise;
                shifted = gen_synthetic(gs);
            }
            if (cfg.synthetic.probe_per_class > 0) {
                SyntheticConfig gp = g;
                gp.per_class = cfg.synthetic.probe_per_class;
                gp.seed = derive_seed(cfg.seed, kProbeSeed);
                probe = gen_synthetic(gp);
            }
            break;
        }
    }
    require(!all.empty(), ErrorCode::InvalidArgument, "dataset is empty");
    const ArchDescriptor arch = parse_arch(cfg.arch);
    const auto& first = all.front();
    require(first.freq_bins == arch.input.height && first.time_frames == arch.input.width &&
                arch.input.channels == 1,
            ErrorCode::ShapeMismatch,
            "dataset frames are " + std::to_string(first.freq_bins) + "x" +
                std::to_string(first.time_frames) + ", arch expects " + to_string(arch));

    DatasetSplit split = split_by_speaker(all, derive_seed(cfg.seed, kSplitSeed), cfg.split);
    if (!shifted.empty()) {
        // Same samples index for index, louder noise, restricted to the
        // validation speakers.
        std::unordered_set<std::string> speakers;
        for (const auto& s : split.validation) speakers.insert(s.speaker_id);
        split.validation.clear();
        for (auto& s : shifted)
            if (speakers.count(s.speaker_id)) split.validation.push_back(std::move(s));
    }
    PreparedData out;
    out.data.train = std::move(split.train);
    out.data.validation = std::move(split.validation);
    out.data.test = std::move(split.test);
    out.data.probe = std::move(probe);
    out.plan = plan_sessions(out.data.validation, cfg.sessions, derive_seed(cfg.seed, kPlanSeed));
    return out;
}

}  // namespace limeil
