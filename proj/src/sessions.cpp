#include "limeil/sessions.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include "limeil/binary_io.hpp"
#include "limeil/error.hpp"
#include "limeil/rng.hpp"

namespace limeil {
namespace {

constexpr char kCheckpointMagic[4] = {'L', 'E', 'W', 'C'};

// Stream tags for seeds derived from the master seed. Every consumer has its
// own stream so modes and lambdas share identical prefixes.
enum SeedStream : std::uint64_t {
    kInitSeed = 1,
    kInitialTrainSeed = 2,
    kLimeSeed = 3,
    kSessionTrainBase = 1000,
    kFisherBase = 2000,
};

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void put_vector(ByteWriter& w, std::span<const double> v) {
    w.u64(v.size());
    for (double x : v) w.f64(x);
}

std::vector<double> get_vector(ByteReader& r, std::size_t expected, std::string_view what) {
    const std::uint64_t n = r.u64(what);
    require(n == expected, ErrorCode::ParamCountMismatch,
            std::string(what) + " has " + std::to_string(n) + " entries, descriptor implies " +
                std::to_string(expected));
    require(n * 8 <= r.remaining(), ErrorCode::Truncated,
            std::string(what) + " payload is truncated");
    std::vector<double> out(n);
    for (auto& x : out) x = r.f64(what);
    return out;
}

}  // namespace

WeightMetric parse_metric(std::string_view name) {
    if (name == "euclidean") return WeightMetric::Euclidean;
    if (name == "manhattan") return WeightMetric::Manhattan;
    if (name == "cosine") return WeightMetric::Cosine;
    fail(ErrorCode::InvalidArgument,
         "unknown metric '" + std::string(name) + "' (expected euclidean, manhattan or cosine)");
}

std::string_view to_string(WeightMetric m) noexcept {
    switch (m) {
        case WeightMetric::Euclidean: return "euclidean";
        case WeightMetric::Manhattan: return "manhattan";
        case WeightMetric::Cosine: return "cosine";
    }
    return "euclidean";
}

TrainingMode parse_mode(std::string_view name) {
    if (name == "traditional") return TrainingMode::Traditional;
    if (name == "weighted") return TrainingMode::Weighted;
    if (name == "weighted_ewc") return TrainingMode::WeightedEwc;
    fail(ErrorCode::InvalidArgument, "unknown mode '" + std::string(name) +
                                         "' (expected traditional, weighted or weighted_ewc)");
}

std::string_view to_string(TrainingMode m) noexcept {
    switch (m) {
        case TrainingMode::Traditional: return "traditional";
        case TrainingMode::Weighted: return "weighted";
        case TrainingMode::WeightedEwc: return "weighted_ewc";
    }
    return "weighted_ewc";
}

double sample_weight(const Explanation& predicted, const Explanation& truth, WeightMetric metric,
                     bool sqrt_weights) {
    const auto& p = predicted.scores;
    const auto& t = truth.scores;
    require(p.size() == t.size(), ErrorCode::LengthMismatch,
            "explanations cover " + std::to_string(p.size()) + " and " + std::to_string(t.size()) +
                " segments");
    switch (metric) {
        case WeightMetric::Euclidean: {
            double acc = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
            return sqrt_weights ? std::sqrt(acc) : acc;
        }
        case WeightMetric::Manhattan: {
            double acc = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - t[i]);
            return acc;
        }
        case WeightMetric::Cosine:
            return cosine_distance(std::span<const double>(p), std::span<const double>(t));
    }
    return 0.0;
}

std::vector<double> generate_lime_weights(const Predictor& predict,
                                          std::span<const Spectrogram> misclassified,
                                          const LimeWeightConfig& cfg) {
    std::vector<double> out;
    out.reserve(misclassified.size());
    for (std::size_t i = 0; i < misclassified.size(); ++i) {
        const Spectrogram& s = misclassified[i];
        require(s.label >= 0, ErrorCode::InvalidArgument, "negative label");
        const auto truth = static_cast<std::size_t>(s.label);
        const std::size_t pred = argmax(predict(s));
        require(pred != truth, ErrorCode::InvalidArgument,
                "sample " + std::to_string(i) + " (" + s.source_id +
                    ") is classified correctly; LIME weights require misclassified samples");
        const SegmentMap map = slic(s, cfg.slic);
        LimeConfig lime = cfg.lime;
        lime.seed = derive_seed(cfg.lime.seed, i);
        const std::size_t classes[] = {pred, truth};
        const auto ex = explain_classes(predict, s, map, classes, lime);
        out.push_back(sample_weight(ex[0], ex[1], cfg.metric, cfg.sqrt_weights));
    }
    return out;
}

std::vector<double> generate_lime_weights(const ModelState& model,
                                          std::span<const Spectrogram> misclassified,
                                          const LimeWeightConfig& cfg) {
    return generate_lime_weights(model_predictor(model), misclassified, cfg);
}

SessionPlan plan_sessions(std::span<const Spectrogram> validation, std::size_t n, std::uint64_t seed) {
    SessionPlan plan;
    if (n == 0) return plan;
    std::set<std::string> unique;
    for (const auto& s : validation) unique.insert(s.speaker_id);
    std::vector<std::string> speakers(unique.begin(), unique.end());
    require(speakers.size() >= n, ErrorCode::InvalidArgument,
            "validation split has " + std::to_string(speakers.size()) + " speakers, cannot form " +
                std::to_string(n) + " sessions");
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(speakers));
    std::unordered_map<std::string, std::size_t> chunk_of;
    for (std::size_t i = 0; i < speakers.size(); ++i) chunk_of[speakers[i]] = i % n;
    plan.chunks.resize(n);
    for (const auto& s : validation) plan.chunks[chunk_of.at(s.speaker_id)].push_back(s);
    return plan;
}

TrainResult train_initial(const ExperimentData& data, const ArchDescriptor& arch,
                          const IncrementalConfig& cfg) {
    require(!data.train.empty(), ErrorCode::InvalidArgument, "initial training set is empty");
    TrainConfig tcfg = cfg.train;
    tcfg.seed = derive_seed(cfg.seed, kInitialTrainSeed);
    tcfg.lambda = 0.0;
    return train(build_model(arch, derive_seed(cfg.seed, kInitSeed)),
                 WeightedDataset::originals(data.train), tcfg, nullptr, data.validation);
}

IncrementalRun run_incremental(const ExperimentData& data, const ArchDescriptor& arch,
                               const SessionPlan& plan, const IncrementalConfig& cfg) {
    require(!data.test.empty(), ErrorCode::InvalidArgument, "test set is empty");
    require(cfg.lambda >= 0.0, ErrorCode::InvalidArgument, "lambda must be non-negative");
    if (cfg.checkpoint_dir) std::filesystem::create_directories(*cfg.checkpoint_dir);

    const bool use_ewc = cfg.mode == TrainingMode::WeightedEwc;
    const double lambda = use_ewc ? cfg.lambda : 0.0;

    auto finish_record = [&](SessionRecord& rec, const ModelState& model,
                             const std::vector<Spectrogram>* chunk, const EwcState* ewc) {
        rec.mode = cfg.mode;
        rec.lambda = lambda;
        rec.seed = cfg.seed;
        rec.test_report = evaluate(model, data.test);
        rec.test_accuracy = rec.test_report.accuracy;
        rec.test_loss = rec.test_report.mean_loss;
        if (chunk && !chunk->empty()) rec.session_accuracy = evaluate(model, *chunk).accuracy;
        if (!data.probe.empty()) rec.probe_accuracy = evaluate(model, data.probe).accuracy;
        if (cfg.checkpoint_dir) {
            const auto path =
                *cfg.checkpoint_dir / ("session_" + std::to_string(rec.session_id) + ".lewc");
            checkpoint_save(path, make_checkpoint(model, static_cast<std::uint32_t>(rec.session_id), ewc));
            rec.checkpoint_path = path.string();
        }
    };

    IncrementalRun run;
    // Session 0: initial training.
    ModelState model;
    WeightedDataset dataset = WeightedDataset::originals(data.train);
    {
        TrainResult tr = train_initial(data, arch, cfg);
        model = std::move(tr.model);
        SessionRecord rec;
        rec.session_id = 0;
        rec.train_size = dataset.size();
        rec.history = std::move(tr.history);
        finish_record(rec, model, nullptr, nullptr);
        run.records.push_back(std::move(rec));
    }

    // Cohorts and their weights all come from the initial model.
    std::vector<std::vector<Spectrogram>> cohorts(plan.n_sessions());
    std::vector<std::vector<double>> cohort_weights(plan.n_sessions());
    LimeWeightConfig wcfg = cfg.weights;
    for (std::size_t i = 0; i < plan.n_sessions(); ++i) {
        try {
            cohorts[i] = select_misclassified(model, plan.chunks[i]);
            wcfg.lime.seed = derive_seed(derive_seed(cfg.seed, kLimeSeed), i + 1);
            if (cfg.mode == TrainingMode::Traditional || cfg.force_unit_lime_weights)
                cohort_weights[i].assign(cohorts[i].size(), 1.0);
            else
                cohort_weights[i] = generate_lime_weights(model, cohorts[i], wcfg);
        } catch (const Error& e) {
            throw Error(e.code(), "session " + std::to_string(i + 1) + " weights: " + e.what());
        }
    }

    for (std::size_t i = 0; i < plan.n_sessions(); ++i) {
        const std::size_t session = i + 1;
        try {
            dataset.admit(cohorts[i], cohort_weights[i], "session-" + std::to_string(session));

            std::optional<EwcState> ewc;
            std::size_t fisher_samples = 0;
            if (use_ewc) {
                const auto pool_data = dataset.spectrograms();
                const auto idx = sample_fisher_pool(model, pool_data, cfg.fisher_fraction,
                                                    derive_seed(cfg.seed, kFisherBase + session));
                std::vector<Spectrogram> pool;
                pool.reserve(idx.size());
                for (std::size_t j : idx) pool.push_back(pool_data[j]);
                fisher_samples = pool.size();
                ewc = EwcState{make_anchor(model, session), fisher_diagonal(model, pool)};
            }

            TrainConfig tcfg = cfg.train;
            tcfg.seed = derive_seed(cfg.seed, kSessionTrainBase + session);
            tcfg.lambda = lambda;
            reset_optimizer(model);
            TrainResult tr = train(std::move(model), dataset, tcfg, ewc ? &*ewc : nullptr,
                                   plan.chunks[i]);
            model = std::move(tr.model);

            SessionRecord rec;
            rec.session_id = session;
            rec.train_size = dataset.size();
            rec.added_count = cohorts[i].size();
            if (!cohort_weights[i].empty()) {
                double sum = 0.0;
                for (double w : cohort_weights[i]) sum += w;
                rec.mean_new_weight = sum / static_cast<double>(cohort_weights[i].size());
            }
            rec.fisher_samples = fisher_samples;
            rec.history = std::move(tr.history);
            finish_record(rec, model, &plan.chunks[i], ewc ? &*ewc : nullptr);
            run.records.push_back(std::move(rec));
        } catch (const Error& e) {
            throw Error(e.code(), "session " + std::to_string(session) + ": " + e.what());
        }
    }
    run.final_model = std::move(model);
    return run;
}

std::string session_csv(std::span<const SessionRecord> records) {
    std::string out =
        "session,mode,lambda,seed,train_size,added,mean_new_weight,test_accuracy,test_loss\n";
    for (const auto& r : records) {
        out += std::to_string(r.session_id) + "," + std::string(to_string(r.mode)) + "," +
               fmt_double(r.lambda) + "," + std::to_string(r.seed) + "," +
               std::to_string(r.train_size) + "," + std::to_string(r.added_count) + "," +
               fmt_double(r.mean_new_weight) + "," + fmt_double(r.test_accuracy) + "," +
               fmt_double(r.test_loss) + "\n";
    }
    return out;
}

SweepResult sweep_lambda(const ExperimentData& data, const ArchDescriptor& arch,
                         const SessionPlan& plan, const IncrementalConfig& base,
                         std::span<const double> lambdas) {
    require(!lambdas.empty(), ErrorCode::InvalidArgument, "lambda sweep needs at least one value");
    SweepResult out;
    for (double lambda : lambdas) {
        IncrementalConfig cfg = base;
        cfg.mode = TrainingMode::WeightedEwc;
        cfg.lambda = lambda;
        if (base.checkpoint_dir)
            cfg.checkpoint_dir = *base.checkpoint_dir / ("lambda_" + fmt_double(lambda));
        IncrementalRun run = run_incremental(data, arch, plan, cfg);
        for (const auto& r : run.records) out.rows.push_back({lambda, r.session_id, r.test_accuracy});
        out.runs.push_back(std::move(run));
    }
    return out;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "lambda,session,test_accuracy\n";
    for (const auto& r : rows)
        out += fmt_double(r.lambda) + "," + std::to_string(r.session) + "," +
               fmt_double(r.test_accuracy) + "\n";
    return out;
}

Checkpoint make_checkpoint(const ModelState& model, std::uint32_t session_id, const EwcState* ewc) {
    Checkpoint ck;
    ck.arch = to_string(model.arch);
    ck.params = model.params;
    if (ewc) ck.ewc = *ewc;
    ck.session_id = session_id;
    return ck;
}

ModelState model_from_checkpoint(const Checkpoint& ck) {
    ModelState model;
    model.arch = parse_arch(ck.arch);
    const std::size_t n = parameter_count(model.arch);
    require(ck.params.size() == n, ErrorCode::ParamCountMismatch,
            "checkpoint holds " + std::to_string(ck.params.size()) + " parameters, descriptor implies " +
                std::to_string(n));
    model.params = ck.params;
    model.adam_m.assign(n, 0.0);
    model.adam_v.assign(n, 0.0);
    return model;
}

std::vector<char> checkpoint_encode(const Checkpoint& ck) {
    require(ck.arch.size() <= UINT32_MAX, ErrorCode::DimensionOverflow, "descriptor too long");
    ByteWriter w;
    w.bytes(std::string_view(kCheckpointMagic, 4));
    w.u32(Checkpoint::kVersion);
    w.u32(static_cast<std::uint32_t>(ck.arch.size()));
    w.bytes(ck.arch);
    w.u32(ck.session_id);
    put_vector(w, ck.params);
    w.u8(ck.ewc ? 1 : 0);
    if (ck.ewc) {
        require(ck.ewc->anchor.params_star.size() == ck.params.size() &&
                    ck.ewc->fisher.values.size() == ck.params.size(),
                ErrorCode::LengthMismatch, "anchor/Fisher length differs from parameter count");
        put_vector(w, ck.ewc->anchor.params_star);
        put_vector(w, ck.ewc->fisher.values);
    }
    return w.data();
}

Checkpoint checkpoint_decode(std::span<const char> bytes) {
    ByteReader r(bytes);
    const std::string magic = r.bytes(4, "checkpoint magic");
    if (magic != std::string_view(kCheckpointMagic, 4))
        fail(ErrorCode::BadMagic, "not a checkpoint (magic '" + magic + "')");
    const std::uint32_t version = r.u32("checkpoint version");
    require(version == Checkpoint::kVersion, ErrorCode::VersionMismatch,
            "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(Checkpoint::kVersion) + ")");
    Checkpoint ck;
    const std::uint32_t dlen = r.u32("descriptor length");
    ck.arch = r.bytes(dlen, "descriptor");
    const std::size_t expected = parameter_count(parse_arch(ck.arch));
    ck.session_id = r.u32("session id");
    ck.params = get_vector(r, expected, "parameter vector");
    const std::uint8_t flags = r.u8("flags");
    if (flags & 1) {
        EwcState ewc;
        ewc.anchor.params_star = get_vector(r, expected, "anchor vector");
        ewc.anchor.session_id = ck.session_id;
        ewc.fisher.values = get_vector(r, expected, "Fisher vector");
        ck.ewc = std::move(ewc);
    }
    require(r.remaining() == 0, ErrorCode::InvalidArgument,
            std::to_string(r.remaining()) + " trailing bytes after checkpoint payload");
    return ck;
}

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_atomic(path, checkpoint_encode(ck));
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
    return checkpoint_decode(read_file_bytes(path));
}

}  // namespace limeil
