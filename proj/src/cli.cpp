#include "limeil/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "limeil/binary_io.hpp"
#include "limeil/config.hpp"
#include "limeil/error.hpp"
#include "limeil/lime.hpp"
#include "limeil/slic.hpp"

namespace limeil {
namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<double> lambda;
    std::optional<std::string> metric;
    std::optional<std::string> mode;
    std::optional<std::size_t> sessions;
};

struct ExtraFlags {
    std::string checkpoint;
    std::string split = "test";
    std::size_t index = 0;
    std::optional<std::size_t> target_class;
    std::size_t top = 5;
    std::vector<double> lambdas;
    std::optional<std::string> manifest;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("-c,--config", f.config, "JSON run configuration")->required();
    sub->add_option("--seed", f.seed, "master seed (overrides config)");
    sub->add_option("--out-dir", f.out_dir, "output directory (overrides config)");
    sub->add_option("--lambda", f.lambda, "EWC strength (overrides config)");
    sub->add_option("--metric", f.metric, "weight metric")
        ->check(CLI::IsMember({"euclidean", "manhattan", "cosine"}));
    sub->add_option("--mode", f.mode, "training mode")
        ->check(CLI::IsMember({"traditional", "weighted", "weighted_ewc"}));
    sub->add_option("--sessions", f.sessions, "number of incremental sessions");
}

RunConfig resolve_config(const CommonFlags& f) {
    RunConfig cfg = load_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.out_dir) cfg.out_dir = *f.out_dir;
    if (f.lambda) cfg.lambda = *f.lambda;
    if (f.metric) cfg.metric = parse_metric(*f.metric);
    if (f.mode) cfg.mode = parse_mode(*f.mode);
    if (f.sessions) cfg.sessions = *f.sessions;
    validate_config(cfg);
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::vector<char>(text.begin(), text.end()));
}

std::filesystem::path out_path(const RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out_dir);
    return cfg.out_dir / name;
}

const std::vector<Spectrogram>& pick_split(const ExperimentData& d, const std::string& name) {
    if (name == "train") return d.train;
    if (name == "validation") return d.validation;
    if (name == "test") return d.test;
    if (name == "probe") return d.probe;
    fail(ErrorCode::InvalidArgument, "unknown split '" + name + "'");
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

int cmd_prepare_data(RunConfig cfg, const ExtraFlags& x, std::ostream& out) {
    if (x.manifest) {
        cfg.data = DataKind::Manifest;
        cfg.manifest = *x.manifest;
        validate_config(cfg);
    }
    require(cfg.data == DataKind::Manifest, ErrorCode::Config,
            "prepare-data needs a manifest data source");
    const auto data = ingest_manifest(cfg.manifest);
    const auto path = out_path(cfg, "dataset.spc");
    cache_write(data, path);
    out << "wrote " << data.size() << " spectrograms to " << path.string() << "\n";
    return 0;
}

int cmd_gen_synthetic(const RunConfig& cfg, std::ostream& out) {
    require(cfg.data == DataKind::Synthetic, ErrorCode::Config,
            "gen-synthetic needs a synthetic data source");
    PreparedData prep = prepare_data(cfg);
    std::vector<Spectrogram> all = prep.data.train;
    all.insert(all.end(), prep.data.validation.begin(), prep.data.validation.end());
    all.insert(all.end(), prep.data.test.begin(), prep.data.test.end());
    const auto path = out_path(cfg, "synthetic.spc");
    cache_write(all, path);
    std::string msg = "wrote " + std::to_string(all.size()) + " spectrograms to " + path.string();
    if (!prep.data.probe.empty()) {
        const auto probe = out_path(cfg, "probe.spc");
        cache_write(prep.data.probe, probe);
        msg += " and " + std::to_string(prep.data.probe.size()) + " to " + probe.string();
    }
    out << msg << "\n";
    return 0;
}

int cmd_train_initial(const RunConfig& cfg, std::ostream& out) {
    const PreparedData prep = prepare_data(cfg);
    const ArchDescriptor arch = parse_arch(cfg.arch);
    TrainResult tr = train_initial(prep.data, arch, incremental_config(cfg));
    const EvalReport rep = evaluate(tr.model, prep.data.test);
    checkpoint_save(out_path(cfg, "initial.lewc"), make_checkpoint(tr.model, 0));
    write_text(out_path(cfg, "initial_history.csv"), history_csv(tr.history));
    write_text(out_path(cfg, "initial_confusion.csv"), confusion_csv(rep));
    out << "best_epoch=" << tr.best_epoch << " test_accuracy=" << fmt(rep.accuracy)
        << " test_loss=" << fmt(rep.mean_loss) << "\n";
    return 0;
}

int cmd_explain(const RunConfig& cfg, const ExtraFlags& x, std::ostream& out) {
    const PreparedData prep = prepare_data(cfg);
    const ModelState model = model_from_checkpoint(checkpoint_load(x.checkpoint));
    const auto& split = pick_split(prep.data, x.split);
    require(x.index < split.size(), ErrorCode::InvalidArgument,
            "index " + std::to_string(x.index) + " out of range for the " + x.split + " split (" +
                std::to_string(split.size()) + " samples)");
    const Spectrogram& s = split[x.index];
    const std::size_t predicted = predict_class(model, s.values);
    const std::size_t target = x.target_class.value_or(predicted);
    require(target < output_classes(model.arch), ErrorCode::InvalidArgument,
            "class " + std::to_string(target) + " out of range");
    const SegmentMap map = slic(s, cfg.slic);
    LimeConfig lime = cfg.lime;
    lime.seed = cfg.seed;
    const Explanation e = explain(model, s, map, target, lime);
    write_text(out_path(cfg, "explanation.csv"), explanation_csv(e));
    write_pgm(map, out_path(cfg, "segments.pgm"));
    write_text(out_path(cfg, "top_segments.pgm"), top_segments_pgm(e, map, std::min(x.top, map.n_segments)));
    out << "sample=" << s.source_id << " label=" << s.label << " predicted=" << predicted
        << " target=" << target << " segments=" << map.n_segments << "\n";
    return 0;
}

void write_run(const RunConfig& cfg, const IncrementalRun& run, const std::string& suffix) {
    write_text(out_path(cfg, "sessions" + suffix + ".csv"), session_csv(run.records));
    for (const auto& r : run.records)
        write_text(out_path(cfg, "history" + suffix + "_session_" + std::to_string(r.session_id) + ".csv"),
                   history_csv(r.history));
    write_text(out_path(cfg, "confusion" + suffix + ".csv"), confusion_csv(run.records.back().test_report));
}

int cmd_run_incremental(const RunConfig& cfg, std::ostream& out) {
    const PreparedData prep = prepare_data(cfg);
    IncrementalConfig ic = incremental_config(cfg);
    ic.checkpoint_dir = cfg.out_dir / "checkpoints";
    const IncrementalRun run = run_incremental(prep.data, parse_arch(cfg.arch), prep.plan, ic);
    write_run(cfg, run, "");
    for (const auto& r : run.records)
        out << "session=" << r.session_id << " train_size=" << r.train_size << " added=" << r.added_count
            << " test_accuracy=" << fmt(r.test_accuracy) << "\n";
    return 0;
}

int cmd_sweep_lambda(const RunConfig& cfg, const ExtraFlags& x, std::ostream& out) {
    const PreparedData prep = prepare_data(cfg);
    IncrementalConfig ic = incremental_config(cfg);
    ic.checkpoint_dir = cfg.out_dir / "checkpoints";
    const std::vector<double> lambdas = x.lambdas.empty() ? cfg.lambdas : x.lambdas;
    for (double l : lambdas)
        require(l >= 0.0, ErrorCode::Config, "lambda values must be non-negative");
    const SweepResult res = sweep_lambda(prep.data, parse_arch(cfg.arch), prep.plan, ic, lambdas);
    write_text(out_path(cfg, "sweep.csv"), sweep_csv(res.rows));
    for (std::size_t i = 0; i < res.runs.size(); ++i) {
        std::ostringstream tag;
        tag << "_lambda_" << lambdas[i];
        write_run(cfg, res.runs[i], tag.str());
        out << "lambda=" << lambdas[i] << " final_test_accuracy="
            << fmt(res.runs[i].records.back().test_accuracy) << "\n";
    }
    return 0;
}

int cmd_eval(const RunConfig& cfg, const ExtraFlags& x, std::ostream& out) {
    const PreparedData prep = prepare_data(cfg);
    const ModelState model = model_from_checkpoint(checkpoint_load(x.checkpoint));
    const EvalReport rep = evaluate(model, pick_split(prep.data, x.split));
    write_text(out_path(cfg, "confusion.csv"), confusion_csv(rep));
    out << "split=" << x.split << " accuracy=" << fmt(rep.accuracy) << " loss=" << fmt(rep.mean_loss)
        << " total=" << rep.total << "\n";
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Explanation-weighted incremental learning for keyword spotting", "limeil"};
    app.require_subcommand(1, 1);
    CommonFlags common;
    ExtraFlags extra;

    auto* prep = app.add_subcommand("prepare-data", "ingest a WAV manifest into a spectrogram cache");
    add_common(prep, common);
    prep->add_option("--manifest", extra.manifest, "manifest CSV (overrides config)");

    auto* gen = app.add_subcommand("gen-synthetic", "write the synthetic dataset as a cache");
    add_common(gen, common);

    auto* init = app.add_subcommand("train-initial", "train and evaluate the initial model");
    add_common(init, common);

    auto* expl = app.add_subcommand("explain", "LIME explanation of one sample");
    add_common(expl, common);
    expl->add_option("--checkpoint", extra.checkpoint, "model checkpoint")->required();
    expl->add_option("--split", extra.split, "train, validation, test or probe");
    expl->add_option("--index", extra.index, "sample index within the split");
    expl->add_option("--class", extra.target_class, "class to explain (default: predicted)");
    expl->add_option("--top", extra.top, "segments highlighted in top_segments.pgm");

    auto* inc = app.add_subcommand("run-incremental", "initial training plus incremental sessions");
    add_common(inc, common);

    auto* sweep = app.add_subcommand("sweep-lambda", "incremental runs over several EWC strengths");
    add_common(sweep, common);
    sweep->add_option("--lambdas", extra.lambdas, "lambda values (overrides config)")->delimiter(',');

    auto* ev = app.add_subcommand("eval", "accuracy and confusion matrix of a checkpoint");
    add_common(ev, common);
    ev->add_option("--checkpoint", extra.checkpoint, "model checkpoint")->required();
    ev->add_option("--split", extra.split, "train, validation, test or probe");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error:usage:" << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        const RunConfig cfg = resolve_config(common);
        if (prep->parsed()) return cmd_prepare_data(cfg, extra, out);
        if (gen->parsed()) return cmd_gen_synthetic(cfg, out);
        if (init->parsed()) return cmd_train_initial(cfg, out);
        if (expl->parsed()) return cmd_explain(cfg, extra, out);
        if (inc->parsed()) return cmd_run_incremental(cfg, out);
        if (sweep->parsed()) return cmd_sweep_lambda(cfg, extra, out);
        if (ev->parsed()) return cmd_eval(cfg, extra, out);
    } catch (const Error& e) {
        err << "error:" << to_string(e.code()) << ":" << e.what() << "\n";
        return e.code() == ErrorCode::Config ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        err << "error:internal:" << e.what() << "\n";
        return kExitRuntime;
    }
    err << "error:usage:no subcommand\n" << app.help();
    return kExitUsage;
}

int dispatch(const std::vector<std::string>& args) { return dispatch(args, std::cout, std::cerr); }

}  // namespace limeil
