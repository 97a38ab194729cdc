// lact — longitudinal lesion activity toolkit.
//
// Subcommands: gen (synthetic datasets), train, infer (tiled, overlapping),
// eval (lesion-wise metrics), gradcheck (autodiff verification).
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lact/data.hpp"
#include "lact/gradcheck_suite.hpp"
#include "lact/metrics.hpp"
#include "lact/model.hpp"
#include "lact/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lact;

namespace {

std::optional<Precision> env_precision() {
    const char* e = std::getenv("LACT_PRECISION");
    if (!e) return std::nullopt;
    return parse_precision(e);  // rejects anything but f32/f64
}

// LACT_PRECISION wins over the flag, the flag over the config file.
Precision resolve_precision(bool flag_given, const std::string& flag_value) {
    if (auto env = env_precision()) return *env;
    return parse_precision(flag_value);
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file " + path);
    try {
        json j;
        is >> j;
        return j;
    } catch (const json::exception& e) {
        throw DataError("config file " + path + " is not valid JSON: " + e.what());
    }
}

// Pre-scan argv for --config so file values can serve as flag defaults; CLI11
// then overwrites any value the user passed explicitly.
std::string prescan_config(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) return argv[i + 1];
        if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
    }
    return "";
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

std::array<int, 3> as_dims(const std::vector<int>& v, const char* flag) {
    if (v.size() != 3)
        throw UsageError(std::string(flag) + " needs exactly 3 comma-separated values");
    return {v[0], v[1], v[2]};
}

// Drop all but the trailing `keep` time points of every case (the activity
// mask refers to the last scan, so truncation keeps it valid).
void truncate_series(CaseSample& sample, int keep) {
    const int have = sample.series.time_points();
    if (keep > have)
        throw DataError("case " + sample.id + " has only " + std::to_string(have) +
                        " time points, cannot select " + std::to_string(keep));
    if (keep < 2) throw UsageError("--t must be >= 2 (activity needs baseline and follow-up)");
    if (keep < have)
        sample.series.volumes.erase(sample.series.volumes.begin(),
                                    sample.series.volumes.end() - keep);
}

std::vector<CaseSample> load_split(const fs::path& data, const std::string& split, int truncate_t) {
    auto entries = read_manifest(data);
    std::sort(entries.begin(), entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    std::vector<CaseSample> cases;
    for (const auto& e : entries) {
        if (split != "all" && e.split != split) continue;
        CaseSample s = read_case(data / case_dir_name(e.id));
        if (truncate_t > 0) truncate_series(s, truncate_t);
        cases.push_back(std::move(s));
    }
    if (cases.empty())
        throw DataError("no cases with split \"" + split + "\" in " + data.string());
    return cases;
}

Precision checkpoint_precision(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path);
    io::expect_magic(is, "LACT", "checkpoint");
    io::read_u32(is, "checkpoint");
    const uint8_t p = io::read_u8(is, "checkpoint");
    if (p > 1) throw DataError("unknown precision code " + std::to_string(p) + " in " + path);
    return static_cast<Precision>(p);
}

// ---- gen -------------------------------------------------------------------

struct GenOpts {
    std::string out;
    int cases = 0;
    int time_points = 3;
    uint64_t seed = 0;
    int split_train = -1, split_val = -1, split_test = -1;
    bool force = false;
    SyntheticConfig synth;
};

int run_gen(const GenOpts& o) {
    if (o.cases < 1) throw UsageError("gen: --cases must be >= 1");
    if (o.time_points < 2)
        throw UsageError("gen: --t must be >= 2 (lesion activity needs baseline and follow-up)");

    const fs::path out(o.out);
    if (fs::exists(out) && !fs::is_empty(out) && !o.force)
        throw DataError("output directory " + o.out + " is not empty (pass --force to overwrite)");
    fs::create_directories(out);

    int n_train = o.split_train, n_val = o.split_val, n_test = o.split_test;
    if (n_train < 0 && n_val < 0 && n_test < 0) {
        n_train = o.cases;
        n_val = n_test = 0;
    } else {
        n_train = std::max(n_train, 0);
        n_val = std::max(n_val, 0);
        n_test = std::max(n_test, 0);
        if (n_train + n_val + n_test != o.cases)
            throw UsageError("gen: split sizes " + std::to_string(n_train) + "+" +
                             std::to_string(n_val) + "+" + std::to_string(n_test) +
                             " do not add up to --cases " + std::to_string(o.cases));
    }

    // Seeded split assignment: shuffle indices once, carve off train/val/test.
    std::vector<int> order(o.cases);
    for (int i = 0; i < o.cases; ++i) order[i] = i;
    Rng split_rng(derive_seed(o.seed, "split"));
    split_rng.shuffle(order.begin(), order.end());
    std::vector<std::string> split_of(o.cases);
    for (int i = 0; i < o.cases; ++i)
        split_of[order[i]] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");

    std::vector<ManifestEntry> entries;
    for (int i = 0; i < o.cases; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "%04d", i);
        SyntheticConfig cfg = o.synth;
        cfg.seed = derive_seed(o.seed, "case", static_cast<uint64_t>(i));
        const GeneratedCase c = generate_case(cfg, o.time_points);
        write_case(out, id, c, cfg);
        entries.push_back({id, split_of[i], o.time_points});
        std::cout << "case_" << id << "  split=" << split_of[i] << "\n";
    }
    write_manifest(out, entries, o.seed);

    json resolved{{"command", "gen"},
                  {"out", o.out},
                  {"cases", o.cases},
                  {"time_points", o.time_points},
                  {"seed", o.seed},
                  {"splits", {{"train", n_train}, {"val", n_val}, {"test", n_test}}},
                  {"synthetic", to_json(o.synth)}};
    write_json_file(out / "resolved_config.json", resolved);
    std::cout << "wrote " << o.cases << " cases to " << o.out << "\n";
    return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
    std::string data, out, resume, split = "train";
    std::string aggregation = "convgru";
    int levels = 3;
    int base_channels = 8;
    int time_points = 0;  // 0: use the cases as stored
    TrainConfig train;
    uint64_t seed = 0;
    Precision precision = Precision::f64;
};

json resolved_train_json(const TrainOpts& o, const ModelConfig& mc) {
    return json{{"command", "train"},
                {"data", o.data},
                {"out", o.out},
                {"split", o.split},
                {"time_points", o.time_points},
                {"seed", o.seed},
                {"precision", precision_name(o.precision)},
                {"model", to_json(mc)},
                {"train", to_json(o.train)}};
}

// Everything but the epoch budget must match for a resumed run.
void check_resume_compatible(const TrainConfig& stored, const TrainConfig& requested) {
    TrainConfig a = stored, b = requested;
    a.epochs = b.epochs = 0;
    if (!(a == b))
        throw DataError("resume: stored train config " + to_json(stored).dump() +
                        " conflicts with requested " + to_json(requested).dump() +
                        " (only --epochs may change)");
}

template <typename T>
int run_train_impl(const TrainOpts& o, const ModelConfig& mc,
                   const std::vector<CaseSample>& cases) {
    TrainState<T> state = [&] {
        if (o.resume.empty()) return make_train_state(SegModel<T>::build(mc), o.train);
        TrainState<T> st = load_train_state_file<T>(o.resume);
        check_resume_compatible(st.config, o.train);
        if (canonical_config_json(st.model.config()) != canonical_config_json(mc))
            throw DataError("resume: stored model config " +
                            canonical_config_json(st.model.config()) +
                            " conflicts with requested " + canonical_config_json(mc));
        if (st.epoch > o.train.epochs)
            throw UsageError("resume: state has already finished " + std::to_string(st.epoch) +
                             " epochs, but --epochs is " + std::to_string(o.train.epochs));
        st.config.epochs = o.train.epochs;
        return st;
    }();

    run_training(state, cases, [](const EpochRecord& r) {
        std::printf("epoch %4d  lr %.6e  loss %.6f\n", r.epoch, r.lr, r.mean_loss);
        std::fflush(stdout);
    });

    const fs::path out(o.out);
    fs::create_directories(out);
    state.model.save_file((out / "checkpoint.lact").string());
    save_train_state_file(state, (out / "train_state.lact").string());
    {
        std::ofstream log(out / "loss_log.txt");
        if (!log) throw DataError("cannot write " + (out / "loss_log.txt").string());
        for (const auto& r : state.history) {
            char line[96];
            std::snprintf(line, sizeof line, "%d %.17g %.17g\n", r.epoch, r.lr, r.mean_loss);
            log << line;
        }
    }
    write_json_file(out / "resolved_config.json", resolved_train_json(o, mc));
    std::cout << "trained " << state.epoch << " epochs, checkpoint in " << o.out << "\n";
    return 0;
}

int run_train(const TrainOpts& o) {
    std::vector<CaseSample> cases = load_split(o.data, o.split, o.time_points);

    ModelConfig mc;
    mc.levels = o.levels;
    mc.base_channels = o.base_channels;
    mc.aggregation = parse_aggregation(o.aggregation);
    mc.seed = derive_seed(o.seed, "model");
    if (mc.aggregation == Aggregation::concat) {
        mc.concat_t = o.time_points > 0 ? o.time_points : cases[0].series.time_points();
        for (const auto& c : cases)
            if (c.series.time_points() != mc.concat_t)
                throw DataError("concat models need a uniform series length; case " + c.id +
                                " has " + std::to_string(c.series.time_points()) +
                                " time points, expected " + std::to_string(mc.concat_t));
    }
    validate(mc);

    TrainOpts resolved = o;
    resolved.train.seed = o.seed;
    if (resolved.precision == Precision::f64) return run_train_impl<double>(resolved, mc, cases);
    return run_train_impl<float>(resolved, mc, cases);
}

// ---- infer -----------------------------------------------------------------

struct InferOpts {
    std::string checkpoint, case_dir, out;
    std::vector<int> tile, stride;
    int workers = 1;
    int time_points = 0;
};

template <typename T>
int run_infer_impl(const InferOpts& o) {
    SegModel<T> model = SegModel<T>::load_file(o.checkpoint);
    CaseSample sample = read_case(o.case_dir);
    if (o.time_points > 0) truncate_series(sample, o.time_points);
    if (model.config().aggregation == Aggregation::concat && o.time_points == 0)
        truncate_series(sample, model.config().concat_t);

    const auto dims = sample.series.dims();
    const std::array<int, 3> tile = o.tile.empty() ? dims : as_dims(o.tile, "--tile");
    const std::array<int, 3> stride = o.stride.empty() ? tile : as_dims(o.stride, "--stride");

    const Volume prob = tiled_infer(model, sample.series, tile, stride, o.workers);

    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_volume(out, prob, LsvDtype::f32);

    json resolved{{"command", "infer"},
                  {"checkpoint", o.checkpoint},
                  {"case", o.case_dir},
                  {"out", o.out},
                  {"tile", tile},
                  {"stride", stride},
                  {"workers", o.workers},
                  {"time_points", sample.series.time_points()},
                  {"precision", precision_name(sizeof(T) == 4 ? Precision::f32 : Precision::f64)},
                  {"model", to_json(model.config())}};
    write_json_file(out.string() + ".config.json", resolved);
    std::cout << "wrote " << o.out << "\n";
    return 0;
}

int run_infer(const InferOpts& o) {
    const Precision file_prec = checkpoint_precision(o.checkpoint);
    if (auto env = env_precision(); env && *env != file_prec)
        throw DataError("checkpoint " + o.checkpoint + " is " + precision_name(file_prec) +
                        " but LACT_PRECISION=" + precision_name(*env));
    if (file_prec == Precision::f64) return run_infer_impl<double>(o);
    return run_infer_impl<float>(o);
}

// ---- eval ------------------------------------------------------------------

struct EvalOpts {
    std::string pred, data, out;
    double threshold = 0.5;
};

int run_eval(const EvalOpts& o) {
    if (!(o.threshold > 0.0 && o.threshold < 1.0))
        throw UsageError("eval: --threshold must be in (0, 1)");

    std::vector<std::pair<std::string, fs::path>> preds;  // (case id, file)
    if (!fs::is_directory(o.pred)) throw DataError("prediction directory " + o.pred + " does not exist");
    for (const auto& entry : fs::directory_iterator(o.pred)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("case_", 0) == 0 && name.size() > 9 && name.ends_with(".lsv"))
            preds.emplace_back(name.substr(5, name.size() - 9), entry.path());
    }
    std::sort(preds.begin(), preds.end());
    if (preds.empty())
        throw DataError("no predictions (case_<id>.lsv) found in " + o.pred);

    std::vector<std::string> missing;
    for (const auto& [id, path] : preds)
        if (!fs::is_directory(fs::path(o.data) / case_dir_name(id))) missing.push_back(id);
    if (!missing.empty()) {
        std::string list;
        for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
        throw DataError("no ground truth in " + o.data + " for predicted cases: " + list);
    }

    std::vector<CaseMetrics> per_case;
    for (const auto& [id, path] : preds) {
        const Volume prob = read_volume(path);
        const CaseSample gt = read_case(fs::path(o.data) / case_dir_name(id));
        CaseMetrics m = lesion_metrics(prob, gt.mask, o.threshold);
        m.case_id = id;
        per_case.push_back(std::move(m));
    }
    const AggregateMetrics agg = aggregate(per_case);

    const fs::path out = o.out.empty() ? fs::path(o.pred) / "report.jsonl" : fs::path(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    {
        std::ofstream os(out);
        if (!os) throw DataError("cannot write " + out.string());
        write_report(os, per_case, agg);
    }
    write_json_file(out.string() + ".config.json",
                    json{{"command", "eval"},
                         {"pred", o.pred},
                         {"data", o.data},
                         {"threshold", o.threshold},
                         {"out", out.string()}});

    for (const auto& m : per_case)
        std::printf("case_%s  dice %.4f  ltpr %.4f  lfpr %.4f  fps %d\n", m.case_id.c_str(),
                    m.dice, m.ltpr, m.lfpr, m.fp_count);
    std::printf("aggregate (%d cases)  dice %.4f  ltpr %.4f  lfpr %.4f  fps %.2f\n", agg.n_cases,
                agg.dice, agg.ltpr, agg.lfpr, agg.fp_count);
    std::cout << "report: " << out.string() << "\n";
    return 0;
}

// ---- gradcheck -------------------------------------------------------------

int run_gradcheck(int scale, bool corrupt) {
    if (auto env = env_precision(); env && *env == Precision::f32)
        throw UsageError("gradcheck runs in f64; unset LACT_PRECISION or set it to f64");
    const auto results = run_gradcheck_suite(scale, corrupt);
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-20s max rel error %.3e  (threshold %.0e)  %s\n", r.component.c_str(),
                    r.max_rel_error, r.threshold, r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) throw NumericError("gradient verification failed");
    std::printf("all %zu gradient checks passed\n", results.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        CLI::App app{"longitudinal lesion activity segmentation toolkit"};
        app.require_subcommand(1);
        const json cfg = load_config_file(prescan_config(argc, argv));
        const json synth_cfg = cfg.value("synthetic", json::object());
        const json model_cfg = cfg.value("model", json::object());
        const json train_cfg = cfg.value("train", json::object());
        const json tiling_cfg = cfg.value("tiling", json::object());
        std::string config_path;  // parsed for help/UX; values already loaded above

        // gen
        GenOpts g;
        g.time_points = cfg.value("time_points", g.time_points);
        g.synth.shape = synth_cfg.value("shape", g.synth.shape);
        g.synth.static_lesions = synth_cfg.value("static_lesions", g.synth.static_lesions);
        g.synth.new_lesions = synth_cfg.value("new_lesions", g.synth.new_lesions);
        g.synth.enlarging_lesions = synth_cfg.value("enlarging_lesions", g.synth.enlarging_lesions);
        g.synth.radius_min = synth_cfg.value("radius_min", g.synth.radius_min);
        g.synth.radius_max = synth_cfg.value("radius_max", g.synth.radius_max);
        g.synth.growth_min = synth_cfg.value("growth_min", g.synth.growth_min);
        g.synth.growth_max = synth_cfg.value("growth_max", g.synth.growth_max);
        g.synth.lesion_intensity_min =
            synth_cfg.value("lesion_intensity_min", g.synth.lesion_intensity_min);
        g.synth.lesion_intensity_max =
            synth_cfg.value("lesion_intensity_max", g.synth.lesion_intensity_max);
        g.synth.background_intensity =
            synth_cfg.value("background_intensity", g.synth.background_intensity);
        g.synth.background_amplitude =
            synth_cfg.value("background_amplitude", g.synth.background_amplitude);
        g.synth.noise_sigma = synth_cfg.value("noise_sigma", g.synth.noise_sigma);
        std::vector<int> gen_shape;
        auto* gen = app.add_subcommand("gen", "generate a synthetic longitudinal dataset");
        gen->add_option("--config", config_path, "JSON config file with defaults");
        gen->add_option("--out", g.out, "output dataset directory")->required();
        gen->add_option("--cases", g.cases, "number of cases to generate")->required();
        gen->add_option("--t", g.time_points, "time points per case (>= 2)");
        gen->add_option("--seed", g.seed, "root seed for the whole dataset");
        gen->add_option("--shape", gen_shape, "volume extents D,H,W")->delimiter(',');
        gen->add_option("--static-lesions", g.synth.static_lesions, "unchanged lesions per case");
        gen->add_option("--new-lesions", g.synth.new_lesions, "lesions appearing after baseline");
        gen->add_option("--enlarging-lesions", g.synth.enlarging_lesions,
                        "lesions that grow at follow-up");
        gen->add_option("--radius-min", g.synth.radius_min, "min ellipsoid semi-axis (voxels)");
        gen->add_option("--radius-max", g.synth.radius_max, "max ellipsoid semi-axis (voxels)");
        gen->add_option("--noise-sigma", g.synth.noise_sigma, "additive Gaussian noise sigma");
        gen->add_option("--split-train", g.split_train, "cases assigned to the train split");
        gen->add_option("--split-val", g.split_val, "cases assigned to the val split");
        gen->add_option("--split-test", g.split_test, "cases assigned to the test split");
        gen->add_flag("--force", g.force, "write into a non-empty directory");

        // train
        TrainOpts t;
        t.aggregation = model_cfg.value("aggregation", t.aggregation);
        t.levels = model_cfg.value("levels", t.levels);
        t.base_channels = model_cfg.value("base_channels", t.base_channels);
        t.train.learning_rate = train_cfg.value("learning_rate", t.train.learning_rate);
        t.train.decay = train_cfg.value("decay", t.train.decay);
        t.train.epochs = train_cfg.value("epochs", t.train.epochs);
        t.train.crop = train_cfg.value("crop", t.train.crop);
        std::vector<int> train_crop;
        std::string precision_flag = cfg.value("precision", std::string("f64"));
        auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
        tr->add_option("--config", config_path, "JSON config file with defaults");
        tr->add_option("--data", t.data, "dataset directory (from gen)")->required();
        tr->add_option("--out", t.out, "output directory for checkpoint and logs")->required();
        tr->add_option("--split", t.split, "which split to train on (train/val/test/all)");
        auto* agg_opt = tr->add_option("--aggregation", t.aggregation,
                                       "temporal fusion: convgru or concat");
        tr->add_option("--levels", t.levels, "resolution levels in the encoder/decoder");
        tr->add_option("--base-channels", t.base_channels, "channels at full resolution");
        tr->add_option("--t", t.time_points, "use only the last N time points of each case");
        tr->add_option("--epochs", t.train.epochs, "epochs to train");
        tr->add_option("--lr", t.train.learning_rate, "initial learning rate");
        tr->add_option("--decay", t.train.decay, "per-epoch lr decay factor");
        tr->add_option("--crop", train_crop, "training crop D,H,W")->delimiter(',');
        tr->add_option("--seed", t.seed, "root seed (init, shuffling, crops)");
        auto* prec_opt = tr->add_option("--precision", precision_flag, "f32 or f64");
        tr->add_option("--resume", t.resume, "train_state.lact to continue from");

        // infer
        InferOpts inf;
        if (tiling_cfg.contains("tile")) inf.tile = tiling_cfg["tile"].get<std::vector<int>>();
        if (tiling_cfg.contains("stride")) inf.stride = tiling_cfg["stride"].get<std::vector<int>>();
        inf.workers = tiling_cfg.value("workers", inf.workers);
        auto* in = app.add_subcommand("infer", "run tiled inference on one case");
        in->add_option("--config", config_path, "JSON config file with defaults");
        in->add_option("--checkpoint", inf.checkpoint, "model checkpoint")->required();
        in->add_option("--case", inf.case_dir, "case directory (case_<id>)")->required();
        in->add_option("--out", inf.out, "output probability volume (.lsv)")->required();
        in->add_option("--tile", inf.tile, "tile extents D,H,W (default: whole volume)")
            ->delimiter(',');
        in->add_option("--stride", inf.stride, "tile stride D,H,W (default: tile extents)")
            ->delimiter(',');
        in->add_option("--workers", inf.workers, "concurrent tile workers");
        in->add_option("--t", inf.time_points, "use only the last N time points");

        // eval
        EvalOpts ev;
        ev.threshold = cfg.value("threshold", ev.threshold);
        auto* e = app.add_subcommand("eval", "lesion-wise metrics for predictions vs ground truth");
        e->add_option("--config", config_path, "JSON config file with defaults");
        e->add_option("--pred", ev.pred, "directory of case_<id>.lsv probability volumes")
            ->required();
        e->add_option("--data", ev.data, "dataset directory with ground truth")->required();
        e->add_option("--threshold", ev.threshold, "binarization threshold in (0, 1)");
        e->add_option("--out", ev.out, "report path (default: <pred>/report.jsonl)");

        // gradcheck
        int gc_scale = 1;
        bool gc_corrupt = false;
        auto* gc = app.add_subcommand("gradcheck", "verify gradients by central differences");
        gc->add_option("--scale", gc_scale, "spatial size multiplier for the checked blocks");
        gc->add_flag("--corrupt", gc_corrupt, "inject a wrong gradient (self-test)")
            ->group("");  // hidden

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& err) {
            const int code = app.exit(err);
            return code == 0 ? 0 : 1;
        }

        if (gen->parsed()) {
            if (!gen_shape.empty()) g.synth.shape = as_dims(gen_shape, "--shape");
            return run_gen(g);
        }
        if (tr->parsed()) {
            if (!train_crop.empty()) t.train.crop = as_dims(train_crop, "--crop");
            (void)agg_opt;
            t.precision = resolve_precision(prec_opt->count() > 0, precision_flag);
            return run_train(t);
        }
        if (in->parsed()) return run_infer(inf);
        if (e->parsed()) return run_eval(ev);
        if (gc->parsed()) return run_gradcheck(gc_scale, gc_corrupt);
        return 0;
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << "\n";
        return 1;
    } catch (const DataError& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return 2;
    } catch (const NumericError& err) {
        std::cerr << "numerical error: " << err.what() << "\n";
        return 3;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}
