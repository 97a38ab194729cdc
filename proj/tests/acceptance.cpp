// Acceptance gate for the longitudinal lesion-activity toolkit. Each criterion
// prints exactly one PASS/FAIL line; the process exits nonzero when any gated
// criterion fails. Artifacts (loss trajectories, the replication study table,
// the determinism work area) are written under ./acceptance_artifacts/.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lact/data.hpp"
#include "lact/gradcheck_suite.hpp"
#include "lact/metrics.hpp"
#include "lact/model.hpp"
#include "lact/pipeline.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace lact;

namespace {

const fs::path kArtifacts = "acceptance_artifacts";

bool g_all_pass = true;

void report(int number, const std::string& name, bool pass, const std::string& detail,
            bool gated = true) {
    std::printf("criterion %d (%s): %s — %s\n", number, name.c_str(),
                pass ? (gated ? "PASS" : "PASS (reported)") : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (gated && !pass) g_all_pass = false;
}

// Runs a criterion body, converting any escape into an honest FAIL line.
template <typename Fn>
void criterion(int number, const std::string& name, Fn body, bool gated = true) {
    try {
        body();
    } catch (const std::exception& e) {
        report(number, name, false, std::string("aborted: ") + e.what(), gated);
    }
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

Tensor<double> random_input(const Shape& shape, Rng& rng) {
    Tensor<double> t = Tensor<double>::zeros(shape);
    for (auto& v : t.values()) v = rng.uniform();
    return t;
}

void keep_last_scans(CaseSample& s, int keep) {
    s.series.volumes.erase(s.series.volumes.begin(), s.series.volumes.end() - keep);
}

// ---- criterion 1: gradient correctness -------------------------------------

void check_gradients() {
    const auto results = run_gradcheck_suite();
    bool all_pass = !results.empty();
    double worst_layer = 0.0, model_err = 0.0;
    for (const auto& r : results) {
        all_pass = all_pass && r.pass;
        if (r.component == "model_end_to_end")
            model_err = r.max_rel_error;
        else
            worst_layer = std::max(worst_layer, r.max_rel_error);
    }
    report(1, "gradient correctness", all_pass,
           fmt("%zu finite-difference checks; worst layer error %.2e (limit 1e-6), "
               "end-to-end %.2e (limit 1e-4)",
               results.size(), worst_layer, model_err));
}

// ---- criterion 2: parameter-count invariance -------------------------------

void check_param_budget() {
    ModelConfig mc;  // desk-scale recurrent default: 3 levels, 8 base channels
    mc.seed = 2;
    const auto model = SegModel<double>::build(mc);
    const int64_t budget = model.param_count();
    const int64_t closed = oracle::model_params(mc.levels, mc.base_channels, 1, false, 0);

    bool ok = budget == 308371 && budget == closed;
    Rng rng(3);
    for (int t_points : {2, 3, 5}) {
        autodiff::NoGradGuard no_grad;
        std::vector<Tensor<double>> series;
        for (int t = 0; t < t_points; ++t) series.push_back(random_input({1, 8, 8, 8}, rng));
        model.forward(series);
        ok = ok && model.param_count() == budget;
    }

    ModelConfig cc = mc;
    cc.aggregation = Aggregation::concat;
    cc.concat_t = 2;
    const int64_t concat2 = SegModel<double>::build(cc).param_count();
    cc.concat_t = 3;
    const int64_t concat3 = SegModel<double>::build(cc).param_count();
    const int64_t want2 = oracle::model_params(mc.levels, mc.base_channels, 1, true, 2);
    const int64_t want3 = oracle::model_params(mc.levels, mc.base_channels, 1, true, 3);
    ok = ok && concat2 == want2 && concat3 == want3 && concat3 > concat2;

    report(2, "parameter-count invariance", ok,
           fmt("recurrent model holds %lld parameters for 2, 3, and 5 scans; "
               "concatenation baseline grows %lld -> %lld (+%lld, matching the closed form)",
               static_cast<long long>(budget), static_cast<long long>(concat2),
               static_cast<long long>(concat3), static_cast<long long>(concat3 - concat2)));
}

// ---- criterion 3: oracle equivalence ---------------------------------------

void check_oracles() {
    Rng rng(404);
    double conv_worst = 0.0;
    autodiff::NoGradGuard no_grad;
    for (int trial = 0; trial < 50; ++trial) {
        const int cin = 1 + static_cast<int>(rng.uniform_int(3));
        const int cout = 1 + static_cast<int>(rng.uniform_int(3));
        const int k = rng.bernoulli(0.5) ? 3 : 1;
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        // extents are derived from a chosen output size so the strided window
        // tiles the input exactly (the layer rejects inexact geometry)
        auto extent = [&] {
            return (2 + static_cast<int>(rng.uniform_int(3))) * stride + k - 2 * pad;
        };
        const int D = extent(), H = extent(), W = extent();

        Tensor<double> x = random_input({cin, D, H, W}, rng);
        Tensor<double> ker = random_input({cout, cin, k, k, k}, rng);
        Tensor<double> bias = random_input({cout}, rng);
        const Tensor<double> y = conv3d(x, ker, bias, stride, pad);

        int od, oh, ow;
        const auto want = oracle::conv3d_reference(x.values(), cin, D, H, W, ker.values(),
                                                    cout, k, &bias.values(), stride, pad,
                                                    od, oh, ow);
        for (size_t i = 0; i < want.size(); ++i)
            conv_worst = std::max(conv_worst, std::fabs(y.values()[i] - want[i]));
    }

    int metric_mismatches = 0, partition_mismatches = 0;
    const std::array<int, 3> dims{8, 8, 8};
    for (int trial = 0; trial < 200; ++trial) {
        const double dp = 0.1 + 0.2 * (trial % 3);
        MaskVolume pred = make_mask(dims), truth = make_mask(dims);
        for (auto& v : pred.voxels) v = rng.bernoulli(dp) ? 1 : 0;
        for (auto& v : truth.voxels) v = rng.bernoulli(0.3) ? 1 : 0;

        int bfs_count = 0;
        const auto bfs = oracle::bfs_components_27(truth.voxels, dims, bfs_count);
        const auto mine = connected_components_27(truth);
        if (mine.count != bfs_count || !oracle::same_partition(mine.labels, bfs))
            ++partition_mismatches;

        Volume prob = make_volume(dims);
        for (size_t i = 0; i < prob.voxels.size(); ++i)
            prob.voxels[i] = pred.voxels[i] ? 0.9 : 0.1;
        const CaseMetrics got = lesion_metrics(prob, truth, 0.5);
        const auto want = oracle::brute_lesion_metrics(pred.voxels, truth.voxels, dims);
        if (got.dice != want.dice || got.ltpr != want.ltpr || got.lfpr != want.lfpr ||
            got.fp_count != want.fp_count)
            ++metric_mismatches;
    }

    const bool ok = conv_worst < 1e-12 && metric_mismatches == 0 && partition_mismatches == 0;
    report(3, "oracle equivalence", ok,
           fmt("50 convolutions, worst |diff| %.2e (limit 1e-12); 200 mask pairs: "
               "%d metric mismatches, %d labeling mismatches",
               conv_worst, metric_mismatches, partition_mismatches));
}

// ---- criterion 4: overfit sanity -------------------------------------------

std::vector<CaseSample> overfit_cases() {
    std::vector<CaseSample> cases;
    for (int i = 0; i < 4; ++i) {
        SyntheticConfig cfg;  // library default: 24^3, 2 static / 2 new / 1 enlarging
        cfg.seed = derive_seed(20240, "case", static_cast<uint64_t>(i));
        GeneratedCase g = generate_case(cfg, 3);
        cases.push_back({"ov" + std::to_string(i), std::move(g.series), std::move(g.mask)});
    }
    return cases;
}

double mean_train_dice(const SegModel<double>& model, const std::vector<CaseSample>& cases) {
    double sum = 0.0;
    for (const auto& c : cases) {
        const Volume prob = tiled_infer(model, c.series, c.series.dims(), c.series.dims());
        sum += dice(binarize(prob, 0.5), c.mask);
    }
    return sum / static_cast<double>(cases.size());
}

void check_overfit() {
    const auto start = std::chrono::steady_clock::now();
    const auto cases = overfit_cases();

    ModelConfig mc;
    mc.seed = derive_seed(20240, "model");
    TrainConfig tc;
    // The production recipe (lr 1e-4, decay 0.99) is tuned for generalization,
    // and integrated over 300 decayed epochs it moves the weights by only ~1e-2
    // in step mass — far too little to memorize four volumes. This check asks
    // whether training can drive the loss down at all, so it runs the same
    // recipe with a memorization-friendly step size; everything else is stock.
    tc.learning_rate = 1e-3;
    tc.seed = 20240;
    TrainState<double> state = make_train_state(SegModel<double>::build(mc), tc);
    const int max_epochs = tc.epochs;

    double final_dice = 0.0;
    bool met = false;
    while (state.epoch < max_epochs && !met) {
        state.config.epochs = std::min(state.epoch + 20, max_epochs);
        run_training(state, cases);
        final_dice = mean_train_dice(state.model, cases);
        const double ratio = state.history.back().mean_loss / state.history.front().mean_loss;
        met = final_dice > 0.80 && ratio < 0.2;
    }

    const double first_loss = state.history.front().mean_loss;
    const double last_loss = state.history.back().mean_loss;
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    fs::create_directories(kArtifacts);
    {
        std::ofstream log(kArtifacts / "c4_loss.txt");
        log << "# overfit run: 4 cases, 24^3, 3 scans, recurrent desk model\n";
        for (const auto& r : state.history) {
            char line[96];
            std::snprintf(line, sizeof line, "%d %.17g %.17g\n", r.epoch, r.lr, r.mean_loss);
            log << line;
        }
        log << "# final mean train dice " << final_dice << ", wall " << elapsed << " s\n";
    }

    const bool ok = final_dice > 0.80 && last_loss < 0.2 * first_loss;
    report(4, "overfit sanity", ok,
           fmt("after %d epochs (%.0f s): mean train Dice %.3f (need > 0.80), loss %.4f vs "
               "initial %.4f (ratio %.3f, need < 0.2); trajectory in %s/c4_loss.txt",
               state.epoch, elapsed, final_dice, last_loss, first_loss, last_loss / first_loss,
               kArtifacts.string().c_str()));
}

// ---- criterion 5: tiled-inference consistency ------------------------------

void check_tiling() {
    ModelConfig mc;
    mc.levels = 2;
    mc.base_channels = 2;
    mc.seed = 55;
    const auto model = SegModel<double>::build(mc);

    Rng rng(7);
    VolumeSeries small;
    for (int t = 0; t < 2; ++t) {
        Volume v = make_volume({8, 8, 8});
        for (auto& x : v.voxels) x = rng.uniform();
        small.volumes.push_back(std::move(v));
    }

    // one tile spanning the volume must reproduce the direct forward pass
    double full_diff = 0.0;
    {
        autodiff::NoGradGuard no_grad;
        std::vector<Tensor<double>> xs;
        for (const auto& v : small.volumes) {
            Tensor<double> t = Tensor<double>::zeros({1, 8, 8, 8});
            std::copy(v.voxels.begin(), v.voxels.end(), t.values().begin());
            xs.push_back(std::move(t));
        }
        const Tensor<double> direct = model.forward(xs);
        const Volume tiled = tiled_infer(model, small, {8, 8, 8}, {8, 8, 8});
        for (size_t i = 0; i < tiled.voxels.size(); ++i)
            full_diff = std::max(full_diff, std::fabs(tiled.voxels[i] - direct.values()[i]));
    }

    // a constant field must survive overlap averaging under several tilings
    double stub_diff = 0.0;
    for (const auto& [tile, stride] :
         std::vector<std::pair<std::array<int, 3>, std::array<int, 3>>>{
             {{8, 8, 8}, {4, 4, 4}}, {{4, 4, 4}, {3, 3, 3}}, {{5, 4, 7}, {2, 3, 4}}}) {
        const Volume out = tiled_average({10, 10, 10}, tile, stride,
                                         [&](const std::array<int, 3>&) {
                                             return std::vector<double>(
                                                 static_cast<size_t>(voxel_count(tile)), 0.7);
                                         });
        for (double v : out.voxels) stub_diff = std::max(stub_diff, std::fabs(v - 0.7));
    }

    // worker parallelism must not change a single bit
    VolumeSeries big;
    for (int t = 0; t < 2; ++t) {
        Volume v = make_volume({12, 12, 12});
        for (auto& x : v.voxels) x = rng.uniform();
        big.volumes.push_back(std::move(v));
    }
    const Volume one = tiled_infer(model, big, {8, 8, 8}, {4, 4, 4}, 1);
    const Volume four = tiled_infer(model, big, {8, 8, 8}, {4, 4, 4}, 4);
    const bool workers_exact = one.voxels == four.voxels;

    const bool ok = full_diff < 1e-6 && stub_diff <= 1e-12 && workers_exact;
    report(5, "tiled-inference consistency", ok,
           fmt("full-volume tile vs direct forward |diff| %.2e (limit 1e-6); constant stub "
               "|diff| %.2e (limit 1e-12); 1 vs 4 workers %s",
               full_diff, stub_diff, workers_exact ? "bit-identical" : "DIFFER"));
}

// ---- criterion 6: end-to-end determinism -----------------------------------

int run_cmd(const std::string& cmd) {
    const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
    return status < 0 ? status : WEXITSTATUS(status);
}

// Relative path -> bytes for every regular file, skipping resolved-config
// echoes (they embed absolute output paths by design).
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (name.size() >= 11 && name.substr(name.size() - 11) == "config.json") continue;
        std::ifstream is(e.path(), std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        files[fs::relative(e.path(), root).string()] = ss.str();
    }
    return files;
}

void check_determinism() {
    const char* cli = std::getenv("LACT_CLI");
    if (!cli) {
        report(6, "end-to-end determinism", false, "LACT_CLI is not set; cannot drive the tool");
        return;
    }
    const fs::path work = kArtifacts / "c6";
    fs::remove_all(work);

    auto run_stack = [&](const fs::path& root) -> std::string {
        const std::string data = (root / "data").string();
        const std::string run = (root / "run").string();
        const std::string pred = (root / "pred").string();
        const std::vector<std::string> cmds = {
            std::string(cli) + " gen --out " + data +
                " --cases 3 --t 3 --seed 77 --shape 16,16,16 --radius-min 1.5 --radius-max 2.5",
            std::string(cli) + " train --data " + data + " --out " + run +
                " --levels 2 --base-channels 4 --crop 8,8,8 --seed 13 --epochs 6",
            std::string(cli) + " infer --checkpoint " + run + "/checkpoint.lact --case " + data +
                "/case_0000 --out " + pred + "/case_0000.lsv --tile 8,8,8 --stride 4,4,4"
                " --workers 2",
            std::string(cli) + " eval --pred " + pred + " --data " + data};
        for (size_t i = 0; i < cmds.size(); ++i)
            if (const int rc = run_cmd(cmds[i]); rc != 0)
                return fmt("stage %zu exited with %d", i + 1, rc);
        return "";
    };

    const std::string err_a = run_stack(work / "a");
    const std::string err_b = run_stack(work / "b");
    if (!err_a.empty() || !err_b.empty()) {
        report(6, "end-to-end determinism", false,
               "pipeline failed: " + (err_a.empty() ? err_b : err_a));
        return;
    }

    const auto ta = tree_bytes(work / "a");
    const auto tb = tree_bytes(work / "b");
    std::string first_delta;
    if (ta.size() != tb.size()) first_delta = "file sets differ";
    for (auto ia = ta.begin(), ib = tb.begin();
         first_delta.empty() && ia != ta.end() && ib != tb.end(); ++ia, ++ib) {
        if (ia->first != ib->first)
            first_delta = "file sets differ at " + ia->first + " vs " + ib->first;
        else if (ia->second != ib->second)
            first_delta = "bytes differ in " + ia->first;
    }
    report(6, "end-to-end determinism", first_delta.empty(),
           first_delta.empty()
               ? fmt("generate/train/infer/evaluate repeated: all %zu artifact files "
                     "byte-identical",
                     ta.size())
               : first_delta);
}

// ---- criterion 7: synthetic replication study ------------------------------

struct StudyScore {
    double dice = 0.0, ltpr = 0.0, lfpr = 0.0;
};

StudyScore evaluate_on(const SegModel<double>& model, const std::vector<CaseSample>& cases) {
    std::vector<CaseMetrics> per_case;
    for (const auto& c : cases) {
        const Volume prob = tiled_infer(model, c.series, c.series.dims(), c.series.dims());
        CaseMetrics m = lesion_metrics(prob, c.mask, 0.5);
        m.case_id = c.id;
        per_case.push_back(std::move(m));
    }
    const AggregateMetrics agg = aggregate(per_case);
    return {agg.dice, agg.ltpr, agg.lfpr};
}

void run_study() {
    constexpr int kSeeds = 5;
    constexpr int kTrainCases = 12, kValCases = 3, kTestCases = 5;
    constexpr int kEpochs = 40;
    const char* variant_names[4] = {"recurrent T=3", "recurrent T=2", "concat T=3",
                                    "concat T=2"};
    StudyScore scores[4][kSeeds];

    for (int s = 0; s < kSeeds; ++s) {
        const uint64_t root = 9000 + static_cast<uint64_t>(s);
        std::vector<CaseSample> all;
        for (int i = 0; i < kTrainCases + kValCases + kTestCases; ++i) {
            SyntheticConfig cfg;
            cfg.shape = {16, 16, 16};
            cfg.radius_min = 1.5;
            cfg.radius_max = 2.5;
            cfg.seed = derive_seed(root, "case", static_cast<uint64_t>(i));
            GeneratedCase g = generate_case(cfg, 3);
            all.push_back({"s" + std::to_string(i), std::move(g.series), std::move(g.mask)});
        }

        for (int v = 0; v < 4; ++v) {
            const bool concat = v >= 2;
            const int t_points = (v % 2 == 0) ? 3 : 2;
            std::vector<CaseSample> train_set(all.begin(), all.begin() + kTrainCases);
            std::vector<CaseSample> test_set(all.end() - kTestCases, all.end());
            if (t_points == 2)
                for (auto* set : {&train_set, &test_set})
                    for (auto& c : *set) keep_last_scans(c, 2);

            ModelConfig mc;
            mc.levels = 2;
            mc.base_channels = 4;
            mc.aggregation = concat ? Aggregation::concat : Aggregation::convgru;
            mc.concat_t = concat ? t_points : 0;
            mc.seed = derive_seed(root, "model");
            TrainConfig tc;
            tc.learning_rate = 1e-3;
            tc.decay = 0.99;
            tc.epochs = kEpochs;
            tc.crop = {12, 12, 12};
            tc.seed = derive_seed(root, "run");

            TrainState<double> state = make_train_state(SegModel<double>::build(mc), tc);
            run_training(state, train_set);
            scores[v][s] = evaluate_on(state.model, test_set);
        }
    }

    fs::create_directories(kArtifacts);
    std::ofstream out(kArtifacts / "c7_study.txt");
    out << "replication study: recurrent aggregation vs channel concatenation\n"
        << "synthetic split per seed: " << kTrainCases << " train / " << kValCases
        << " val (unused) / " << kTestCases << " test, 16^3 volumes, 3 scans\n"
        << "model: 2 levels, 4 base channels; training: lr 1e-3, decay 0.99, " << kEpochs
        << " epochs, 12^3 crops, threshold 0.5\n\n";
    out << "per-seed test aggregates (dice / ltpr / lfpr):\n";
    char line[256];
    for (int s = 0; s < kSeeds; ++s) {
        out << "seed " << s << ":";
        for (int v = 0; v < 4; ++v) {
            std::snprintf(line, sizeof line, "  %s %.3f/%.3f/%.3f", variant_names[v],
                          scores[v][s].dice, scores[v][s].ltpr, scores[v][s].lfpr);
            out << line;
        }
        out << "\n";
    }

    double mean[4], sd[4];
    for (int v = 0; v < 4; ++v) {
        double m = 0.0;
        for (int s = 0; s < kSeeds; ++s) m += scores[v][s].dice;
        m /= kSeeds;
        double var = 0.0;
        for (int s = 0; s < kSeeds; ++s)
            var += (scores[v][s].dice - m) * (scores[v][s].dice - m);
        mean[v] = m;
        sd[v] = std::sqrt(var / kSeeds);
    }
    out << "\nmean test dice across seeds:\n";
    for (int v = 0; v < 4; ++v) {
        std::snprintf(line, sizeof line, "  %-14s %.3f +/- %.3f\n", variant_names[v], mean[v],
                      sd[v]);
        out << line;
    }
    out << "\nnote: directions are reported, not asserted; synthetic data need not\n"
           "reproduce clinical effect sizes.\n";
    out.close();

    report(7, "synthetic replication study", true,
           fmt("mean test Dice: recurrent T=3 %.3f, T=2 %.3f; concat T=3 %.3f, T=2 %.3f "
               "(5 seeds; full table in %s/c7_study.txt)",
               mean[0], mean[1], mean[2], mean[3], kArtifacts.string().c_str()),
           /*gated=*/false);
}

}  // namespace

int main() {
    std::printf("acceptance checks, 64-bit precision\n");
    criterion(1, "gradient correctness", check_gradients);
    criterion(2, "parameter-count invariance", check_param_budget);
    criterion(3, "oracle equivalence", check_oracles);
    criterion(4, "overfit sanity", check_overfit);
    criterion(5, "tiled-inference consistency", check_tiling);
    criterion(6, "end-to-end determinism", check_determinism);
    criterion(7, "synthetic replication study", run_study, /*gated=*/false);
    std::printf(g_all_pass ? "all gated criteria passed\n"
                           : "one or more gated criteria FAILED\n");
    return g_all_pass ? 0 : 1;
}
