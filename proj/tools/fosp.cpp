// fosp: dataset generation, training, evaluation, separation panels,
// ablation and reporting from one binary.
//
// Exit codes: 0 success, 2 invalid input, 3 runtime failure. Failures print a
// single line to stderr:  fosp: error code=<n> kind=<validation|runtime> msg=<text>

#include "fosp/checkpoint.hpp"
#include "fosp/compositor.hpp"
#include "fosp/config.hpp"
#include "fosp/data.hpp"
#include "fosp/error.hpp"
#include "fosp/image_io.hpp"
#include "fosp/metrics.hpp"
#include "fosp/ops.hpp"
#include "fosp/trainer.hpp"
#include "fosp/visualize.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace fosp;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write " + path.string());
    out << text;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("cannot parse number '" + item + "' in list '" + text + "'");
        }
    }
    return out;
}

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", path, "JSON run config (defaults apply to absent keys)");
        cmd->add_option("--set", overrides, "Override a config key: --set train.iterations=100")->allow_extra_args(false);
    }
    RunConfig resolve(std::vector<std::string> extra = {}) const {
        RunConfig config = path.empty() ? RunConfig{} : load_config(path);
        std::vector<std::string> all = overrides;
        all.insert(all.end(), extra.begin(), extra.end());
        return apply_overrides(config, all);
    }
};

DatasetIndex index_or_fail(const std::string& root, const std::string& split) {
    DatasetIndex index = index_dataset(root, split);
    for (const auto& w : index.warnings) std::cerr << "warning: " << w << '\n';
    if (index.empty()) throw ValidationError("no samples in " + root + "/" + split);
    return index;
}

// ---- generate ----
struct GenerateArgs {
    std::string out;
    int n = 500;
    int n_test = 100;
    std::uint64_t seed = 0;
    std::string quota = "0.6,0.3,0.1";
    int size = 128;
    std::string backgrounds;
};

int cmd_generate(const GenerateArgs& a) {
    if (a.n <= 0) throw ValidationError("--n must be positive");
    if (a.n_test < 0) throw ValidationError("--n-test must be non-negative");
    const auto q = parse_list(a.quota);
    if (q.size() != 3) throw ValidationError("--quota needs three fractions (small,medium,large)");
    CompositorConfig config;
    config.height = config.width = a.size;
    config.quota = {q[0], q[1], q[2]};
    if (!a.backgrounds.empty()) config.background_dir = a.backgrounds;
    auto report = [](const std::string& split, const std::vector<IndexRecord>& records) {
        std::array<int, 3> counts{};
        for (const auto& r : records) ++counts[static_cast<std::size_t>(r.bucket)];
        std::cout << split << ": " << records.size() << " samples (small " << counts[0] << ", medium " << counts[1]
                  << ", large " << counts[2] << ")\n";
    };
    report("train", build_dataset(a.out, "train", a.n, config, a.seed));
    if (a.n_test > 0) report("test", build_dataset(a.out, "test", a.n_test, config, a.seed));
    return 0;
}

// ---- train ----
struct TrainArgs {
    ConfigArgs config;
    std::string data;
    std::string out;
    std::optional<int> iterations;
    std::optional<std::uint64_t> seed;
    int log_every = 50;
};

int cmd_train(const TrainArgs& a) {
    std::vector<std::string> extra;
    if (a.iterations) extra.push_back("train.iterations=" + std::to_string(*a.iterations));
    if (a.seed) extra.push_back("seed=" + std::to_string(*a.seed));
    const RunConfig config = a.config.resolve(extra);
    const DatasetIndex train_set = index_or_fail(a.data, "train");
    TrainOptions options;
    options.out_dir = a.out;
    options.on_inpainter_step = [&](int step, double loss) {
        if (a.log_every > 0 && (step + 1) % a.log_every == 0)
            std::fprintf(stderr, "inpainter step %d l1 %.5f\n", step + 1, loss);
    };
    options.on_step = [&](const LossRecord& r) {
        if (a.log_every > 0 && (r.iteration + 1) % a.log_every == 0)
            std::fprintf(stderr, "iter %d loss %.5f (base %.5f focus %.5f)\n", r.iteration + 1, r.loss.total,
                         r.loss.base, r.loss.focus);
    };
    const TrainResult result = train(config, train_set, options);
    std::cout << "checkpoint: " << (fs::path(a.out) / "checkpoint.ckpt").string() << '\n';
    if (!result.log.empty()) std::cout << "final loss: " << result.log.back().loss.total << '\n';
    return 0;
}

// ---- eval ----
struct EvalArgs {
    ConfigArgs config;
    std::string checkpoint;
    std::string predictions;
    std::string data;
    std::string split = "test";
    std::string out;
    std::optional<double> beta_sq;
    std::optional<std::string> error;
    std::optional<double> threshold;
};

// Probability maps stored as 8-bit PNGs named <id>.png.
MetricsReport evaluate_prediction_dir(const fs::path& dir, const DatasetIndex& index, const MetricsConfig& metrics) {
    std::vector<EvalSample> samples;
    for (const auto& e : index.entries) {
        const fs::path p = dir / (e.id + ".png");
        if (!fs::exists(p)) throw ValidationError("missing prediction for id " + e.id);
        Image8 img = read_png(p);
        if (img.channels != 1) throw ValidationError("prediction is not single-channel: id " + e.id);
        Tensor prob = to_tensor(img);
        Tensor gt = mask_from_image(read_png(e.mask));
        if (!(prob.shape() == gt.shape())) throw ValidationError("prediction size mismatch: id " + e.id);
        samples.push_back({prob, gt, e.delta});
    }
    return evaluate(samples, metrics);
}

int cmd_eval(const EvalArgs& a) {
    if (a.checkpoint.empty() == a.predictions.empty())
        throw ValidationError("give exactly one of --checkpoint or --predictions");
    std::vector<std::string> extra;
    if (a.beta_sq) extra.push_back("eval.beta_sq=" + std::to_string(*a.beta_sq));
    if (a.error) extra.push_back("eval.error=" + *a.error);
    if (a.threshold) extra.push_back("eval.threshold=" + std::to_string(*a.threshold));
    const DatasetIndex test_set = index_or_fail(a.data, a.split);

    Evaluation ev;
    if (!a.checkpoint.empty()) {
        if (!fs::exists(a.checkpoint)) throw ValidationError("checkpoint not found: " + a.checkpoint);
        const Checkpoint ck = load_checkpoint(a.checkpoint);
        // The model always comes from the checkpoint; evaluation settings from
        // --config/--set when given, else from the checkpoint's own config.
        RunConfig expected = a.config.path.empty() ? ck.run_config() : load_config(a.config.path);
        std::vector<std::string> overrides = a.config.overrides;
        overrides.insert(overrides.end(), extra.begin(), extra.end());
        expected = apply_overrides(expected, overrides);
        std::string warning;
        ev = evaluate_checkpoint(ck, test_set, expected, &warning);
        if (!warning.empty()) std::cerr << "warning: " << warning << '\n';
    } else {
        ev.report = evaluate_prediction_dir(a.predictions, test_set, a.config.resolve(extra).eval.metrics);
    }
    const fs::path out(a.out);
    write_text(out / "report.json", to_json(ev).dump(2) + "\n");
    std::string table = format_report_table(ev.report);
    if (!ev.fm_recall.empty()) {
        table += "\nFM recall by threshold:\n";
        char line[64];
        for (const auto& r : ev.fm_recall) {
            std::snprintf(line, sizeof line, "  %.2f  %.4f\n", r.threshold, r.recall);
            table += line;
        }
    }
    write_text(out / "report.txt", table);
    std::cout << table;
    return 0;
}

// ---- separate ----
struct SeparateArgs {
    std::string checkpoint;
    std::vector<std::string> inputs;
    std::vector<std::string> gts;
    std::string out;
    bool oracle = false;
};

int cmd_separate(const SeparateArgs& a) {
    if (!fs::exists(a.checkpoint)) throw ValidationError("checkpoint not found: " + a.checkpoint);
    if (!a.gts.empty() && a.gts.size() != a.inputs.size())
        throw ValidationError("--gt must be given once per --input");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const FospModel model = model_from_checkpoint(ck);
    if (!model.config().switches.focus_module || !model.config().switches.separation) {
        throw ValidationError("checkpoint lacks the focus and separation modules (ablation row " +
                              model.config().switches.row_label() + ")");
    }
    NoGradGuard no_grad;
    const fs::path out(a.out);
    fs::create_directories(out);
    for (std::size_t i = 0; i < a.inputs.size(); ++i) {
        const fs::path input(a.inputs[i]);
        const Tensor image = to_tensor(read_png(input));
        if (image.shape().c != 3) throw ValidationError("input is not RGB: " + input.string());
        Tensor gt;
        if (!a.gts.empty()) gt = mask_from_image(read_png(a.gts[i]));
        const FospModel::Output result = model.forward(image);
        const std::string stem = input.stem().string();
        const Shape& s = image.shape();
        write_png(out / (stem + "_fm_overlay.png"), focus_overlay(image, result.focus->focus.prob, gt));
        for (int level = 0; level < kLevels; ++level) {
            write_png(out / (stem + "_fg_level" + std::to_string(level + 1) + ".png"),
                      feature_heatmap(result.foreground->levels[level], s.h, s.w));
        }
        Tensor binary = Tensor::from(result.prediction.prob.shape(), std::vector<double>(s.plane()));
        {
            auto pv = result.prediction.prob.data();
            auto bv = binary.mutable_data();
            const double t = ck.run_config().eval.metrics.threshold;
            for (std::size_t p = 0; p < s.plane(); ++p) bv[p] = pv[p] >= t ? 1.0 : 0.0;
        }
        write_png(out / (stem + "_prediction.png"), to_image8(binary));
        if (a.oracle) {
            const Inpainter& inp = *model.inpainter();
            const Tensor bg = inp.reconstruct(inp.decode(inp.encode(image, result.focus->focus.prob)), s.h, s.w);
            write_png(out / (stem + "_background.png"), to_image8(bg));
        }
        std::cout << "wrote panel set for " << stem << '\n';
    }
    return 0;
}

// ---- ablate ----
struct AblateArgs {
    ConfigArgs config;
    std::string data;
    std::string out;
    std::string rows = "a,b,c,d,e";
};

int cmd_ablate(const AblateArgs& a) {
    const RunConfig config = a.config.resolve();
    const DatasetIndex train_set = index_or_fail(a.data, "train");
    const DatasetIndex test_set = index_or_fail(a.data, "test");
    const auto rows = run_ablation(config, a.rows, train_set, test_set,
                                   [](const std::string& msg) { std::cerr << msg << '\n'; });
    const std::string table = format_ablation_table(rows);
    const fs::path out(a.out);
    write_text(out / "ablation.txt", table);
    write_text(out / "ablation.json", to_json(rows).dump(2) + "\n");
    save_config(out / "config.json", config);
    for (const auto& row : rows) {
        std::string log;
        for (const auto& rec : row.log) log += to_json(rec).dump() + "\n";
        write_text(out / ("train_log_" + row.label + ".jsonl"), log);
        save_checkpoint(out / ("row_" + row.label + ".ckpt"), row.checkpoint);
    }
    std::cout << table;
    return 0;
}

// ---- report ----
struct ReportArgs {
    std::string data;
    std::string split = "test";
    std::string checkpoint;
    std::string out;
    int bins = 5;
};

int cmd_report(const ReportArgs& a) {
    const DatasetIndex index = index_or_fail(a.data, a.split);
    const DeltaHistogram h = delta_histogram(index, a.bins);
    const fs::path out(a.out);
    write_text(out / "delta_histogram.svg", histogram_svg(h, "Smoke pixel ratio, " + a.split + " split"));
    std::string csv = "lower,upper,count\n";
    char line[96];
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        std::snprintf(line, sizeof line, "%.6g,%.6g,%zu\n", h.edges[i], h.edges[i + 1], h.counts[i]);
        csv += line;
    }
    write_text(out / "delta_histogram.csv", csv);
    std::cout << "histogram: " << index.size() << " samples in " << h.counts.size() << " bins\n";
    if (!a.checkpoint.empty()) {
        if (!fs::exists(a.checkpoint)) throw ValidationError("checkpoint not found: " + a.checkpoint);
        const Evaluation ev = evaluate_checkpoint(load_checkpoint(a.checkpoint), index);
        write_text(out / "metrics.json", to_json(ev).dump(2) + "\n");
        write_text(out / "metrics_table.txt", format_report_table(ev.report));
        std::cout << format_report_table(ev.report);
    }
    return 0;
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

int fail(int code, const char* kind, const std::string& message) {
    std::cerr << "fosp: error code=" << code << " kind=" << kind << " msg=" << one_line(message) << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Early smoke segmentation: generate data, train, evaluate, visualise"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Compose a synthetic smoke dataset");
    g->add_option("--out", gen.out, "Dataset root")->required();
    g->add_option("--n", gen.n, "Training samples");
    g->add_option("--n-test", gen.n_test, "Test samples (0 skips the split)");
    g->add_option("--seed", gen.seed, "Generator seed");
    g->add_option("--quota", gen.quota, "Bucket fractions small,medium,large");
    g->add_option("--size", gen.size, "Image side length in pixels");
    g->add_option("--backgrounds", gen.backgrounds, "Folder of PNG backgrounds (procedural when absent)");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model on <data>/train");
    tr.config.attach(t);
    t->add_option("--data", tr.data, "Dataset root")->required();
    t->add_option("--out", tr.out, "Run directory")->required();
    t->add_option("--iterations", tr.iterations, "Shorthand for --set train.iterations=N");
    t->add_option("--seed", tr.seed, "Shorthand for --set seed=N");
    t->add_option("--log-every", tr.log_every, "Progress interval on stderr (0 = quiet)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a folder of prediction maps");
    ev.config.attach(e);
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
    e->add_option("--predictions", ev.predictions, "Folder of <id>.png probability maps");
    e->add_option("--data", ev.data, "Dataset root")->required();
    e->add_option("--split", ev.split, "Split to evaluate");
    e->add_option("--out", ev.out, "Output directory")->required();
    e->add_option("--beta-sq", ev.beta_sq, "F-measure beta squared");
    e->add_option("--error", ev.error, "Error definition M: mse or mae");
    e->add_option("--threshold", ev.threshold, "Binarisation threshold");

    SeparateArgs sp;
    auto* s = app.add_subcommand("separate", "Write focus-map, foreground and prediction panels");
    s->add_option("--checkpoint", sp.checkpoint, "Checkpoint file")->required();
    s->add_option("--input", sp.inputs, "Input RGB image (repeatable)")->required();
    s->add_option("--gt", sp.gts, "Ground-truth mask per input (repeatable)");
    s->add_option("--out", sp.out, "Output directory")->required();
    s->add_flag("--oracle", sp.oracle, "Also write the inpainted background");

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "Train and compare ablation rows a-e");
    ab.config.attach(a);
    a->add_option("--data", ab.data, "Dataset root with train and test splits")->required();
    a->add_option("--out", ab.out, "Output directory")->required();
    a->add_option("--rows", ab.rows, "Comma-separated rows, e.g. a,e");

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Smoke-ratio histogram and optional metrics table");
    r->add_option("--data", rp.data, "Dataset root")->required();
    r->add_option("--split", rp.split, "Split to summarise");
    r->add_option("--checkpoint", rp.checkpoint, "Also evaluate this checkpoint");
    r->add_option("--out", rp.out, "Output directory")->required();
    r->add_option("--bins", rp.bins, "Histogram bins per bucket below 0.025");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        return fail(2, "validation", err.what());
    }

    try {
        if (*g) return cmd_generate(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*s) return cmd_separate(sp);
        if (*a) return cmd_ablate(ab);
        if (*r) return cmd_report(rp);
    } catch (const ValidationError& err) {
        return fail(2, "validation", err.what());
    } catch (const RuntimeError& err) {
        return fail(3, "runtime", err.what());
    } catch (const std::exception& err) {
        return fail(3, "runtime", err.what());
    }
    return 0;
}
