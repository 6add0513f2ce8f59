// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [--work DIR] [--only 1,2,8]
//
// Criteria 8 and 9 generate the default synthetic set under --work and train
// the desk configuration; they take most of the runtime.

#include "fosp/checkpoint.hpp"
#include "fosp/compositor.hpp"
#include "fosp/config.hpp"
#include "fosp/error.hpp"
#include "fosp/focus.hpp"
#include "fosp/fusion.hpp"
#include "fosp/loss.hpp"
#include "fosp/metrics.hpp"
#include "fosp/model.hpp"
#include "fosp/ops.hpp"
#include "fosp/separation.hpp"
#include "fosp/trainer.hpp"
#include "testing.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

using namespace fosp;
using fosp::testing::gradcheck;
using fosp::testing::random_mask;
using fosp::testing::random_tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const std::array<int, kLevels> kSmall{8, 6, 4, 4};

// Criterion 1.
Outcome blank_mask_null() {
    std::size_t checked = 0;
    for (std::uint64_t pseed = 0; pseed < 3; ++pseed) {
        Rng rng(100 + pseed);
        const Inpainter inp(InpainterConfig{}, rng);
        for (std::uint64_t i = 0; i < 8; ++i) {
            const Tensor image = random_tensor({1, 3, 64, 64}, 1000 * pseed + i, 0, 1);
            const ForegroundPyramid fg = separate(inp, image, Tensor::zeros({1, 1, 4, 4}), 10.0);
            for (int l = 0; l < kLevels; ++l)
                for (double v : fg.levels[l].data()) {
                    if (v != 0.0) return {false, fmt("nonzero foreground %g (param seed %d, image %d)", v, (int)pseed, (int)i)};
                    ++checked;
                }
        }
    }
    return {true, fmt("%zu elements exactly zero", checked)};
}

// Criterion 2.
Outcome gain_linearity() {
    Rng rng(7);
    const Inpainter inp(InpainterConfig{}, rng);
    std::size_t checked = 0;
    for (std::uint64_t i = 0; i < 4; ++i) {
        const Tensor image = random_tensor({1, 3, 64, 64}, 10 + i, 0, 1);
        const Tensor fm = random_tensor({1, 1, 4, 4}, 20 + i, 0, 1);
        const ForegroundPyramid a = separate(inp, image, fm, 10.0);
        const ForegroundPyramid b = separate(inp, image, fm, 20.0);
        for (int l = 0; l < kLevels; ++l) {
            auto av = a.levels[l].data();
            auto bv = b.levels[l].data();
            for (std::size_t k = 0; k < av.size(); ++k, ++checked)
                if (bv[k] != 2.0 * av[k]) return {false, fmt("level %d element %zu: %.17g vs 2*%.17g", l + 1, k, bv[k], av[k])};
        }
    }
    return {true, fmt("%zu elements exact", checked)};
}

// Criterion 3.
Outcome gradient_suite() {
    double worst = 0.0;
    std::string where;
    auto note = [&](const char* what, const fosp::testing::GradReport& r) {
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            where = std::string(what) + " " + r.worst;
        }
    };
    {
        ParameterSet params;
        Rng rng(1);
        const FocusModule focus(kSmall, params, rng);
        FeaturePyramid p;
        for (int i = 0; i < kLevels; ++i) {
            const int s = 32 / level_divisor(i + 1);
            p[i] = random_tensor({1, kSmall[i], s, s}, 2 + i, -1, 1, true);
        }
        auto f = [&] {
            const auto out = focus.forward(p);
            Tensor loss = ops::mean(ops::mul(out.focus.prob, out.focus.prob));
            for (const auto& g : out.logits) loss = ops::add(loss, ops::mean(ops::sigmoid(g.logits)));
            return loss;
        };
        auto inputs = fosp::testing::named(params);
        for (int i = 0; i < kLevels; ++i) inputs.emplace_back("F" + std::to_string(i + 1), p[i]);
        note("focus", gradcheck(f, inputs));
    }
    {
        ParameterSet params;
        Rng rng(2);
        const DomainFusion fusion({kSmall, 6, ForegroundMode::Concat}, params, rng);
        FeaturePyramid origin, fgp;
        for (int i = 0; i < kLevels; ++i) {
            const int s = 32 / level_divisor(i + 1);
            origin[i] = random_tensor({1, kSmall[i], s, s}, 20 + i, -1, 1, true);
            fgp[i] = random_tensor({1, kSmall[i], s, s}, 30 + i, -1, 1, true);
        }
        const ForegroundPyramid fg{fgp, 10.0};
        auto f = [&] {
            const Prediction p = fusion.decode(fusion.fuse(origin, &fg));
            return ops::mean(ops::mul(p.prob, p.prob));
        };
        auto inputs = fosp::testing::named(params);
        for (int i = 0; i < kLevels; ++i) {
            inputs.emplace_back("origin" + std::to_string(i + 1), origin[i]);
            inputs.emplace_back("fg" + std::to_string(i + 1), fg.levels[i]);
        }
        note("fusion", gradcheck(f, inputs));
    }
    {
        const Tensor gt = random_mask({1, 1, 32, 32}, 40, 0.3);
        Tensor pl = random_tensor({1, 1, 32, 32}, 41, -2, 2, true);
        Tensor fl = random_tensor({1, 1, 2, 2}, 42, -2, 2, true);
        std::array<Tensor, kLevels> gl;
        for (int i = 0; i < kLevels; ++i) {
            const int s = 32 / level_divisor(i + 1);
            gl[i] = random_tensor({1, 1, s, s}, 43 + i, -2, 2, true);
        }
        auto f = [&] {
            const Prediction pred{ops::sigmoid(pl), pl};
            const FocusMap fm{ops::sigmoid(fl)};
            std::array<LogitsMap, kLevels> logits;
            for (int i = 0; i < kLevels; ++i) logits[i] = {gl[i], level_divisor(i + 1)};
            return total_loss(pred, &fm, &logits, gt, LossWeights{});
        };
        std::vector<std::pair<std::string, Tensor>> inputs{{"P", pl}, {"FM", fl}};
        for (int i = 0; i < kLevels; ++i) inputs.emplace_back("G" + std::to_string(i + 1), gl[i]);
        note("loss", gradcheck(f, inputs));
    }
    return {worst < 1e-3, fmt("max relative error %.3g", worst) + (worst < 1e-3 ? "" : " at " + where)};
}

// Criterion 4.
Outcome shape_contract() {
    ModelConfig mc;
    mc.backbone.channels = {16, 12, 8, 8};
    mc.inpainter_embed_channels = 8;
    mc.fuse_channels = 8;
    const FospModel model(mc, 1);
    int cases = 0;
    for (int h : {64, 128, 256})
        for (int w : {64, 128, 256}) {
            NoGradGuard guard;
            const auto out = model.forward(random_tensor({1, 3, h, w}, h * 1000 + w, 0, 1));
            for (int i = 0; i < kLevels; ++i) {
                const int d = level_divisor(i + 1);
                const Shape want{1, mc.backbone.channels[i], h / d, w / d};
                if (!(out.origin[i].shape() == want))
                    return {false, fmt("%dx%d level %d is %s", h, w, i + 1, out.origin[i].shape().str().c_str())};
            }
            if (!(out.focus->focus.prob.shape() == Shape{1, 1, h / 16, w / 16}))
                return {false, fmt("%dx%d focus map is %s", h, w, out.focus->focus.prob.shape().str().c_str())};
            if (!(out.prediction.prob.shape() == Shape{1, 1, h, w}))
                return {false, fmt("%dx%d prediction is %s", h, w, out.prediction.prob.shape().str().c_str())};
            ++cases;
        }
    return {true, fmt("%d sizes", cases)};
}

// Criterion 5.
Outcome compositor_oracle() {
    const Tensor bg = random_tensor({1, 3, 64, 64}, 1, 0, 1);
    const Tensor smoke = random_tensor({1, 3, 64, 64}, 2, 0, 1);
    const Tensor alpha = random_tensor({1, 3, 64, 64}, 3, 0, 0.99);
    const double round_trip =
        fosp::testing::max_abs_diff(decompose_background(compose(bg, smoke, alpha), smoke, alpha).data(), bg.data());
    const Tensor none = compose(bg, smoke, Tensor::zeros(alpha.shape()));
    const Tensor full = compose(bg, smoke, Tensor::full(alpha.shape(), 1.0));
    const double d0 = fosp::testing::max_abs_diff(none.data(), bg.data());
    const double d1 = fosp::testing::max_abs_diff(full.data(), smoke.data());
    return {round_trip <= 1e-6 && d0 == 0.0 && d1 == 0.0,
            fmt("round trip %.3g, alpha=0 diff %g, alpha=1 diff %g", round_trip, d0, d1)};
}

// Criterion 6.
Outcome metrics_oracle() {
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const Tensor prob = random_tensor({1, 1, 32, 32}, 500 + t, 0, 1);
        const Tensor gt = random_mask({1, 1, 32, 32}, 700 + t, (t % 10 + 0.5) / 10.0);
        double tp = 0, fp = 0, fn = 0, tn = 0, se = 0, ae = 0;
        std::vector<double> bin;
        for (std::size_t i = 0; i < prob.numel(); ++i) {
            const bool p = prob.data()[i] >= 0.5, g = gt.data()[i] > 0.5;
            bin.push_back(p ? 1.0 : 0.0);
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
            tn += !p && !g;
            const double d = prob.data()[i] - gt.data()[i];
            se += d * d;
            ae += std::abs(d);
        }
        const double n = static_cast<double>(prob.numel());
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        const double fb = prec + rec > 0 ? 1.3 * prec * rec / (0.3 * prec + rec) : 0.0;
        const double mi = 0.5 * ((tp + fp + fn > 0 ? tp / (tp + fp + fn) : 1.0) + (tn + fp + fn > 0 ? tn / (tn + fp + fn) : 1.0));
        const ConfusionCounts c = confusion(bin, gt.data());
        for (double d : {precision(c) - prec, recall(c) - rec, f_beta(c, 0.3) - fb, miou(c) - mi,
                         m_error(prob, gt, ErrorDefinition::Mse) - se / n, m_error(prob, gt, ErrorDefinition::Mae) - ae / n})
            worst = std::max(worst, std::abs(d));
    }
    const std::pair<double, Bucket> table[] = {{0.003, Bucket::Small},  {0.005, Bucket::Medium}, {0.010, Bucket::Medium},
                                               {0.025, Bucket::Large}, {0.030, Bucket::Large}};
    for (const auto& [delta, want] : table)
        if (split_bucket(delta) != want) return {false, fmt("delta %.3f assigned to %s", delta, bucket_name(split_bucket(delta)).c_str())};
    return {worst < 1e-9, fmt("max deviation %.3g over 100 pairs; bucket table exact", worst)};
}

// Criterion 7.
Outcome loss_closed_forms() {
    const Tensor gt = random_mask({1, 1, 64, 64}, 9, 0.3);
    FocusMap fm{Tensor::full({1, 1, 4, 4}, 0.5)};
    std::array<LogitsMap, kLevels> logits;
    for (int i = 0; i < kLevels; ++i) {
        const int s = 64 / level_divisor(i + 1);
        logits[i] = {Tensor::zeros({1, 1, s, s}), level_divisor(i + 1)};
    }
    const Prediction pred{Tensor::full({1, 1, 64, 64}, 0.5), Tensor::zeros({1, 1, 64, 64})};
    const double fl = focus_loss(fm, logits, gt, LossWeights{}).item();
    const double tl = total_loss(pred, &fm, &logits, gt, LossWeights{}).item();
    const double e1 = std::abs(fl - 0.5 * std::log(2.0)), e2 = std::abs(tl - std::log(2.0));
    return {e1 <= 1e-6 && e2 <= 1e-6, fmt("focus %.9f (err %.2g), total %.9f (err %.2g)", fl, e1, tl, e2)};
}

// Criteria 8 and 9 share one ablation run.
struct DeskRun {
    std::optional<std::vector<AblationRow>> rows;
    std::string error;
};

DeskRun& desk_run(const std::filesystem::path& work, const std::filesystem::path& config_path) {
    static DeskRun run;
    static bool done = false;
    if (done) return run;
    done = true;
    try {
        const auto data = work / "desk_data";
        std::cerr << "generating 500/100 synthetic set under " << data << "\n";
        CompositorConfig cc;  // 128x128, quota 0.6/0.3/0.1
        build_dataset(data, "train", 500, cc, 0);
        build_dataset(data, "test", 100, cc, 0);
        RunConfig cfg = load_config(config_path);
        cfg.train.iterations = 2000;
        const auto t0 = std::chrono::steady_clock::now();
        run.rows = run_ablation(cfg, "a,e", index_dataset(data, "train"), index_dataset(data, "test"),
                                [&](const std::string& msg) {
                                    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                                    std::cerr << fmt("[%7.1fs] ", s) << msg << "\n";
                                });
        std::ofstream(work / "desk_ablation.txt") << format_ablation_table(*run.rows);
        std::ofstream(work / "desk_ablation.json") << to_json(*run.rows).dump(2);
        for (const AblationRow& row : *run.rows)
            save_checkpoint(work / ("desk_row_" + row.label + ".ckpt"), row.checkpoint);
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    return run;
}

Outcome ablation_trend(DeskRun& run) {
    if (!run.rows) return {false, "ablation failed: " + run.error};
    const MetricRow& a = (*run.rows)[0].evaluation.report.row(Bucket::Small);
    const MetricRow& e = (*run.rows)[1].evaluation.report.row(Bucket::Small);
    const double dfb = 100.0 * (e.f_beta - a.f_beta), drec = 100.0 * (e.recall - a.recall);
    return {dfb >= 2.0 && drec >= 2.0,
            fmt("Small F_b %.2f -> %.2f (%+.2f), recall %.2f -> %.2f (%+.2f)", 100 * a.f_beta, 100 * e.f_beta, dfb,
                100 * a.recall, 100 * e.recall, drec)};
}

Outcome fm_coverage(DeskRun& run) {
    if (!run.rows) return {false, "ablation failed: " + run.error};
    const auto& fr = (*run.rows)[1].evaluation.fm_recall;
    if (fr.size() != 5) return {false, "row (e) has no focus-map recall"};
    std::ostringstream s;
    bool monotone = true;
    for (std::size_t i = 0; i < fr.size(); ++i) {
        s << (i ? ", " : "") << fmt("%.2f:%.4f", fr[i].threshold, fr[i].recall);
        if (i > 0 && fr[i].recall > fr[i - 1].recall) monotone = false;
    }
    const bool floor_ok = fr[0].recall >= 0.80;
    return {floor_ok && monotone,
            "recall " + s.str() + (monotone ? "" : " (not monotone)") + (floor_ok ? "" : " (below 0.80 at 0.15)")};
}

// Criterion 10.
Outcome determinism(const std::filesystem::path& work, const std::filesystem::path& config_path) {
    const auto data = work / "determinism_data";
    CompositorConfig cc;
    build_dataset(data, "train", 24, cc, 5);
    RunConfig cfg = load_config(config_path);
    cfg.train.iterations = 15;
    cfg.train.checkpoint_every = 0;
    cfg.inpainter.pretrain_steps = 10;
    const DatasetIndex train_set = index_dataset(data, "train");
    const TrainResult r1 = train(cfg, train_set);
    const TrainResult r2 = train(cfg, train_set);
    for (std::size_t i = 0; i < r1.log.size(); ++i)
        if (r1.log[i].loss.total != r2.log[i].loss.total)
            return {false, fmt("loss curves differ at iteration %zu", i)};

    save_checkpoint(work / "determinism.ckpt", r1.checkpoint);
    const FospModel before = model_from_checkpoint(r1.checkpoint);
    const FospModel after = model_from_checkpoint(load_checkpoint(work / "determinism.ckpt"));
    const Tensor probe = random_tensor({2, 3, 128, 128}, 77, 0, 1);
    NoGradGuard guard;
    const auto pa = before.forward(probe), pb = after.forward(probe);
    const auto va = pa.prediction.prob.data(), vb = pb.prediction.prob.data();
    for (std::size_t i = 0; i < va.size(); ++i)
        if (va[i] != vb[i]) return {false, fmt("probe forward differs at element %zu", i)};
    return {true, fmt("%zu identical losses; probe forward bit-identical after reload", r1.log.size())};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::filesystem::path work = std::filesystem::temp_directory_path() / "fosp_acceptance";
    std::filesystem::path config_path = FOSP_DESK_CONFIG;
    std::string only;
    app.add_option("--work", work, "Scratch directory for generated data and checkpoints");
    app.add_option("--config", config_path, "Desk configuration for criteria 8-10");
    app.add_option("--only", only, "Comma-separated criterion numbers");
    CLI11_PARSE(app, argc, argv);
    std::filesystem::create_directories(work);

    std::set<int> selected;
    for (std::stringstream ss(only); ss.good();) {
        std::string tok;
        std::getline(ss, tok, ',');
        if (!tok.empty()) selected.insert(std::stoi(tok));
    }

    const std::vector<Criterion> criteria{
        {1, "blank-mask null separation", 10, blank_mask_null},
        {2, "gain linearity", 10, gain_linearity},
        {3, "gradient suite", 120, gradient_suite},
        {4, "shape contract", 30, shape_contract},
        {5, "compositor oracle", 10, compositor_oracle},
        {6, "metrics oracle", 30, metrics_oracle},
        {7, "loss closed forms", 5, loss_closed_forms},
        {8, "desk ablation trend", 45 * 60, [&] { return ablation_trend(desk_run(work, config_path)); }},
        // Reuses the run above; its budget covers evaluation only.
        {9, "focus-map coverage trend", 5 * 60, [&] { return fm_coverage(desk_run(work, config_path)); }},
        {10, "determinism and persistence", 10 * 60, [&] { return determinism(work, config_path); }},
    };

    int failed = 0;
    for (const Criterion& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_s) {
            o.pass = false;
            o.detail += fmt(" (over the %.0fs budget)", c.budget_s);
        }
        failed += !o.pass;
        std::cout << fmt("[%s] criterion %2d %-30s %8.1fs  ", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs)
                  << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
