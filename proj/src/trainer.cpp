#include "fosp/trainer.hpp"

#include "fosp/error.hpp"
#include "fosp/loss.hpp"
#include "fosp/ops.hpp"
#include "fosp/optim.hpp"
#include "fosp/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace fosp {

using nlohmann::ordered_json;

namespace {

bool all_finite(const ParameterSet& params) {
    for (const auto& e : params.entries())
        for (double v : e.value.data())
            if (!std::isfinite(v)) return false;
    return true;
}

constexpr std::uint64_t kSamplerStream = 10;
constexpr std::uint64_t kInpainterTrainStream = 20;
constexpr std::uint64_t kInpainterInitStream = 3;  // matches FospModel

// Endless shuffled pass over [0, n).
class EpochSampler {
public:
    explicit EpochSampler(std::size_t n) : order_(n), cursor_(n) { std::iota(order_.begin(), order_.end(), 0); }
    std::size_t next(Rng& rng) {
        if (cursor_ == order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

private:
    std::vector<std::size_t> order_;
    std::size_t cursor_;
};

std::vector<NamedArray> snapshot(const ParameterSet& params) {
    std::vector<NamedArray> out;
    for (const auto& e : params.entries()) {
        auto v = e.value.data();
        out.push_back({e.name, e.value.shape(), std::vector<double>(v.begin(), v.end())});
    }
    return out;
}

void load_arrays(const std::vector<NamedArray>& arrays, ParameterSet& params) {
    Checkpoint holder;
    holder.arrays = arrays;
    restore_parameters(holder, params);
}

AugmentationConfig eval_augmentation(const RunConfig& config) {
    AugmentationConfig aug = config.augment;
    aug.enabled = false;
    return aug;
}

Tensor compute_loss(const RunConfig& config, const FospModel::Output& out, const Tensor& gt, LossBreakdown& breakdown) {
    const bool with_focus = config.model.switches.focus_loss;
    return total_loss(out.prediction, with_focus ? &out.focus->focus : nullptr,
                      with_focus ? &out.focus->logits : nullptr, gt, config.loss, &breakdown,
                      config.train.target_threshold);
}

}  // namespace

ordered_json to_json(const LossRecord& r) {
    ordered_json j;
    j["iteration"] = r.iteration;
    j["total"] = r.loss.total;
    j["base"] = r.loss.base;
    j["focus"] = r.loss.focus;
    j["focus_map"] = r.loss.focus_map;
    j["levels"] = r.loss.levels;
    return j;
}

std::vector<NamedArray> pretrain_inpainter(const RunConfig& config, const DatasetIndex& train_set,
                                           std::vector<double>* curve,
                                           const std::function<void(int, double)>& on_step) {
    if (train_set.empty()) throw ValidationError("inpainter pre-training: empty training set");
    const AugmentationConfig aug = eval_augmentation(config);
    std::vector<InpainterSample> samples;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        if (!train_set.entries[i].background) {
            throw ValidationError("inpainter pre-training needs clean backgrounds; sample " + train_set.entries[i].id +
                                  " has none (set inpainter.checkpoint or disable ablation.separation)");
        }
        const std::size_t pos[1] = {i};
        Batch b = load_batch(train_set, pos, aug, 0);
        samples.push_back({b.images, *b.backgrounds, b.masks});
    }
    Rng init_rng(mix_seed(config.seed, kInpainterInitStream));
    Inpainter inpainter(InpainterConfig{config.model.backbone.channels, config.model.inpainter_embed_channels},
                        init_rng);
    InpainterTrainConfig tc;
    tc.steps = config.inpainter.pretrain_steps;
    tc.batch_size = config.inpainter.batch_size;
    tc.learning_rate = config.inpainter.learning_rate;
    tc.blank_fraction = config.inpainter.blank_fraction;
    tc.seed = mix_seed(config.seed, kInpainterTrainStream);
    InpainterTrainResult r = train_inpainter(inpainter, samples, tc, on_step);
    if (curve) *curve = std::move(r.loss_curve);
    return snapshot(inpainter.parameters());
}

TrainResult train(const RunConfig& config, const DatasetIndex& train_set, const TrainOptions& options) {
    config.validate();
    if (train_set.empty()) throw ValidationError("training set is empty");
    const AblationSwitches& sw = config.model.switches;

    FospModel model(config.model, config.seed);
    TrainResult result;
    if (sw.separation) {
        if (options.inpainter_weights) {
            result.inpainter_weights = *options.inpainter_weights;
        } else if (!config.inpainter.checkpoint.empty()) {
            const Checkpoint source = load_checkpoint(config.inpainter.checkpoint);
            restore_parameters(source, model.inpainter()->parameters());
            result.inpainter_weights = snapshot(model.inpainter()->parameters());
        } else {
            result.inpainter_weights =
                pretrain_inpainter(config, train_set, &result.inpainter_curve, options.on_inpainter_step);
        }
        load_arrays(result.inpainter_weights, model.inpainter()->parameters());
        if (config.inpainter.mode == InpainterMode::Frozen) model.inpainter()->parameters().set_requires_grad(false);
    }

    const bool finetune = config.inpainter.mode == InpainterMode::Finetune;
    AdamW optimizer(model.trainable(finetune), {config.train.learning_rate, config.train.weight_decay});

    std::optional<DatasetIndex> synthetic;
    if (config.train.synthetic_fraction > 0.0) {
        synthetic = index_dataset(config.train.synthetic_root, "train");
        if (synthetic->empty()) throw ValidationError("synthetic set under " + config.train.synthetic_root + " is empty");
    }

    std::ofstream log;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        save_config(options.out_dir / "config.json", config);
        log.open(options.out_dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
        if (!log) throw RuntimeError("cannot write training log under " + options.out_dir.string());
    }

    Rng rng(mix_seed(config.seed, kSamplerStream));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    EpochSampler real_sampler(train_set.size());
    std::optional<EpochSampler> synthetic_sampler;
    if (synthetic) synthetic_sampler.emplace(synthetic->size());

    for (int it = 0; it < config.train.iterations; ++it) {
        const std::uint64_t batch_seed = rng();
        std::vector<Tensor> images, masks;
        for (int slot = 0; slot < config.train.batch_size; ++slot) {
            const bool use_synthetic = synthetic && unit(rng) < config.train.synthetic_fraction;
            const DatasetIndex& source = use_synthetic ? *synthetic : train_set;
            const std::size_t pos[1] = {use_synthetic ? synthetic_sampler->next(rng) : real_sampler.next(rng)};
            Batch b = load_batch(source, pos, config.augment, mix_seed(batch_seed, static_cast<std::uint64_t>(slot)));
            images.push_back(b.images);
            masks.push_back(b.masks);
        }
        const Tensor x = stack_batch(images);
        const Tensor y = stack_batch(masks);

        optimizer.zero_grad();
        const FospModel::Output out = model.forward(x);
        LossRecord record;
        record.iteration = it;
        const Tensor loss = compute_loss(config, out, y, record.loss);
        auto diverged = [&](const std::string& what, const Checkpoint& good) {
            if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "checkpoint_last_good.ckpt", good);
            return RuntimeError(what + " at iteration " + std::to_string(it) +
                                (options.out_dir.empty() ? std::string()
                                                         : "; last good state in checkpoint_last_good.ckpt"));
        };
        // Parameters have not been touched by this iteration yet.
        if (!std::isfinite(record.loss.total)) throw diverged("non-finite loss", capture_checkpoint(config, model, &optimizer, it));
        loss.backward();
        // The loss can stay finite (clamped BCE) while an update overflows the
        // weights, so the pre-step state is kept until the step is checked.
        std::optional<Checkpoint> before;
        if (!options.out_dir.empty()) before = capture_checkpoint(config, model, &optimizer, it);
        optimizer.step();
        if (!all_finite(optimizer.parameters())) throw diverged("non-finite parameters", before ? *before : Checkpoint{});

        result.log.push_back(record);
        if (log) log << to_json(record).dump() << '\n';
        if (options.on_step) options.on_step(record);
        if (!options.out_dir.empty() && config.train.checkpoint_every > 0 &&
            (it + 1) % config.train.checkpoint_every == 0 && it + 1 < config.train.iterations) {
            char name[32];
            std::snprintf(name, sizeof name, "iter_%06d.ckpt", it + 1);
            save_checkpoint(options.out_dir / "checkpoints" / name, capture_checkpoint(config, model, &optimizer, it + 1));
        }
    }
    optimizer.zero_grad();
    model.parameters().zero_grad();

    result.checkpoint = capture_checkpoint(config, model, &optimizer, config.train.iterations);
    if (!result.log.empty()) result.checkpoint.metrics["final_loss"] = to_json(result.log.back());
    if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "checkpoint.ckpt", result.checkpoint);
    return result;
}

FospModel model_from_checkpoint(const Checkpoint& checkpoint) {
    const RunConfig config = checkpoint.run_config();
    FospModel model(config.model, config.seed);
    restore_parameters(checkpoint, model.parameters());
    return model;
}

Evaluation evaluate_model(const FospModel& model, const RunConfig& config, const DatasetIndex& test_set) {
    if (test_set.empty()) throw ValidationError("test set is empty");
    NoGradGuard no_grad;
    const AugmentationConfig aug = eval_augmentation(config);
    const std::size_t chunk = static_cast<std::size_t>(config.train.batch_size);
    const auto& thresholds = config.eval.fm_thresholds;
    std::vector<double> hits(thresholds.size(), 0.0);
    double positives = 0.0;
    bool has_focus = false;

    std::vector<EvalSample> samples;
    for (std::size_t start = 0; start < test_set.size(); start += chunk) {
        std::vector<std::size_t> positions;
        for (std::size_t i = start; i < std::min(test_set.size(), start + chunk); ++i) positions.push_back(i);
        const Batch batch = load_batch(test_set, positions, aug, 0);
        const FospModel::Output out = model.forward(batch.images);
        for (std::size_t k = 0; k < positions.size(); ++k) {
            const int n = static_cast<int>(k);
            samples.push_back({slice_batch(out.prediction.prob, n), slice_batch(batch.masks, n), batch.deltas[k]});
        }
        if (!out.focus) continue;
        has_focus = true;
        const Tensor& fm = out.focus->focus.prob;
        const Shape& fs = fm.shape();
        const Shape& gs = batch.masks.shape();
        auto fv = fm.data();
        auto gv = batch.masks.data();
        for (int n = 0; n < gs.n; ++n)
            for (int y = 0; y < gs.h; ++y)
                for (int x = 0; x < gs.w; ++x) {
                    if (gv[static_cast<std::size_t>(n) * gs.plane() + static_cast<std::size_t>(y) * gs.w + x] <= 0.5)
                        continue;
                    positives += 1.0;
                    const int cy = y * fs.h / gs.h;
                    const int cx = x * fs.w / gs.w;
                    const double f = fv[static_cast<std::size_t>(n) * fs.plane() + static_cast<std::size_t>(cy) * fs.w + cx];
                    for (std::size_t t = 0; t < thresholds.size(); ++t)
                        if (f >= thresholds[t]) hits[t] += 1.0;
                }
    }
    Evaluation ev;
    ev.report = evaluate(samples, config.eval.metrics);
    if (has_focus) {
        for (std::size_t t = 0; t < thresholds.size(); ++t) {
            ev.fm_recall.push_back({thresholds[t], positives > 0.0 ? hits[t] / positives : 0.0});
        }
    }
    return ev;
}

Evaluation evaluate_checkpoint(const Checkpoint& checkpoint, const DatasetIndex& test_set,
                               const std::optional<RunConfig>& expected_config, std::string* warning) {
    const RunConfig config = checkpoint.run_config();
    if (expected_config) {
        const std::string expected = config_hash(*expected_config);
        if (expected != checkpoint.config_hash && warning) {
            *warning = "config hash mismatch: checkpoint " + checkpoint.config_hash + ", expected " + expected;
        }
    }
    const FospModel model = model_from_checkpoint(checkpoint);
    RunConfig eval_config = config;
    if (expected_config) eval_config.eval = expected_config->eval;
    return evaluate_model(model, eval_config, test_set);
}

ordered_json to_json(const MetricsReport& report) {
    auto row = [](const MetricRow& r) {
        ordered_json j;
        j["count"] = r.count;
        if (r.empty()) return j;
        j["f_beta"] = r.f_beta;
        j["miou"] = r.miou;
        j["m"] = r.m;
        j["recall"] = r.recall;
        j["precision"] = r.precision;
        return j;
    };
    ordered_json j;
    j["beta_sq"] = report.config.beta_sq;
    j["error_definition"] = error_definition_name(report.config.error);
    j["threshold"] = report.config.threshold;
    for (Bucket b : {Bucket::Small, Bucket::Medium, Bucket::Large}) j[bucket_name(b)] = row(report.row(b));
    j["total"] = row(report.total);
    return j;
}

ordered_json to_json(const Evaluation& evaluation) {
    ordered_json j = to_json(evaluation.report);
    if (!evaluation.fm_recall.empty()) {
        ordered_json fm = ordered_json::array();
        for (const auto& r : evaluation.fm_recall) fm.push_back({{"threshold", r.threshold}, {"recall", r.recall}});
        j["fm_recall"] = fm;
    }
    return j;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& rows, const DatasetIndex& train_set,
                                      const DatasetIndex& test_set,
                                      const std::function<void(const std::string&)>& progress) {
    std::vector<char> labels;
    for (char c : rows) {
        if (c == ',' || c == ' ') continue;
        AblationSwitches::row(c);  // validates the label
        if (std::find(labels.begin(), labels.end(), c) != labels.end()) {
            throw ValidationError(std::string("ablation row '") + c + "' requested twice");
        }
        labels.push_back(c);
    }
    if (labels.empty()) throw ValidationError("no ablation rows requested");

    std::vector<AblationRow> out;
    std::optional<std::vector<NamedArray>> shared_inpainter;
    for (char label : labels) {
        RunConfig config = base;
        config.model.switches = AblationSwitches::row(label);
        if (progress) progress(std::string("training row ") + label);
        TrainOptions options;
        if (shared_inpainter) options.inpainter_weights = &*shared_inpainter;
        TrainResult trained = train(config, train_set, options);
        if (config.model.switches.separation && !shared_inpainter) shared_inpainter = trained.inpainter_weights;
        if (progress) progress(std::string("evaluating row ") + label);
        AblationRow row;
        row.label = std::string(1, label);
        row.switches = config.model.switches;
        row.evaluation = evaluate_checkpoint(trained.checkpoint, test_set);
        row.log = std::move(trained.log);
        row.checkpoint = std::move(trained.checkpoint);
        out.push_back(std::move(row));
    }
    return out;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-5s %-5s %-5s %-5s | %-26s | %-26s\n", "row", "FL", "FM", "Sep", "DF",
                  "Total  Recall  Prec   F_b", "Small  Recall  Prec   F_b");
    out += line;
    auto mark = [](bool on) { return on ? "x" : "-"; };
    auto cells = [](const MetricRow& r) {
        char buf[64];
        if (r.empty()) {
            std::snprintf(buf, sizeof buf, "%6s  %6s %6s", "-", "-", "-");
        } else {
            std::snprintf(buf, sizeof buf, "%6.2f  %6.2f %6.2f", 100.0 * r.recall, 100.0 * r.precision, 100.0 * r.f_beta);
        }
        return std::string(buf);
    };
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "(%s)  %-5s %-5s %-5s %-5s | %-26s | %-26s\n", r.label.c_str(),
                      mark(r.switches.focus_loss), mark(r.switches.focus_module), mark(r.switches.separation),
                      mark(r.switches.domain_fusion), ("      " + cells(r.evaluation.report.total)).c_str(),
                      ("      " + cells(r.evaluation.report.row(Bucket::Small))).c_str());
        out += line;
    }
    return out;
}

ordered_json to_json(const std::vector<AblationRow>& rows) {
    ordered_json j = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json row;
        row["row"] = r.label;
        row["focus_loss"] = r.switches.focus_loss;
        row["focus_module"] = r.switches.focus_module;
        row["separation"] = r.switches.separation;
        row["domain_fusion"] = r.switches.domain_fusion;
        row["metrics"] = to_json(r.evaluation);
        if (!r.log.empty()) row["final_loss"] = r.log.back().loss.total;
        j.push_back(row);
    }
    return j;
}

}  // namespace fosp
