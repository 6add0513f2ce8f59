#pragma once

#include "fosp/checkpoint.hpp"
#include "fosp/config.hpp"
#include "fosp/data.hpp"
#include "fosp/metrics.hpp"
#include "fosp/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fosp {

struct LossRecord {
    int iteration = 0;
    LossBreakdown loss;
};

nlohmann::ordered_json to_json(const LossRecord& record);

struct TrainOptions {
    // When set, the run writes config.json, train_log.jsonl, periodic
    // checkpoints/iter_<k>.ckpt and the final checkpoint.ckpt here.
    std::filesystem::path out_dir;
    std::function<void(const LossRecord&)> on_step;
    std::function<void(int, double)> on_inpainter_step;
    // Pre-trained inpainter weights to reuse instead of pre-training again.
    const std::vector<NamedArray>* inpainter_weights = nullptr;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRecord> log;
    std::vector<double> inpainter_curve;
    std::vector<NamedArray> inpainter_weights;  // empty when separation is off
};

// Randomness: model initialisation draws from per-module streams of
// config.seed; the inpainter pre-training and the batch sampler each draw
// from their own derived stream. Batches are consumed in shuffled epochs; each
// batch draws one augmentation seed, then one synthetic-vs-real coin per slot
// when a synthetic set is mixed in.
//
// Throws RuntimeError on a non-finite loss after saving the last good state
// to out_dir/checkpoint_last_good.ckpt (when out_dir is set).
TrainResult train(const RunConfig& config, const DatasetIndex& train_set, const TrainOptions& options = {});

// Fits the inpainter on samples that carry clean backgrounds.
std::vector<NamedArray> pretrain_inpainter(const RunConfig& config, const DatasetIndex& train_set,
                                           std::vector<double>* curve = nullptr,
                                           const std::function<void(int, double)>& on_step = {});

// Rebuilds the model a checkpoint describes and loads its parameters.
FospModel model_from_checkpoint(const Checkpoint& checkpoint);

struct FmRecall {
    double threshold = 0.0;
    double recall = 0.0;
};

struct Evaluation {
    MetricsReport report;
    // Share of ground-truth smoke pixels whose focus-map cell is >= threshold,
    // pooled over the split. Empty when the model has no focus branch.
    std::vector<FmRecall> fm_recall;
};

// Loads each test sample at the configured input size without augmentation.
Evaluation evaluate_model(const FospModel& model, const RunConfig& config, const DatasetIndex& test_set);

// `expected_config`, when given, is compared by hash; a mismatch is reported
// through `warning` (not fatal).
Evaluation evaluate_checkpoint(const Checkpoint& checkpoint, const DatasetIndex& test_set,
                               const std::optional<RunConfig>& expected_config = std::nullopt,
                               std::string* warning = nullptr);

nlohmann::ordered_json to_json(const MetricsReport& report);
nlohmann::ordered_json to_json(const Evaluation& evaluation);

struct AblationRow {
    std::string label;
    AblationSwitches switches;
    Evaluation evaluation;
    std::vector<LossRecord> log;
    Checkpoint checkpoint;  // final weights of the row
};

// Trains and evaluates each requested row ('a'..'e') from the same seed.
// Rows sharing the separation module reuse one pre-trained inpainter.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& rows, const DatasetIndex& train_set,
                                      const DatasetIndex& test_set,
                                      const std::function<void(const std::string&)>& progress = {});

// Recall / Precision / F_beta for Total and Small, one line per row.
std::string format_ablation_table(const std::vector<AblationRow>& rows);
nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows);

}  // namespace fosp
