#pragma once

#include "fosp/data.hpp"
#include "fosp/loss.hpp"
#include "fosp/metrics.hpp"
#include "fosp/model.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fosp {

enum class InpainterMode { Frozen, Finetune };

struct InpainterSettings {
    InpainterMode mode = InpainterMode::Frozen;
    int pretrain_steps = 1000;
    double learning_rate = 1e-3;
    int batch_size = 6;
    double blank_fraction = 0.25;
    std::string checkpoint;  // optional pre-trained inpainter weights
};

struct TrainSettings {
    double learning_rate = 6e-5;
    double weight_decay = 0.01;
    int batch_size = 6;
    int iterations = 2000;
    int checkpoint_every = 500;  // 0 disables periodic checkpoints
    double target_threshold = 0.0;
    double synthetic_fraction = 0.0;  // share of each batch drawn from a synthetic set
    std::string synthetic_root;
};

struct EvalSettings {
    MetricsConfig metrics;
    std::vector<double> fm_thresholds{0.15, 0.6, 0.7, 0.8, 0.9};
};

// Everything that determines a run. Serialises to a nested JSON object whose
// leaves are addressed by dotted keys ("train.iterations").
struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainSettings train;
    LossWeights loss;
    InpainterSettings inpainter;
    AugmentationConfig augment{true, 128, true, 1.25, 0.5};
    EvalSettings eval;

    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& config);
// Strict: any key not present in the default tree is rejected, with the full
// list of valid keys in the message.
RunConfig config_from_json(const nlohmann::json& tree);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

// Applies "key=value" overrides; the value is parsed as JSON, falling back to
// a plain string.
RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides);

std::vector<std::string> valid_config_keys();
// Identifies what was trained: covers every section except "eval".
std::string config_hash(const RunConfig& config);

std::string inpainter_mode_name(InpainterMode mode);
InpainterMode parse_inpainter_mode(const std::string& name);

}  // namespace fosp
