#pragma once

#include "fosp/config.hpp"
#include "fosp/model.hpp"
#include "fosp/optim.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fosp {

// On-disk layout (little-endian):
//   8 bytes   magic "FOSPCKPT"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: config, config_hash, iteration, metrics, optimizer
//             step and an array table [{name, shape[4], offset, count}]
//   payload   float64 values, arrays back to back at their offsets
// Array names: model parameters under their hierarchical names
// ("backbone.level1.embed.weight"), optimiser moments under
// "adamw.m.<param>" and "adamw.v.<param>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    nlohmann::ordered_json config;
    std::string config_hash;
    std::int64_t iteration = 0;
    std::int64_t optimizer_step = 0;
    std::vector<NamedArray> arrays;
    nlohmann::ordered_json metrics = nlohmann::ordered_json::object();

    const NamedArray* find(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }
    RunConfig run_config() const;
};

// Snapshot of every model parameter, plus optimiser moments when given.
Checkpoint capture_checkpoint(const RunConfig& config, const FospModel& model, const AdamW* optimizer,
                              std::int64_t iteration);
// Copies parameters into the model by name; every model parameter must be
// present with a matching shape.
void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params);
void restore_optimizer(const Checkpoint& checkpoint, AdamW& optimizer);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fosp
