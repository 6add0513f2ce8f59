#include "fosp/config.hpp"

#include "fosp/error.hpp"
#include "fosp/random.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fosp {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string mixer_name(MixerKind kind) { return kind == MixerKind::Attention ? "attention" : "convolution"; }

MixerKind parse_mixer(const std::string& name) {
    if (name == "convolution") return MixerKind::Convolution;
    if (name == "attention") return MixerKind::Attention;
    throw ValidationError("unknown mixer '" + name + "' (expected convolution|attention)");
}

// Leaves are non-object values; arrays count as leaves.
void flatten(const json& node, const std::string& prefix, std::map<std::string, json>& out) {
    if (node.is_object() && !node.empty()) {
        for (auto it = node.begin(); it != node.end(); ++it) {
            flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
        }
    } else {
        out[prefix] = node;
    }
}

json::json_pointer pointer_for(const std::string& dotted) {
    std::string p;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) p += "/" + part;
    return json::json_pointer(p);
}

std::string key_list() {
    std::string out;
    for (const auto& k : valid_config_keys()) out += (out.empty() ? "" : ", ") + k;
    return out;
}

template <typename T>
T read(const json& tree, const std::string& key) {
    try {
        return tree.at(pointer_for(key)).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config key " + key + " has the wrong type");
    }
}

template <typename T>
std::array<T, kLevels> read_levels(const json& tree, const std::string& key) {
    const auto v = read<std::vector<T>>(tree, key);
    if (v.size() != kLevels) throw ValidationError("config key " + key + " needs exactly 4 values");
    std::array<T, kLevels> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

}  // namespace

std::string inpainter_mode_name(InpainterMode mode) { return mode == InpainterMode::Finetune ? "finetune" : "frozen"; }

InpainterMode parse_inpainter_mode(const std::string& name) {
    if (name == "frozen") return InpainterMode::Frozen;
    if (name == "finetune") return InpainterMode::Finetune;
    throw ValidationError("unknown inpainter mode '" + name + "' (expected frozen|finetune)");
}

void RunConfig::validate() const {
    for (int c : model.backbone.channels)
        if (c <= 0) throw ValidationError("model.channels must be positive");
    for (int d : model.backbone.depths)
        if (d < 0) throw ValidationError("model.depths must be non-negative");
    if (model.fuse_channels <= 0) throw ValidationError("model.fuse_channels must be positive");
    if (model.inpainter_embed_channels <= 0) throw ValidationError("model.inpainter_embed_channels must be positive");
    if (!(model.beta > 0.0) || !std::isfinite(model.beta)) throw ValidationError("model.beta must be positive");
    if (!(train.learning_rate > 0.0)) throw ValidationError("train.learning_rate must be positive");
    if (!(train.weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be non-negative");
    if (train.batch_size <= 0) throw ValidationError("train.batch_size must be positive");
    if (train.iterations < 0) throw ValidationError("train.iterations must be non-negative");
    if (train.checkpoint_every < 0) throw ValidationError("train.checkpoint_every must be non-negative");
    if (!(train.target_threshold >= 0.0 && train.target_threshold <= 1.0))
        throw ValidationError("train.target_threshold must lie in [0,1]");
    if (!(train.synthetic_fraction >= 0.0 && train.synthetic_fraction <= 1.0))
        throw ValidationError("train.synthetic_fraction must lie in [0,1]");
    if (train.synthetic_fraction > 0.0 && train.synthetic_root.empty())
        throw ValidationError("train.synthetic_root is required when train.synthetic_fraction > 0");
    loss.validate();
    if (inpainter.pretrain_steps < 0) throw ValidationError("inpainter.pretrain_steps must be non-negative");
    if (inpainter.batch_size <= 0) throw ValidationError("inpainter.batch_size must be positive");
    if (!(inpainter.learning_rate > 0.0)) throw ValidationError("inpainter.learning_rate must be positive");
    if (!(inpainter.blank_fraction >= 0.0 && inpainter.blank_fraction <= 1.0))
        throw ValidationError("inpainter.blank_fraction must lie in [0,1]");
    augment.validate();
    if (!(eval.metrics.beta_sq > 0.0)) throw ValidationError("eval.beta_sq must be positive");
    if (!(eval.metrics.threshold > 0.0 && eval.metrics.threshold < 1.0))
        throw ValidationError("eval.threshold must lie in (0,1)");
    for (double t : eval.fm_thresholds)
        if (!(t > 0.0 && t < 1.0)) throw ValidationError("eval.fm_thresholds must lie in (0,1)");
}

ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    const auto& m = c.model;
    j["model"] = {{"channels", m.backbone.channels},
                  {"depths", m.backbone.depths},
                  {"mixer", mixer_name(m.backbone.mixer)},
                  {"inpainter_embed_channels", m.inpainter_embed_channels},
                  {"fuse_channels", m.fuse_channels},
                  {"beta", m.beta}};
    j["ablation"] = {{"focus_loss", m.switches.focus_loss},
                     {"focus_module", m.switches.focus_module},
                     {"separation", m.switches.separation},
                     {"domain_fusion", m.switches.domain_fusion}};
    j["train"] = {{"learning_rate", c.train.learning_rate},
                  {"weight_decay", c.train.weight_decay},
                  {"batch_size", c.train.batch_size},
                  {"iterations", c.train.iterations},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"target_threshold", c.train.target_threshold},
                  {"synthetic_fraction", c.train.synthetic_fraction},
                  {"synthetic_root", c.train.synthetic_root}};
    j["loss"] = {{"focus_map", c.loss.focus_map}, {"levels", c.loss.levels}, {"base", c.loss.base}};
    j["inpainter"] = {{"mode", inpainter_mode_name(c.inpainter.mode)},
                      {"pretrain_steps", c.inpainter.pretrain_steps},
                      {"learning_rate", c.inpainter.learning_rate},
                      {"batch_size", c.inpainter.batch_size},
                      {"blank_fraction", c.inpainter.blank_fraction},
                      {"checkpoint", c.inpainter.checkpoint}};
    j["augment"] = {{"enabled", c.augment.enabled},
                    {"target_size", c.augment.target_size},
                    {"crop", c.augment.crop},
                    {"crop_scale_max", c.augment.crop_scale_max},
                    {"flip_probability", c.augment.flip_probability}};
    j["eval"] = {{"beta_sq", c.eval.metrics.beta_sq},
                 {"error", error_definition_name(c.eval.metrics.error)},
                 {"threshold", c.eval.metrics.threshold},
                 {"fm_thresholds", c.eval.fm_thresholds}};
    return j;
}

std::vector<std::string> valid_config_keys() {
    std::map<std::string, json> flat;
    flatten(json(to_json(RunConfig{})), "", flat);
    std::vector<std::string> keys;
    for (const auto& [k, v] : flat) keys.push_back(k);
    return keys;
}

RunConfig config_from_json(const json& tree) {
    if (!tree.is_object()) throw ValidationError("config must be a JSON object");
    json merged = to_json(RunConfig{});
    std::map<std::string, json> flat;
    flatten(tree, "", flat);
    const auto keys = valid_config_keys();
    const std::set<std::string> valid(keys.begin(), keys.end());
    for (const auto& [key, value] : flat) {
        if (key.empty()) continue;  // empty top-level object
        if (!valid.count(key)) throw ValidationError("unknown config key '" + key + "'; valid keys: " + key_list());
        merged[pointer_for(key)] = value;
    }

    RunConfig c;
    c.seed = read<std::uint64_t>(merged, "seed");
    c.model.backbone.channels = read_levels<int>(merged, "model.channels");
    c.model.backbone.depths = read_levels<int>(merged, "model.depths");
    c.model.backbone.mixer = parse_mixer(read<std::string>(merged, "model.mixer"));
    c.model.inpainter_embed_channels = read<int>(merged, "model.inpainter_embed_channels");
    c.model.fuse_channels = read<int>(merged, "model.fuse_channels");
    c.model.beta = read<double>(merged, "model.beta");
    c.model.switches.focus_loss = read<bool>(merged, "ablation.focus_loss");
    c.model.switches.focus_module = read<bool>(merged, "ablation.focus_module");
    c.model.switches.separation = read<bool>(merged, "ablation.separation");
    c.model.switches.domain_fusion = read<bool>(merged, "ablation.domain_fusion");
    c.train.learning_rate = read<double>(merged, "train.learning_rate");
    c.train.weight_decay = read<double>(merged, "train.weight_decay");
    c.train.batch_size = read<int>(merged, "train.batch_size");
    c.train.iterations = read<int>(merged, "train.iterations");
    c.train.checkpoint_every = read<int>(merged, "train.checkpoint_every");
    c.train.target_threshold = read<double>(merged, "train.target_threshold");
    c.train.synthetic_fraction = read<double>(merged, "train.synthetic_fraction");
    c.train.synthetic_root = read<std::string>(merged, "train.synthetic_root");
    c.loss.focus_map = read<double>(merged, "loss.focus_map");
    c.loss.levels = read_levels<double>(merged, "loss.levels");
    c.loss.base = read<double>(merged, "loss.base");
    c.inpainter.mode = parse_inpainter_mode(read<std::string>(merged, "inpainter.mode"));
    c.inpainter.pretrain_steps = read<int>(merged, "inpainter.pretrain_steps");
    c.inpainter.learning_rate = read<double>(merged, "inpainter.learning_rate");
    c.inpainter.batch_size = read<int>(merged, "inpainter.batch_size");
    c.inpainter.blank_fraction = read<double>(merged, "inpainter.blank_fraction");
    c.inpainter.checkpoint = read<std::string>(merged, "inpainter.checkpoint");
    c.augment.enabled = read<bool>(merged, "augment.enabled");
    c.augment.target_size = read<int>(merged, "augment.target_size");
    c.augment.crop = read<bool>(merged, "augment.crop");
    c.augment.crop_scale_max = read<double>(merged, "augment.crop_scale_max");
    c.augment.flip_probability = read<double>(merged, "augment.flip_probability");
    c.eval.metrics.beta_sq = read<double>(merged, "eval.beta_sq");
    c.eval.metrics.error = parse_error_definition(read<std::string>(merged, "eval.error"));
    c.eval.metrics.threshold = read<double>(merged, "eval.threshold");
    c.eval.fm_thresholds = read<std::vector<double>>(merged, "eval.fm_thresholds");
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    json tree;
    try {
        tree = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(tree);
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write config " + path.string());
    out << to_json(config).dump(2) << '\n';
}

RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides) {
    if (overrides.empty()) return config;
    json tree = to_json(config);
    const auto keys = valid_config_keys();
    const std::set<std::string> valid(keys.begin(), keys.end());
    for (const std::string& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + item + "' is not key=value");
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        if (!valid.count(key)) throw ValidationError("unknown config key '" + key + "'; valid keys: " + key_list());
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        tree[pointer_for(key)] = value;
    }
    return config_from_json(tree);
}

std::string config_hash(const RunConfig& config) {
    ordered_json tree = to_json(config);
    tree.erase("eval");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(tree.dump())));
    return buf;
}

}  // namespace fosp
