#include "fosp/checkpoint.hpp"

#include "fosp/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fosp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'O', 'S', 'P', 'C', 'K', 'P', 'T'};

NamedArray snapshot(const std::string& name, const Shape& shape, std::span<const double> values) {
    return {name, shape, std::vector<double>(values.begin(), values.end())};
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

RunConfig Checkpoint::run_config() const { return config_from_json(nlohmann::json(config)); }

Checkpoint capture_checkpoint(const RunConfig& config, const FospModel& model, const AdamW* optimizer,
                              std::int64_t iteration) {
    Checkpoint ck;
    ck.config = to_json(config);
    ck.config_hash = config_hash(config);
    ck.iteration = iteration;
    for (const auto& e : model.parameters().entries()) {
        ck.arrays.push_back(snapshot(e.name, e.value.shape(), e.value.data()));
    }
    if (optimizer) {
        ck.optimizer_step = optimizer->step_count();
        const auto& entries = optimizer->parameters().entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const Shape& s = entries[i].value.shape();
            ck.arrays.push_back(snapshot("adamw.m." + entries[i].name, s, optimizer->first_moments()[i]));
            ck.arrays.push_back(snapshot("adamw.v." + entries[i].name, s, optimizer->second_moments()[i]));
        }
    }
    return ck;
}

void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params) {
    for (auto& e : params.entries()) {
        const NamedArray* a = checkpoint.find(e.name);
        if (!a) throw ValidationError("checkpoint is missing parameter " + e.name);
        if (!(a->shape == e.value.shape())) {
            throw ValidationError("checkpoint shape mismatch for " + e.name + ": " + a->shape.str() + " vs " +
                                  e.value.shape().str());
        }
        auto dst = e.value.mutable_data();
        std::copy(a->values.begin(), a->values.end(), dst.begin());
    }
}

void restore_optimizer(const Checkpoint& checkpoint, AdamW& optimizer) {
    std::vector<std::vector<double>> m, v;
    for (const auto& e : optimizer.parameters().entries()) {
        const NamedArray* am = checkpoint.find("adamw.m." + e.name);
        const NamedArray* av = checkpoint.find("adamw.v." + e.name);
        if (!am || !av) throw ValidationError("checkpoint has no optimiser state for " + e.name);
        m.push_back(am->values);
        v.push_back(av->values);
    }
    optimizer.restore(checkpoint.optimizer_step, std::move(m), std::move(v));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::ordered_json header;
    header["config"] = ck.config;
    header["config_hash"] = ck.config_hash;
    header["iteration"] = ck.iteration;
    header["optimizer_step"] = ck.optimizer_step;
    header["metrics"] = ck.metrics;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& a : ck.arrays) {
        if (a.values.size() != a.shape.numel()) throw ValidationError("array " + a.name + " size does not match shape");
        table.push_back({{"name", a.name},
                         {"shape", {a.shape.n, a.shape.c, a.shape.h, a.shape.w}},
                         {"offset", offset},
                         {"count", a.values.size()}});
        offset += a.values.size();
    }
    header["arrays"] = table;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeError("cannot write checkpoint " + path.string());
        const std::uint32_t version = kCheckpointVersion;
        const std::uint64_t length = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&length), sizeof length);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& a : ck.arrays) {
            out.write(reinterpret_cast<const char*>(a.values.data()),
                      static_cast<std::streamsize>(a.values.size() * sizeof(double)));
        }
        if (!out) throw RuntimeError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("checkpoint not found: " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t length = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&length), sizeof length);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw ValidationError("not a checkpoint file: " + path.string());
    }
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    }
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (!in) throw RuntimeError("truncated checkpoint header: " + path.string());

    Checkpoint ck;
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(text);
        ck.config = header.at("config");
        ck.config_hash = header.at("config_hash").get<std::string>();
        ck.iteration = header.at("iteration").get<std::int64_t>();
        ck.optimizer_step = header.at("optimizer_step").get<std::int64_t>();
        ck.metrics = header.at("metrics");
    } catch (const nlohmann::json::exception& e) {
        throw RuntimeError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    for (const auto& entry : header.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        const auto s = entry.at("shape").get<std::vector<int>>();
        if (s.size() != 4) throw RuntimeError("corrupt checkpoint shape for " + a.name);
        a.shape = {s[0], s[1], s[2], s[3]};
        const auto count = entry.at("count").get<std::size_t>();
        if (count != a.shape.numel()) throw RuntimeError("corrupt checkpoint count for " + a.name);
        a.values.resize(count);
        in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw RuntimeError("truncated checkpoint payload at " + a.name);
        ck.arrays.push_back(std::move(a));
    }
    return ck;
}

}  // namespace fosp
