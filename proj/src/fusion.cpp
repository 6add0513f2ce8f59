#include "fosp/fusion.hpp"

#include "fosp/error.hpp"
#include "fosp/ops.hpp"

#include <string>
#include <vector>

namespace fosp {

FeaturePyramid enhance_origin(const FeaturePyramid& pyramid, const FocusMap& focus) {
    FeaturePyramid out;
    for (std::size_t i = 0; i < kLevels; ++i) {
        const Shape& s = pyramid[i].shape();
        if (focus.prob.shape().n != s.n) throw ValidationError("enhance_origin: batch size mismatch");
        const Tensor fm = ops::resize_bilinear(focus.prob, s.h, s.w);
        out[i] = ops::query_guide(pyramid[i], fm);
    }
    return out;
}

DomainFusion::DomainFusion(const FusionConfig& config, ParameterSet& params, Rng& rng) : config_(config) {
    if (config.fuse_channels <= 0) throw ValidationError("fuse_channels must be positive");
    for (int i = 0; i < kLevels; ++i) {
        const int in = stage_input_channels(i);
        stages_[static_cast<std::size_t>(i)] = PointwiseMlp(params, "fusion.stage" + std::to_string(i + 1), in,
                                                            config.fuse_channels, config.fuse_channels, rng);
    }
    head_ = Conv2d(params, "fusion.head", config.fuse_channels, 1, 1, 1, 0, rng);
}

int DomainFusion::stage_input_channels(int stage) const {
    const int c = config_.channels[static_cast<std::size_t>(stage)];
    int in = config_.foreground == ForegroundMode::Concat ? 2 * c : c;
    if (stage > 0) in += config_.fuse_channels;
    return in;
}

std::array<Tensor, kLevels> DomainFusion::fuse_stages(const FeaturePyramid& origin, const ForegroundPyramid* foreground,
                                                      int zero_previous_at) const {
    if (config_.foreground != ForegroundMode::None && foreground == nullptr) {
        throw ValidationError("fusion: foreground features required in this mode");
    }
    std::array<Tensor, kLevels> fused;
    for (std::size_t i = 0; i < kLevels; ++i) {
        const Tensor& o = origin[i];
        if (o.shape().c != config_.channels[i]) {
            throw ValidationError("fusion stage " + std::to_string(i + 1) + ": origin has " +
                                  std::to_string(o.shape().c) + " channels, expected " +
                                  std::to_string(config_.channels[i]));
        }
        std::vector<Tensor> parts;
        if (config_.foreground == ForegroundMode::None) {
            parts.push_back(o);
        } else {
            const Tensor& f = foreground->levels[i];
            if (f.shape() != o.shape()) {
                throw ValidationError("fusion stage " + std::to_string(i + 1) + ": foreground " + f.shape().str() +
                                      " does not mirror origin " + o.shape().str());
            }
            if (config_.foreground == ForegroundMode::Add) {
                parts.push_back(ops::add(o, f));
            } else {
                parts.push_back(o);
                parts.push_back(f);
            }
        }
        if (i > 0) {
            Tensor prev = ops::resize_bilinear(fused[i - 1], o.shape().h, o.shape().w);
            if (static_cast<int>(i) == zero_previous_at) prev = Tensor::zeros(prev.shape());
            parts.push_back(prev);
        }
        fused[i] = stages_[i](parts.size() == 1 ? parts[0] : ops::concat_channels(parts));
    }
    return fused;
}

Tensor DomainFusion::fuse(const FeaturePyramid& origin, const ForegroundPyramid* foreground) const {
    return fuse_stages(origin, foreground)[kLevels - 1];
}

Prediction DomainFusion::decode(const Tensor& fused) const {
    if (fused.shape().c != config_.fuse_channels) {
        throw ValidationError("decode: fused map has " + std::to_string(fused.shape().c) + " channels, expected " +
                              std::to_string(config_.fuse_channels));
    }
    const Tensor logits = ops::resize_bilinear(head_(fused), 4 * fused.shape().h, 4 * fused.shape().w);
    return Prediction{ops::sigmoid(logits), logits};
}

}  // namespace fosp
