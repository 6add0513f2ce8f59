#pragma once

#include "fosp/nn.hpp"
#include "fosp/separation.hpp"
#include "fosp/types.hpp"

#include <array>

namespace fosp {

// How foreground features enter the hierarchical merge.
enum class ForegroundMode {
    None,    // origin features only
    Add,     // origin + foreground, elementwise
    Concat,  // origin, foreground and previous stage concatenated (domain fusion)
};

struct FusionConfig {
    std::array<int, kLevels> channels{256, 160, 64, 32};  // origin channels, coarse to fine
    int fuse_channels = 128;
    ForegroundMode foreground = ForegroundMode::Concat;
};

// Final H x W prediction; logits are kept for the loss.
struct Prediction {
    Tensor prob;
    Tensor logits;
};

// Per-level F + FM_i * F with FM bilinearly resized to each level.
FeaturePyramid enhance_origin(const FeaturePyramid& pyramid, const FocusMap& focus);

// Stage i (coarse to fine) concatenates origin_i, foreground_i and the 2x
// bilinearly upsampled previous fused map, then applies a pointwise MLP.
//
// Parameter names: fusion.stage<i>.fc1/fc2, fusion.head.
class DomainFusion {
public:
    DomainFusion(const FusionConfig& config, ParameterSet& params, Rng& rng);

    // Returns the finest fused map (H/4). `foreground` may be null when the
    // mode is ForegroundMode::None.
    Tensor fuse(const FeaturePyramid& origin, const ForegroundPyramid* foreground) const;
    // Same as fuse() but with every stage output, coarse to fine.
    std::array<Tensor, kLevels> fuse_stages(const FeaturePyramid& origin, const ForegroundPyramid* foreground,
                                            int zero_previous_at = -1) const;
    // 1x1 conv to one channel, bilinear x4 upsample, sigmoid.
    Prediction decode(const Tensor& fused) const;

    const FusionConfig& config() const { return config_; }
    int stage_input_channels(int stage) const;

private:
    FusionConfig config_;
    std::array<PointwiseMlp, kLevels> stages_;
    Conv2d head_;
};

}  // namespace fosp
