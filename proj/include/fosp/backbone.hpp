#pragma once

#include "fosp/nn.hpp"
#include "fosp/types.hpp"

#include <array>
#include <vector>

namespace fosp {

enum class MixerKind { Convolution, Attention };

struct BackboneConfig {
    // Channel counts per pyramid level, coarse (H/32) to fine (H/4).
    std::array<int, kLevels> channels{256, 160, 64, 32};
    std::array<int, kLevels> depths{1, 1, 1, 1};
    MixerKind mixer = MixerKind::Convolution;
};

// Four-stage hierarchical encoder. The image is standardised to 4x - 2
// (mean 0.5, std 0.25), then stages run fine to coarse: a 7x7 stride-4 patch
// embedding produces H/4, three 3x3 stride-2 embeddings halve the resolution.
// Each embedding is followed by a channel LayerNorm; each stage applies `depth`
// pre-norm residual mixing blocks and a closing LayerNorm.
//
// Parameter names: backbone.level<i>.embed, .embed_norm, .block<j>.*, .norm,
// with i the pyramid level (1 coarsest).
class Backbone {
public:
    Backbone(const BackboneConfig& config, ParameterSet& params, Rng& rng);

    FeaturePyramid extract(const Tensor& image) const;
    const BackboneConfig& config() const { return config_; }

private:
    struct Block {
        MixerKind kind;
        // convolution mixer: x + proj(gelu(spatial(norm1 x)))
        Conv2d spatial, proj;
        // attention mixer: x + out(attn(q n, k pool(n), v pool(n))) with n = norm1 x,
        // then x + mlp(norm2 x)
        Conv2d query, key, value, out;
        ChannelNorm norm1, norm2;
        PointwiseMlp mlp;
        int reduction = 1;
    };
    struct Stage {
        Conv2d embed;
        ChannelNorm embed_norm;
        std::vector<Block> blocks;
        ChannelNorm norm;
    };

    Tensor run_block(const Block& block, const Tensor& x) const;

    BackboneConfig config_;
    std::array<Stage, kLevels> stages_;  // indexed by pyramid level - 1
};

}  // namespace fosp
