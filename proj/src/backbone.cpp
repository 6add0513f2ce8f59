#include "fosp/backbone.hpp"

#include "fosp/error.hpp"
#include "fosp/ops.hpp"

#include <cmath>
#include <string>

namespace fosp {

void validate_image(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.c != 3) throw ValidationError("image must have 3 channels, got " + std::to_string(s.c));
    std::string bad;
    if (s.h % 32 != 0) bad += "height " + std::to_string(s.h);
    if (s.w % 32 != 0) bad += std::string(bad.empty() ? "" : " and ") + "width " + std::to_string(s.w);
    if (!bad.empty()) throw ValidationError("image " + bad + " not divisible by 32");
    for (double v : image.data()) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw ValidationError("image values must be finite and within [0,1]");
        }
    }
}

void validate_pyramid(const FeaturePyramid& pyramid, int image_h, int image_w) {
    for (int i = 0; i < kLevels; ++i) {
        const Tensor& t = pyramid[static_cast<std::size_t>(i)];
        if (!t.defined()) throw ValidationError("pyramid level " + std::to_string(i + 1) + " missing");
        const int d = level_divisor(i + 1);
        if (t.shape().h != image_h / d || t.shape().w != image_w / d) {
            throw ValidationError("pyramid level " + std::to_string(i + 1) + " has shape " + t.shape().str() +
                                  ", expected spatial " + std::to_string(image_h / d) + "x" +
                                  std::to_string(image_w / d));
        }
        for (double v : t.data())
            if (!std::isfinite(v)) throw ValidationError("pyramid level " + std::to_string(i + 1) + " not finite");
    }
}

Backbone::Backbone(const BackboneConfig& config, ParameterSet& params, Rng& rng) : config_(config) {
    int in_channels = 3;
    // Build fine to coarse, matching evaluation order, so the RNG stream is
    // consumed in the same order the data flows.
    for (int level = kLevels; level >= 1; --level) {
        const auto idx = static_cast<std::size_t>(level - 1);
        const int c = config.channels[idx];
        const int depth = config.depths[idx];
        if (c <= 0 || depth < 0) throw ValidationError("backbone channels must be positive and depths non-negative");
        const std::string prefix = "backbone.level" + std::to_string(level);
        Stage& stage = stages_[idx];
        stage.embed = (level == kLevels) ? Conv2d(params, prefix + ".embed", in_channels, c, 7, 4, 3, rng)
                                         : Conv2d(params, prefix + ".embed", in_channels, c, 3, 2, 1, rng);
        stage.embed_norm = ChannelNorm(params, prefix + ".embed_norm", c);
        for (int b = 0; b < depth; ++b) {
            const std::string bp = prefix + ".block" + std::to_string(b + 1);
            Block block;
            block.kind = config.mixer;
            block.norm1 = ChannelNorm(params, bp + ".norm1", c);
            if (config.mixer == MixerKind::Convolution) {
                block.spatial = Conv2d(params, bp + ".spatial", c, c, 3, 1, 1, rng);
                block.proj = Conv2d(params, bp + ".proj", c, c, 1, 1, 0, rng);
            } else {
                // Keys and values are pooled so the finest stage attends over H/32 positions.
                block.reduction = level_divisor(1) / level_divisor(level);
                block.query = Conv2d(params, bp + ".query", c, c, 1, 1, 0, rng);
                block.key = Conv2d(params, bp + ".key", c, c, 1, 1, 0, rng);
                block.value = Conv2d(params, bp + ".value", c, c, 1, 1, 0, rng);
                block.out = Conv2d(params, bp + ".out", c, c, 1, 1, 0, rng);
                block.mlp = PointwiseMlp(params, bp + ".mlp", c, 2 * c, c, rng);
                block.norm2 = ChannelNorm(params, bp + ".norm2", c);
            }
            stage.blocks.push_back(std::move(block));
        }
        stage.norm = ChannelNorm(params, prefix + ".norm", c);
        in_channels = c;
    }
}

Tensor Backbone::run_block(const Block& block, const Tensor& x) const {
    const Tensor n = block.norm1(x);
    if (block.kind == MixerKind::Convolution) {
        return ops::add(x, block.proj(ops::gelu(block.spatial(n))));
    }
    const Tensor pooled = block.reduction > 1 ? ops::avg_pool(n, block.reduction) : n;
    const Tensor attended = ops::attention(block.query(n), block.key(pooled), block.value(pooled));
    const Tensor mixed = ops::add(x, block.out(attended));
    return ops::add(mixed, block.mlp(block.norm2(mixed)));
}

FeaturePyramid Backbone::extract(const Tensor& image) const {
    validate_image(image);
    FeaturePyramid pyramid;
    Tensor x = ops::add(ops::scale(image, 4.0), Tensor::full(image.shape(), -2.0));
    for (int level = kLevels; level >= 1; --level) {
        const Stage& stage = stages_[static_cast<std::size_t>(level - 1)];
        x = stage.embed_norm(stage.embed(x));
        for (const Block& block : stage.blocks) x = run_block(block, x);
        x = stage.norm(x);
        pyramid[static_cast<std::size_t>(level - 1)] = x;
    }
    return pyramid;
}

}  // namespace fosp
