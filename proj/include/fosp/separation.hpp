#pragma once

#include "fosp/nn.hpp"
#include "fosp/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace fosp {

struct InpainterConfig {
    // Decoded feature channels per level, coarse to fine. Must match the
    // backbone so foreground features mirror the origin pyramid.
    std::array<int, kLevels> channels{256, 160, 64, 32};
    int embed_channels = 32;
};

// Foreground features: beta * |F_N - F_A| per level, same shapes as the origin pyramid.
struct ForegroundPyramid {
    FeaturePyramid levels;
    double gain = 10.0;
};

// Mask-conditioned encoder-decoder. The same instance serves both separation
// branches, so weight sharing is structural.
//
// Parameter names under "inpainter.": embed1..embed4 (RGB+mask strided stack
// to H/32), encoder (latent conv), dec<i>.conv_a / dec<i>.conv_b for the three
// decoder blocks, image_head (reconstruction head used for pre-training and
// background visualisation).
class Inpainter {
public:
    Inpainter(const InpainterConfig& config, Rng& rng);

    // Latent at H/32. `mask` is (N,1,h,w) at any resolution; it is bilinearly
    // resized to the image size. An undefined mask means the blank (all-zero) mask.
    Tensor encode(const Tensor& image, const Tensor& mask) const;
    // [latent, Dec1(latent), Dec2(.), Dec3(.)] at H/32, H/16, H/8, H/4.
    FeaturePyramid decode(const Tensor& latent) const;
    // Reconstructed image in (0,1) from the finest decoded level.
    Tensor reconstruct(const FeaturePyramid& decoded, int height, int width) const;

    const InpainterConfig& config() const { return config_; }
    const ParameterSet& parameters() const { return params_; }
    ParameterSet& parameters() { return params_; }

private:
    InpainterConfig config_;
    ParameterSet params_;
    std::array<Conv2d, 4> embed_;
    Conv2d encoder_;
    struct DecoderBlock {
        Conv2d conv_a, conv_b;
    };
    std::array<DecoderBlock, 3> decoders_;
    Conv2d image_head_;
};

// Runs the masked and blank branches and returns beta * |difference| per level.
ForegroundPyramid separate(const Inpainter& inpainter, const Tensor& image, const Tensor& focus, double beta);

// Focus-like training mask from a full-resolution binary mask: a cell of the
// H/16 grid is 1 when it contains any smoke pixel.
Tensor coverage_mask(const Tensor& mask, int divisor = 16);

struct InpainterSample {
    Tensor image;       // (1,3,H,W)
    Tensor background;  // (1,3,H,W)
    Tensor mask;        // (1,1,H,W) binary smoke mask
};

struct InpainterTrainConfig {
    int steps = 2000;
    int batch_size = 6;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    // Probability that a sample is trained with the blank mask (identity target).
    double blank_fraction = 0.25;
    std::uint64_t seed = 0;
};

struct InpainterTrainResult {
    std::vector<double> loss_curve;
};

// Fits the inpainter so that the reconstruction equals the background inside
// the mask and the input image outside it. Throws RuntimeError on a
// non-finite loss and ValidationError on an empty dataset.
InpainterTrainResult train_inpainter(Inpainter& inpainter, const std::vector<InpainterSample>& dataset,
                                     const InpainterTrainConfig& config,
                                     const std::function<void(int, double)>& on_step = {});

// Mean |reconstruction - background| over masked pixels of the given samples.
double masked_reconstruction_error(const Inpainter& inpainter, const std::vector<InpainterSample>& samples);

}  // namespace fosp
