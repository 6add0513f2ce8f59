#include "fosp/separation.hpp"

#include "fosp/error.hpp"
#include "fosp/ops.hpp"
#include "fosp/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fosp {

Inpainter::Inpainter(const InpainterConfig& config, Rng& rng) : config_(config) {
    const int e = config.embed_channels;
    if (e <= 0) throw ValidationError("inpainter embed_channels must be positive");
    for (int c : config.channels)
        if (c <= 0) throw ValidationError("inpainter channels must be positive");
    embed_[0] = Conv2d(params_, "inpainter.embed1", 4, e, 7, 4, 3, rng);
    for (int i = 1; i < 4; ++i) {
        embed_[static_cast<std::size_t>(i)] =
            Conv2d(params_, "inpainter.embed" + std::to_string(i + 1), e, e, 3, 2, 1, rng);
    }
    encoder_ = Conv2d(params_, "inpainter.encoder", e, config.channels[0], 3, 1, 1, rng);
    for (int i = 0; i < 3; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const int in = config.channels[idx];
        const int out = config.channels[idx + 1];
        const std::string prefix = "inpainter.dec" + std::to_string(i + 1);
        decoders_[idx].conv_a = Conv2d(params_, prefix + ".conv_a", in, out, 3, 1, 1, rng);
        decoders_[idx].conv_b = Conv2d(params_, prefix + ".conv_b", out, out, 3, 1, 1, rng);
    }
    image_head_ = Conv2d(params_, "inpainter.image_head", config.channels[3], 3, 1, 1, 0, rng);
}

Tensor Inpainter::encode(const Tensor& image, const Tensor& mask) const {
    validate_image(image);
    const Shape& s = image.shape();
    Tensor full_mask;
    if (mask.defined()) {
        if (mask.shape().c != 1 || mask.shape().n != s.n) {
            throw ValidationError("inpainter mask must be (N,1,h,w) with N matching the image, got " +
                                  mask.shape().str());
        }
        full_mask = ops::resize_bilinear(mask, s.h, s.w);
    } else {
        full_mask = Tensor::zeros({s.n, 1, s.h, s.w});
    }
    const Tensor parts[] = {image, full_mask};
    Tensor x = ops::concat_channels(parts);
    for (const Conv2d& conv : embed_) x = ops::gelu(conv(x));
    return encoder_(x);
}

FeaturePyramid Inpainter::decode(const Tensor& latent) const {
    if (latent.shape().c != config_.channels[0]) {
        throw ValidationError("inpainter latent has " + std::to_string(latent.shape().c) + " channels, expected " +
                              std::to_string(config_.channels[0]));
    }
    FeaturePyramid out;
    out[0] = latent;
    for (std::size_t i = 0; i < decoders_.size(); ++i) {
        const Tensor up = ops::upsample_nearest(out[i], 2);
        out[i + 1] = decoders_[i].conv_b(ops::gelu(decoders_[i].conv_a(up)));
    }
    return out;
}

Tensor Inpainter::reconstruct(const FeaturePyramid& decoded, int height, int width) const {
    return ops::sigmoid(ops::resize_bilinear(image_head_(decoded[3]), height, width));
}

ForegroundPyramid separate(const Inpainter& inpainter, const Tensor& image, const Tensor& focus, double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("separation gain must be positive and finite");
    if (!focus.defined()) throw ValidationError("separate: focus map required");
    const FeaturePyramid masked = inpainter.decode(inpainter.encode(image, focus));
    const FeaturePyramid identity = inpainter.decode(inpainter.encode(image, Tensor{}));
    ForegroundPyramid out;
    out.gain = beta;
    for (std::size_t i = 0; i < kLevels; ++i) {
        out.levels[i] = ops::scale(ops::abs(ops::sub(masked[i], identity[i])), beta);
    }
    return out;
}

Tensor coverage_mask(const Tensor& mask, int divisor) {
    const Shape& s = mask.shape();
    if (s.c != 1 || s.h % divisor != 0 || s.w % divisor != 0) {
        throw ValidationError("coverage_mask: mask " + s.str() + " incompatible with divisor " + std::to_string(divisor));
    }
    const Shape out_shape{s.n, 1, s.h / divisor, s.w / divisor};
    std::vector<double> out(out_shape.numel(), 0.0);
    auto v = mask.data();
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                if (v[(static_cast<std::size_t>(n) * s.h + y) * s.w + x] > 0.5)
                    out[(static_cast<std::size_t>(n) * out_shape.h + y / divisor) * out_shape.w + x / divisor] = 1.0;
    return Tensor::from(out_shape, std::move(out));
}

namespace {

// Target = m * background + (1 - m) * image with m the full-resolution resampled mask.
std::vector<double> reconstruction_target(const Tensor& image, const Tensor& background, const Tensor& full_mask) {
    const Shape& s = image.shape();
    std::vector<double> target(s.numel());
    auto iv = image.data();
    auto bv = background.data();
    auto mv = full_mask.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (std::size_t p = 0; p < s.plane(); ++p) {
                const std::size_t i = (static_cast<std::size_t>(n) * s.c + c) * s.plane() + p;
                const double m = mv[static_cast<std::size_t>(n) * s.plane() + p];
                target[i] = m * bv[i] + (1.0 - m) * iv[i];
            }
    return target;
}

}  // namespace

InpainterTrainResult train_inpainter(Inpainter& inpainter, const std::vector<InpainterSample>& dataset,
                                     const InpainterTrainConfig& config,
                                     const std::function<void(int, double)>& on_step) {
    if (dataset.empty()) throw ValidationError("train_inpainter: empty dataset");
    if (config.steps < 0 || config.batch_size <= 0) throw ValidationError("train_inpainter: invalid steps/batch size");
    InpainterTrainResult result;
    if (config.steps == 0) return result;

    AdamW optimizer(inpainter.parameters(), {config.learning_rate, config.weight_decay});
    Rng rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    for (int step = 0; step < config.steps; ++step) {
        std::vector<Tensor> images, backgrounds, masks;
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const InpainterSample& sample = dataset[order[cursor++]];
            images.push_back(sample.image);
            backgrounds.push_back(sample.background);
            Tensor cover = coverage_mask(sample.mask);
            if (unit(rng) < config.blank_fraction) cover = Tensor::zeros(cover.shape());
            masks.push_back(cover);
        }
        const Tensor image = stack_batch(images);
        const Tensor background = stack_batch(backgrounds);
        const Tensor mask = stack_batch(masks);
        const Shape& s = image.shape();
        Tensor full_mask;
        {
            NoGradGuard no_grad;
            full_mask = ops::resize_bilinear(mask, s.h, s.w);
        }
        const std::vector<double> target = reconstruction_target(image, background, full_mask);

        optimizer.zero_grad();
        const Tensor recon = inpainter.reconstruct(inpainter.decode(inpainter.encode(image, mask)), s.h, s.w);
        const Tensor loss = ops::l1(recon, target);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            throw RuntimeError("train_inpainter: non-finite loss at step " + std::to_string(step));
        }
        loss.backward();
        optimizer.step();
        result.loss_curve.push_back(value);
        if (on_step) on_step(step, value);
    }
    inpainter.parameters().zero_grad();
    return result;
}

double masked_reconstruction_error(const Inpainter& inpainter, const std::vector<InpainterSample>& samples) {
    NoGradGuard no_grad;
    double total = 0.0;
    std::size_t count = 0;
    for (const InpainterSample& sample : samples) {
        const Shape& s = sample.image.shape();
        const Tensor cover = coverage_mask(sample.mask);
        const Tensor full_mask = ops::resize_bilinear(cover, s.h, s.w);
        const Tensor recon = inpainter.reconstruct(inpainter.decode(inpainter.encode(sample.image, cover)), s.h, s.w);
        auto rv = recon.data();
        auto bv = sample.background.data();
        auto mv = full_mask.data();
        for (int c = 0; c < s.c; ++c)
            for (std::size_t p = 0; p < s.plane(); ++p) {
                if (mv[p] <= 0.5) continue;
                const std::size_t i = static_cast<std::size_t>(c) * s.plane() + p;
                total += std::abs(rv[i] - bv[i]);
                ++count;
            }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace fosp
