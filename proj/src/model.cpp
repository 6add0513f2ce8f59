#include "fosp/model.hpp"

#include "fosp/error.hpp"
#include "fosp/random.hpp"

namespace fosp {

AblationSwitches AblationSwitches::row(char label) {
    switch (label) {
        case 'a': return {false, false, false, false};
        case 'b': return {true, false, false, false};
        case 'c': return {true, true, false, false};
        case 'd': return {true, true, true, false};
        case 'e': return {true, true, true, true};
        default: throw ValidationError(std::string("unknown ablation row '") + label + "' (expected a-e)");
    }
}

std::string AblationSwitches::row_label() const {
    for (char label : {'a', 'b', 'c', 'd', 'e'}) {
        const AblationSwitches r = row(label);
        if (r.focus_loss == focus_loss && r.focus_module == focus_module && r.separation == separation &&
            r.domain_fusion == domain_fusion) {
            return std::string(1, label);
        }
    }
    return "custom";
}

FospModel::FospModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    if (!(config.beta > 0.0)) throw ValidationError("separation gain beta must be positive");
    const AblationSwitches& sw = config.switches;
    // Each module draws from its own stream so that gating one module leaves
    // the initialisation of the others unchanged.
    Rng backbone_rng(mix_seed(seed, 1));
    backbone_ = std::make_unique<Backbone>(config.backbone, core_, backbone_rng);
    if (sw.needs_focus_branch()) {
        Rng focus_rng(mix_seed(seed, 2));
        focus_ = std::make_unique<FocusModule>(config.backbone.channels, core_, focus_rng);
    }
    if (sw.separation) {
        Rng inpainter_rng(mix_seed(seed, 3));
        inpainter_ = std::make_unique<Inpainter>(
            InpainterConfig{config.backbone.channels, config.inpainter_embed_channels}, inpainter_rng);
    }
    FusionConfig fusion_config;
    fusion_config.channels = config.backbone.channels;
    fusion_config.fuse_channels = config.fuse_channels;
    fusion_config.foreground = !sw.separation ? ForegroundMode::None
                               : sw.domain_fusion ? ForegroundMode::Concat
                                                  : ForegroundMode::Add;
    Rng fusion_rng(mix_seed(seed, 4));
    fusion_ = std::make_unique<DomainFusion>(fusion_config, core_, fusion_rng);

    all_ = core_;
    if (inpainter_) all_.extend(inpainter_->parameters());
}

ParameterSet FospModel::trainable(bool finetune_inpainter) const {
    ParameterSet out = core_;
    if (inpainter_ && finetune_inpainter) out.extend(inpainter_->parameters());
    return out;
}

FospModel::Output FospModel::forward(const Tensor& images) const {
    const AblationSwitches& sw = config_.switches;
    Output out;
    out.origin = backbone_->extract(images);
    if (focus_) out.focus = focus_->forward(out.origin);

    FeaturePyramid origin = out.origin;
    if (sw.focus_module) origin = enhance_origin(origin, out.focus->focus);

    if (sw.separation) {
        const Shape& s = images.shape();
        // Without the focus module the whole frame is treated as the region to inpaint.
        const Tensor fm = sw.focus_module ? out.focus->focus.prob
                                          : Tensor::full({s.n, 1, s.h / 16, s.w / 16}, 1.0);
        out.foreground = separate(*inpainter_, images, fm, config_.beta);
    }
    const Tensor fused = fusion_->fuse(origin, out.foreground ? &*out.foreground : nullptr);
    out.prediction = fusion_->decode(fused);
    return out;
}

}  // namespace fosp
