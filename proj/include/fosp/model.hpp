#pragma once

#include "fosp/backbone.hpp"
#include "fosp/focus.hpp"
#include "fosp/fusion.hpp"
#include "fosp/separation.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

namespace fosp {

// Module switches matching the ablation rows:
//   (a) baseline            all off
//   (b) + focus loss        focus_loss
//   (c) + focus module      focus_loss, focus_module
//   (d) + separation        ... , separation (foreground added to origin)
//   (e) + domain fusion     all on (foreground concatenated)
struct AblationSwitches {
    bool focus_loss = true;
    bool focus_module = true;
    bool separation = true;
    bool domain_fusion = true;

    bool needs_focus_branch() const { return focus_loss || focus_module; }
    static AblationSwitches row(char label);
    std::string row_label() const;  // "a".."e", or "custom"
};

struct ModelConfig {
    BackboneConfig backbone;
    int inpainter_embed_channels = 32;
    int fuse_channels = 128;
    double beta = 10.0;
    AblationSwitches switches;
};

// Full pipeline: backbone -> focus -> separation -> fusion -> decode, with
// disabled modules absent (no parameters, no outputs).
class FospModel {
public:
    FospModel(const ModelConfig& config, std::uint64_t seed);

    struct Output {
        FeaturePyramid origin;                       // backbone features (before FM enhancement)
        std::optional<FocusModule::Output> focus;    // when the focus branch exists
        std::optional<ForegroundPyramid> foreground;  // when separation is on
        Prediction prediction;
    };

    Output forward(const Tensor& images) const;

    const ModelConfig& config() const { return config_; }
    // Every parameter, including a frozen inpainter.
    const ParameterSet& parameters() const { return all_; }
    ParameterSet& parameters() { return all_; }
    // Parameters the optimiser updates.
    ParameterSet trainable(bool finetune_inpainter) const;

    Inpainter* inpainter() { return inpainter_.get(); }
    const Inpainter* inpainter() const { return inpainter_.get(); }
    const FocusModule* focus() const { return focus_.get(); }

private:
    ModelConfig config_;
    ParameterSet core_;  // backbone, focus, fusion
    ParameterSet all_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<FocusModule> focus_;
    std::unique_ptr<Inpainter> inpainter_;
    std::unique_ptr<DomainFusion> fusion_;
};

}  // namespace fosp
