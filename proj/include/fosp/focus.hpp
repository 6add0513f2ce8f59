#pragma once

#include "fosp/nn.hpp"
#include "fosp/types.hpp"

#include <array>

namespace fosp {

// Bidirectional cascade generator. The low-mid arm guides the coarsest level
// toward H/16, the high-mid arm guides the finest level toward H/8, and a
// pointwise fusion of the two arms gives the focus map at H/16.
//
// Parameter names under "focus.": head_coarse, lmc, hmc, head_fine (3x3 convs
// producing one logit channel) and merge (1x1, 2 -> 1, zero bias).
class FocusModule {
public:
    // channels: pyramid channel counts coarse to fine.
    FocusModule(const std::array<int, kLevels>& channels, ParameterSet& params, Rng& rng);

    struct Output {
        FocusMap focus;
        std::array<LogitsMap, kLevels> logits;  // divisors 32, 16, 8, 4
    };

    // (g1, g2) from (f1 at H/32, f2 at H/16).
    std::pair<LogitsMap, LogitsMap> low_mid_cascade(const Tensor& f1, const Tensor& f2) const;
    // (g4, g3) from (f4 at H/4, f3 at H/8).
    std::pair<LogitsMap, LogitsMap> high_mid_cascade(const Tensor& f4, const Tensor& f3) const;
    FocusMap make_focus_map(const LogitsMap& g2, const LogitsMap& g3) const;
    Output forward(const FeaturePyramid& pyramid) const;

    const Conv2d& head_coarse() const { return head_coarse_; }
    const Conv2d& lmc() const { return lmc_; }
    const Conv2d& hmc() const { return hmc_; }
    const Conv2d& head_fine() const { return head_fine_; }
    const Conv2d& merge() const { return merge_; }

private:
    Conv2d head_coarse_;
    Conv2d lmc_;
    Conv2d hmc_;
    Conv2d head_fine_;
    Conv2d merge_;
};

// Q * F + F with Q = sigmoid(logits), broadcast over channels.
Tensor query_guide(const Tensor& feature, const Tensor& logits);

}  // namespace fosp
