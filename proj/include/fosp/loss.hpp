#pragma once

#include "fosp/fusion.hpp"
#include "fosp/tensor.hpp"
#include "fosp/types.hpp"

#include <array>

namespace fosp {

struct LossWeights {
    double focus_map = 0.1;                     // lambda_f
    std::array<double, kLevels> levels{0.1, 0.1, 0.1, 0.1};  // lambda_1..4, logits g1..g4
    double base = 0.5;                          // lambda_b

    void validate() const;
};

// Weighted terms of the most recent loss evaluation.
struct LossBreakdown {
    double focus_map = 0.0;
    std::array<double, kLevels> levels{};
    double base = 0.0;
    double focus = 0.0;
    double total = 0.0;
};

// Mean BCE of probabilities against a constant binary target of the same shape.
Tensor bce(const Tensor& prob, const Tensor& target);

// Area-average a full-resolution binary mask down to (h, w), then binarise: a
// cell is positive when it holds any smoke and its fraction is >= threshold.
// The default 0 marks every cell that touches smoke.
Tensor resample_target(const Tensor& mask, int h, int w, double threshold = 0.0);

// lambda_f * BCE(FM, Y) + sum_i lambda_i * BCE(sigmoid(G_i), Y).
Tensor focus_loss(const FocusMap& focus, const std::array<LogitsMap, kLevels>& logits, const Tensor& gt,
                  const LossWeights& weights, LossBreakdown* breakdown = nullptr, double target_threshold = 0.0);

// focus_loss + lambda_b * BCE(P, Y). Without focus outputs (both null) the
// focus term is absent and only the base term remains.
Tensor total_loss(const Prediction& prediction, const FocusMap* focus, const std::array<LogitsMap, kLevels>* logits,
                  const Tensor& gt, const LossWeights& weights, LossBreakdown* breakdown = nullptr,
                  double target_threshold = 0.0);

}  // namespace fosp
