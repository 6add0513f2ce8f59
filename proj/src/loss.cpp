#include "fosp/loss.hpp"

#include "fosp/error.hpp"
#include "fosp/ops.hpp"

#include <cmath>
#include <string>

namespace fosp {

void LossWeights::validate() const {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError(std::string("loss weight ") + name + " must be finite and >= 0");
    };
    check(focus_map, "focus_map");
    for (double v : levels) check(v, "levels");
    check(base, "base");
}

Tensor bce(const Tensor& prob, const Tensor& target) {
    if (prob.shape() != target.shape()) {
        throw ValidationError("bce: shape mismatch " + prob.shape().str() + " vs " + target.shape().str());
    }
    return ops::bce(prob, target.data());
}

Tensor resample_target(const Tensor& mask, int h, int w, double threshold) {
    const Shape& s = mask.shape();
    if (s.h == h && s.w == w) return mask.detach();
    if (h <= 0 || w <= 0 || s.h % h != 0 || s.w % w != 0) {
        throw ValidationError("resample_target: " + s.str() + " cannot be area-reduced to " + std::to_string(h) + "x" +
                              std::to_string(w));
    }
    const int fy = s.h / h;
    const int fx = s.w / w;
    const Shape out_shape{s.n, s.c, h, w};
    std::vector<double> sums(out_shape.numel(), 0.0);
    auto v = mask.data();
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                sums[p * out_shape.plane() + static_cast<std::size_t>(y / fy) * w + x / fx] +=
                    v[p * s.plane() + static_cast<std::size_t>(y) * s.w + x];
    const double area = static_cast<double>(fy * fx);
    for (double& e : sums) e = (e > 0.0 && e / area >= threshold) ? 1.0 : 0.0;
    return Tensor::from(out_shape, std::move(sums));
}

namespace {

Tensor weighted_bce(const Tensor& prob, const Tensor& gt, double weight, double threshold, double* record) {
    const Tensor target = resample_target(gt, prob.shape().h, prob.shape().w, threshold);
    Tensor term = ops::scale(bce(prob, target), weight);
    if (record) *record = term.item();
    return term;
}

}  // namespace

Tensor focus_loss(const FocusMap& focus, const std::array<LogitsMap, kLevels>& logits, const Tensor& gt,
                  const LossWeights& weights, LossBreakdown* breakdown, double target_threshold) {
    weights.validate();
    Tensor total = weighted_bce(focus.prob, gt, weights.focus_map, target_threshold,
                                breakdown ? &breakdown->focus_map : nullptr);
    for (std::size_t i = 0; i < kLevels; ++i) {
        const Tensor term = weighted_bce(ops::sigmoid(logits[i].logits), gt, weights.levels[i], target_threshold,
                                         breakdown ? &breakdown->levels[i] : nullptr);
        total = ops::add(total, term);
    }
    if (breakdown) breakdown->focus = total.item();
    return total;
}

Tensor total_loss(const Prediction& prediction, const FocusMap* focus, const std::array<LogitsMap, kLevels>* logits,
                  const Tensor& gt, const LossWeights& weights, LossBreakdown* breakdown, double target_threshold) {
    weights.validate();
    if ((focus == nullptr) != (logits == nullptr)) {
        throw ValidationError("total_loss: focus map and logits must be given together");
    }
    Tensor total = weighted_bce(prediction.prob, gt, weights.base, target_threshold,
                                breakdown ? &breakdown->base : nullptr);
    if (focus) {
        total = ops::add(focus_loss(*focus, *logits, gt, weights, breakdown, target_threshold), total);
    } else if (breakdown) {
        breakdown->focus = 0.0;
    }
    if (breakdown) breakdown->total = total.item();
    return total;
}

}  // namespace fosp
