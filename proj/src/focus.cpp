#include "fosp/focus.hpp"

#include "fosp/error.hpp"
#include "fosp/ops.hpp"

#include <cmath>
#include <string>

namespace fosp {

namespace {

void require_spatial(const Tensor& t, int h, int w, const std::string& what) {
    if (t.shape().h != h || t.shape().w != w) {
        throw ValidationError(what + " has shape " + t.shape().str() + ", expected spatial " + std::to_string(h) +
                              "x" + std::to_string(w));
    }
}

void require_finite(const Tensor& t, const char* what) {
    for (double v : t.data())
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + " contains non-finite values");
}

}  // namespace

Tensor query_guide(const Tensor& feature, const Tensor& logits) {
    return ops::query_guide(feature, ops::sigmoid(logits));
}

FocusModule::FocusModule(const std::array<int, kLevels>& channels, ParameterSet& params, Rng& rng)
    : head_coarse_(params, "focus.head_coarse", channels[0], 1, 3, 1, 1, rng),
      lmc_(params, "focus.lmc", channels[0] + channels[1], 1, 3, 1, 1, rng),
      hmc_(params, "focus.hmc", channels[3] + channels[2], 1, 3, 1, 1, rng),
      head_fine_(params, "focus.head_fine", channels[3], 1, 3, 1, 1, rng),
      merge_(params, "focus.merge", 2, 1, 1, 1, 0, rng, /*zero_bias=*/true) {}

std::pair<LogitsMap, LogitsMap> FocusModule::low_mid_cascade(const Tensor& f1, const Tensor& f2) const {
    require_spatial(f2, 2 * f1.shape().h, 2 * f1.shape().w, "low-mid cascade: f2 (H/16)");
    const Tensor g1 = head_coarse_(f1);
    const Tensor guided = query_guide(f1, g1);
    const Tensor up = ops::resize_bilinear(guided, f2.shape().h, f2.shape().w);
    const Tensor parts[] = {up, f2};
    const Tensor g2 = lmc_(ops::concat_channels(parts));
    return {LogitsMap{g1, 32}, LogitsMap{g2, 16}};
}

std::pair<LogitsMap, LogitsMap> FocusModule::high_mid_cascade(const Tensor& f4, const Tensor& f3) const {
    require_spatial(f4, 2 * f3.shape().h, 2 * f3.shape().w, "high-mid cascade: f4 (H/4)");
    const Tensor g4 = head_fine_(f4);
    const Tensor guided = query_guide(f4, g4);
    const Tensor down = ops::avg_pool(guided, 2);
    const Tensor parts[] = {down, f3};
    const Tensor g3 = hmc_(ops::concat_channels(parts));
    return {LogitsMap{g4, 4}, LogitsMap{g3, 8}};
}

FocusMap FocusModule::make_focus_map(const LogitsMap& g2, const LogitsMap& g3) const {
    if (g2.divisor != 16 || g3.divisor != 8) {
        throw ValidationError("make_focus_map expects logits at H/16 and H/8, got H/" + std::to_string(g2.divisor) +
                              " and H/" + std::to_string(g3.divisor));
    }
    require_spatial(g3.logits, 2 * g2.logits.shape().h, 2 * g2.logits.shape().w, "focus map: g3 (H/8)");
    require_finite(g2.logits, "g2 logits");
    require_finite(g3.logits, "g3 logits");
    const Tensor g3_mid = ops::resize_bilinear(g3.logits, g2.logits.shape().h, g2.logits.shape().w);
    const Tensor parts[] = {g2.logits, g3_mid};
    return FocusMap{ops::sigmoid(merge_(ops::concat_channels(parts)))};
}

FocusModule::Output FocusModule::forward(const FeaturePyramid& pyramid) const {
    auto [g1, g2] = low_mid_cascade(pyramid[0], pyramid[1]);
    auto [g4, g3] = high_mid_cascade(pyramid[3], pyramid[2]);
    Output out{make_focus_map(g2, g3), {g1, g2, g3, g4}};
    return out;
}

}  // namespace fosp
