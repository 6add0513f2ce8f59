#pragma once

#include "fosp/tensor.hpp"

#include <array>

namespace fosp {

inline constexpr int kLevels = 4;

// Spatial divisor of pyramid level i (1-based, coarse to fine): 32, 16, 8, 4.
constexpr int level_divisor(int level) { return 1 << (6 - level); }

// Four feature maps, index 0 is the coarsest (H/32) and index 3 the finest (H/4).
struct FeaturePyramid {
    std::array<Tensor, kLevels> levels;

    const Tensor& operator[](std::size_t i) const { return levels[i]; }
    Tensor& operator[](std::size_t i) { return levels[i]; }
};

// Single-channel pre-sigmoid map tagged with its spatial divisor.
struct LogitsMap {
    Tensor logits;
    int divisor = 0;
};

// Sigmoid map at H/16, values in (0, 1).
struct FocusMap {
    Tensor prob;
};

// Checks an (N,3,H,W) image batch: finite values in [0,1], H and W divisible by 32.
void validate_image(const Tensor& image);

// Checks the scale ladder and finiteness of a pyramid built from an image of size (h, w).
void validate_pyramid(const FeaturePyramid& pyramid, int image_h, int image_w);

}  // namespace fosp
