#pragma once

#include "fosp/data.hpp"
#include "fosp/image_io.hpp"
#include "fosp/tensor.hpp"

#include <string>

namespace fosp {

// Image with the focus map tinted blue and, when `gt` is defined, the ground
// truth tinted red. `focus` is bilinearly resized to the image size.
Image8 focus_overlay(const Tensor& image, const Tensor& focus, const Tensor& gt = Tensor());

// Channel-mean magnitude of a (1,C,h,w) feature map, normalised by its
// maximum, colour-mapped and nearest-upsampled to height x width.
Image8 feature_heatmap(const Tensor& feature, int height, int width);

// Static bar chart of a smoke-ratio histogram with the bucket edges marked.
std::string histogram_svg(const DeltaHistogram& histogram, const std::string& title);

}  // namespace fosp
