#pragma once

#include "fosp/tensor.hpp"

#include <span>
#include <vector>

namespace fosp::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);

// x * q + x with q of shape (N,1,H,W) broadcast over the channels of x.
Tensor query_guide(const Tensor& x, const Tensor& q);
// x * q with q of shape (N,1,H,W) broadcast over channels.
Tensor mul_channel_broadcast(const Tensor& x, const Tensor& q);

// Normalises each pixel over its channels, then applies a per-channel affine
// gamma, beta of shape (1,C,1,1).
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// weight (Cout, Cin, k, k); bias (1, Cout, 1, 1) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Half-pixel-centre bilinear resampling without antialiasing. An exact 2x
// reduction therefore averages 2x2 blocks.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor avg_pool(const Tensor& x, int kernel);
Tensor concat_channels(std::span<const Tensor> parts);

// Scaled dot-product attention over spatial positions. q is (N,C,H,W); k and v
// share a (possibly reduced) spatial size. Output has the shape of q.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean binary cross-entropy of probabilities against constant targets.
// Probabilities are clamped to [eps, 1-eps]; the clamp passes no gradient.
Tensor bce(const Tensor& prob, std::span<const double> target, double eps = 1e-7);
// Mean absolute error against constant targets.
Tensor l1(const Tensor& x, std::span<const double> target);

}  // namespace fosp::ops
