#pragma once

#include "fosp/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fosp {

using Rng = std::mt19937_64;

// Ordered collection of named leaf tensors. Names are hierarchical and
// dot-separated ("backbone.stage1.embed.weight") and stable across runs; they
// are the keys used by checkpoints.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor value;
    };

    Tensor add(const std::string& name, Tensor value);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    bool empty() const { return entries_.empty(); }

    void zero_grad();
    void set_requires_grad(bool on);
    // Appends every entry of `other` (names already carry their prefixes).
    void extend(const ParameterSet& other);

private:
    std::vector<Entry> entries_;
};

// Convolution with fan-in scaled uniform initialisation U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels, int kernel,
           int stride, int pad, Rng& rng, bool zero_bias = false);

    Tensor operator()(const Tensor& x) const;

    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }
    int in_channels() const { return in_; }
    int out_channels() const { return out_; }

private:
    Tensor weight_;
    Tensor bias_;
    int in_ = 0;
    int out_ = 0;
    int stride_ = 1;
    int pad_ = 0;
};

// Per-pixel LayerNorm over channels; gamma starts at 1, beta at 0.
class ChannelNorm {
public:
    ChannelNorm() = default;
    ChannelNorm(ParameterSet& params, const std::string& name, int channels);
    Tensor operator()(const Tensor& x) const;
    bool defined() const { return gamma_.defined(); }

private:
    Tensor gamma_;
    Tensor beta_;
};

// Two pointwise convolutions with GELU between: a per-position MLP.
class PointwiseMlp {
public:
    PointwiseMlp() = default;
    PointwiseMlp(ParameterSet& params, const std::string& name, int in_channels, int hidden, int out_channels,
                 Rng& rng);
    Tensor operator()(const Tensor& x) const;
    int in_channels() const { return first_.in_channels(); }

private:
    Conv2d first_;
    Conv2d second_;
};

}  // namespace fosp
