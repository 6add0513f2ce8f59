#include "fosp/nn.hpp"

#include "fosp/error.hpp"
#include "fosp/ops.hpp"

#include <cmath>

namespace fosp {

Tensor ParameterSet::add(const std::string& name, Tensor value) {
    if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
    value.node()->requires_grad = true;
    entries_.push_back({name, value});
    return value;
}

const Tensor& ParameterSet::get(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e.value;
    throw ValidationError("unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.numel();
    return total;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
    for (auto& e : entries_) e.value.node()->requires_grad = on;
}

void ParameterSet::extend(const ParameterSet& other) {
    for (const auto& e : other.entries_) {
        if (contains(e.name)) throw ValidationError("duplicate parameter name: " + e.name);
        entries_.push_back(e);
    }
}

Conv2d::Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels, int kernel,
               int stride, int pad, Rng& rng, bool zero_bias)
    : in_(in_channels), out_(out_channels), stride_(stride), pad_(pad) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0) {
        throw ValidationError("conv " + name + ": channel counts, kernel and stride must be positive");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Shape ws{out_channels, in_channels, kernel, kernel};
    std::vector<double> w(ws.numel());
    for (double& v : w) v = dist(rng);
    std::vector<double> b(static_cast<std::size_t>(out_channels), 0.0);
    if (!zero_bias)
        for (double& v : b) v = dist(rng);
    weight_ = params.add(name + ".weight", Tensor::from(ws, std::move(w)));
    bias_ = params.add(name + ".bias", Tensor::from({1, out_channels, 1, 1}, std::move(b)));
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight_, bias_, stride_, pad_); }

PointwiseMlp::PointwiseMlp(ParameterSet& params, const std::string& name, int in_channels, int hidden,
                           int out_channels, Rng& rng)
    : first_(params, name + ".fc1", in_channels, hidden, 1, 1, 0, rng),
      second_(params, name + ".fc2", hidden, out_channels, 1, 1, 0, rng) {}

Tensor PointwiseMlp::operator()(const Tensor& x) const { return second_(ops::gelu(first_(x))); }

ChannelNorm::ChannelNorm(ParameterSet& params, const std::string& name, int channels) {
    if (channels <= 0) throw ValidationError("ChannelNorm " + name + ": channels must be positive");
    gamma_ = params.add(name + ".weight", Tensor::full({1, channels, 1, 1}, 1.0, true));
    beta_ = params.add(name + ".bias", Tensor::zeros({1, channels, 1, 1}, true));
}

Tensor ChannelNorm::operator()(const Tensor& x) const { return ops::layer_norm_channels(x, gamma_, beta_); }

}  // namespace fosp
