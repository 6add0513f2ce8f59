#include "fosp/optim.hpp"

#include "fosp/error.hpp"

#include <cmath>

namespace fosp {

AdamW::AdamW(ParameterSet params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    if (!(config_.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (config_.weight_decay < 0.0) throw ValidationError("weight decay must be non-negative");
    for (const auto& e : params_.entries()) {
        m_.emplace_back(e.value.numel(), 0.0);
        v_.emplace_back(e.value.numel(), 0.0);
    }
}

void AdamW::step() {
    ++step_;
    const double lr = config_.learning_rate;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    auto& entries = params_.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
        Tensor& t = entries[p].value;
        if (!t.has_grad()) continue;
        auto value = t.mutable_data();
        auto grad = t.grad();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            value[i] -= lr * config_.weight_decay * value[i];
            value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        }
    }
}

void AdamW::restore(std::int64_t step, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw ValidationError("optimizer state size mismatch");
    for (std::size_t p = 0; p < m.size(); ++p) {
        if (m[p].size() != m_[p].size() || v[p].size() != v_[p].size()) {
            throw ValidationError("optimizer state shape mismatch for " + params_.entries()[p].name);
        }
    }
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace fosp
