#pragma once

#include "fosp/nn.hpp"

#include <cstdint>
#include <vector>

namespace fosp {

struct AdamWConfig {
    double learning_rate = 6e-5;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with decoupled weight decay. Moment buffers are keyed by the position
// of each entry in the parameter set handed to the constructor.
class AdamW {
public:
    AdamW(ParameterSet params, AdamWConfig config);

    // Applies one update from the gradients currently held by the parameters.
    // Parameters without a gradient are left untouched.
    void step();
    void zero_grad() { params_.zero_grad(); }

    std::int64_t step_count() const { return step_; }
    const ParameterSet& parameters() const { return params_; }

    // Flat moment buffers, for checkpointing.
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void restore(std::int64_t step, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

private:
    ParameterSet params_;
    AdamWConfig config_;
    std::int64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace fosp
