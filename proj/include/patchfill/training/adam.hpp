#pragma once

#include <concepts>
#include <vector>

#include "patchfill/numerics/checkpoint.hpp"
#include "patchfill/numerics/parameter.hpp"

namespace patchfill::training {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list.
template <std::floating_point T>
class Adam {
public:
    Adam(std::vector<numerics::Parameter<T>*> params, AdamConfig config);

    /// Applies one update from the accumulated gradients. Throws
    /// InvariantViolation if any parameter became frozen.
    void step();
    void zero_grad();

    std::size_t steps() const { return t_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<numerics::Parameter<T>*>& params() const { return params_; }

    /// Moments are stored as adam.m.<name> / adam.v.<name> plus adam.t.
    void save_state(numerics::Checkpoint& ckpt) const;
    void load_state(const numerics::Checkpoint& ckpt);

private:
    std::vector<numerics::Parameter<T>*> params_;
    std::vector<numerics::Tensor<T>> m_, v_;
    AdamConfig config_;
    std::size_t t_ = 0;
};

} // namespace patchfill::training
