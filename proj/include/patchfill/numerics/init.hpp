#pragma once

#include <cmath>
#include <concepts>

#include "patchfill/numerics/tensor.hpp"
#include "patchfill/random.hpp"

namespace patchfill::numerics {

/// fan_in x fan_out matrix, U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <std::floating_point T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t({fan_in, fan_out});
    for (auto& v : t.values()) v = static_cast<T>(uniform_real(rng, -a, a));
    return t;
}

template <std::floating_point T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(stddev * standard_normal(rng));
    return t;
}

} // namespace patchfill::numerics
