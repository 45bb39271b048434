#pragma once

#include <concepts>

#include "patchfill/numerics/tape.hpp"

namespace patchfill::training {

using numerics::Tensor;
using numerics::Var;

/// Mean of (output - target)^2 over positions where `weight` is 1. Throws
/// ContractError on shape mismatch or when no position is selected.
template <std::floating_point T>
Var<T> mse_loss(Var<T> output, const Tensor<T>& target, const Tensor<T>& weight);

/// Unweighted mean squared error.
template <std::floating_point T>
Var<T> mse_loss(Var<T> output, const Tensor<T>& target);

/// Symmetric bilinear InfoNCE over aligned rows: row i of h1 and row i of h2
/// are a positive pair and every other row of the opposite view is a
/// negative. Scores are q^T W k with no temperature. Throws ContractError for
/// fewer than two rows.
template <std::floating_point T>
Var<T> infonce_loss(Var<T> h1, Var<T> h2, Var<T> w);

} // namespace patchfill::training
