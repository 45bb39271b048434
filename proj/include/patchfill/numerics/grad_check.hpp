#pragma once

#include <concepts>
#include <functional>
#include <span>
#include <string>

#include "patchfill/numerics/tape.hpp"

namespace patchfill::numerics {

template <std::floating_point T>
struct GradCheckResult {
    T max_rel_error = 0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Builds a fresh graph of a scalar loss on the given tape.
template <std::floating_point T>
using LossFn = std::function<Var<T>(Tape<T>&)>;

/// Compares backward() gradients against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) for every element of `params`.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Throws OracleInvalid when two evaluations at the same point disagree.
template <std::floating_point T>
GradCheckResult<T> grad_check(const LossFn<T>& f, std::span<Parameter<T>* const> params, T eps);

} // namespace patchfill::numerics
