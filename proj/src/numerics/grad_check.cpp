#include "patchfill/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace patchfill::numerics {

namespace {

template <std::floating_point T>
T evaluate(const LossFn<T>& f) {
    Tape<T> tape;
    Var<T> loss = f(tape);
    if (loss.value().size() != 1) throw ContractError("grad_check needs a scalar loss");
    return loss.value()[0];
}

} // namespace

template <std::floating_point T>
GradCheckResult<T> grad_check(const LossFn<T>& f, std::span<Parameter<T>* const> params, T eps) {
    if (!(eps > T{0})) throw ConfigError("grad_check: eps must be positive");
    const T first = evaluate(f);
    const T second = evaluate(f);
    if (first != second) {
        throw OracleInvalid("grad_check: loss is not deterministic for fixed parameters");
    }

    for (Parameter<T>* p : params) p->zero_grad();
    {
        Tape<T> tape;
        Var<T> loss = f(tape);
        tape.backward(loss);
    }

    GradCheckResult<T> result;
    for (Parameter<T>* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const T saved = p->value[i];
            p->value[i] = saved + eps;
            const T up = evaluate(f);
            p->value[i] = saved - eps;
            const T down = evaluate(f);
            p->value[i] = saved;
            const T numeric = (up - down) / (T{2} * eps);
            const T analytic = p->grad[i];
            const T denom = std::max({std::abs(analytic), std::abs(numeric), static_cast<T>(1e-8)});
            const T rel = std::abs(analytic - numeric) / denom;
            ++result.checked;
            if (rel > result.max_rel_error || !std::isfinite(rel)) {
                result.max_rel_error = rel;
                result.worst_parameter = p->name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

template GradCheckResult<float> grad_check<float>(const LossFn<float>&, std::span<Parameter<float>* const>, float);
template GradCheckResult<double> grad_check<double>(const LossFn<double>&, std::span<Parameter<double>* const>, double);

} // namespace patchfill::numerics
