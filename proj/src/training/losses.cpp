#include "patchfill/training/losses.hpp"

#include <numeric>
#include <vector>

#include "patchfill/error.hpp"
#include "patchfill/numerics/ops.hpp"

namespace patchfill::training {

using namespace numerics;

template <std::floating_point T>
Var<T> mse_loss(Var<T> output, const Tensor<T>& target, const Tensor<T>& weight) {
    if (output.shape() != target.shape() || target.shape() != weight.shape()) {
        throw ContractError("mse_loss shapes differ: output " + shape_string(output.shape()) + ", target " +
                            shape_string(target.shape()) + ", weight " + shape_string(weight.shape()));
    }
    T count = 0;
    for (T w : weight.values()) count += w;
    if (count == T{0}) throw ContractError("mse_loss has no observed position to score");
    Tape<T>& tape = *output.tape;
    Var<T> d = mul(sub(output, tape.constant(target)), tape.constant(weight));
    return scale(sum(mul(d, d)), T{1} / count);
}

template <std::floating_point T>
Var<T> mse_loss(Var<T> output, const Tensor<T>& target) {
    return mse_loss(output, target, Tensor<T>(target.shape(), T{1}));
}

template <std::floating_point T>
Var<T> infonce_loss(Var<T> h1, Var<T> h2, Var<T> w) {
    if (h1.shape() != h2.shape() || h1.value().rank() != 2) {
        throw ContractError("infonce_loss needs two aligned matrices, got " + shape_string(h1.shape()) + " and " +
                            shape_string(h2.shape()));
    }
    const std::size_t n = h1.value().rows();
    if (n < 2) throw ContractError("infonce_loss needs at least two representations to form negatives");
    std::vector<std::size_t> diagonal(n);
    std::iota(diagonal.begin(), diagonal.end(), std::size_t{0});
    const std::span<const std::size_t> targets(diagonal);
    Var<T> forward_dir = cross_entropy(matmul(matmul(h1, w), transpose(h2)), targets);
    Var<T> backward_dir = cross_entropy(matmul(matmul(h2, w), transpose(h1)), targets);
    return scale(add(forward_dir, backward_dir), T{0.5});
}

#define PATCHFILL_INSTANTIATE_LOSSES(T)                                               \
    template Var<T> mse_loss<T>(Var<T>, const Tensor<T>&, const Tensor<T>&);          \
    template Var<T> mse_loss<T>(Var<T>, const Tensor<T>&);                            \
    template Var<T> infonce_loss<T>(Var<T>, Var<T>, Var<T>);

PATCHFILL_INSTANTIATE_LOSSES(float)
PATCHFILL_INSTANTIATE_LOSSES(double)

} // namespace patchfill::training
