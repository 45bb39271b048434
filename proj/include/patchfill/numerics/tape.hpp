#pragma once

#include <concepts>
#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "patchfill/numerics/parameter.hpp"
#include "patchfill/numerics/tensor.hpp"

namespace patchfill::numerics {

template <std::floating_point T>
class Tape;

/// Handle to a node recorded on a Tape.
template <std::floating_point T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

/// Define-by-run reverse-mode autodiff record. Nodes are appended in
/// evaluation order, which is a topological order of the graph; backward walks
/// it once in reverse. A tape is confined to one thread and supports exactly one
/// backward pass.
template <std::floating_point T>
class Tape {
public:
    // Receives the node's output gradient and output value; accumulates into
    // parents through grad_of().
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad, const Tensor<T>& value)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, nullptr); }

    /// Frozen parameters are recorded as constants.
    Var<T> parameter(Parameter<T>& p) { return push(p.value, !p.frozen, p.frozen ? nullptr : &p, nullptr); }

    /// Used by ops: records an output depending on `parents`.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
        return record(std::move(value), std::vector<Var<T>>(parents), std::move(fn));
    }
    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
        return push(std::move(value), needs, nullptr, needs ? std::move(fn) : nullptr);
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

    /// Gradient buffer of a node, allocated on first use. Returns nullptr for
    /// nodes that do not require gradients so ops can skip that work.
    Tensor<T>* grad_of(Var<T> v) {
        Node& n = nodes_.at(v.id);
        if (!n.requires_grad) return nullptr;
        if (n.grad.size() == 0) n.grad = Tensor<T>(n.value.shape());
        return &n.grad;
    }

    /// Gradient accumulated for a node after backward(); empty when none flowed.
    const Tensor<T>& grad(Var<T> v) const { return nodes_.at(v.id).grad; }

    void backward(Var<T> loss);

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Parameter<T>* param = nullptr;
        BackwardFn backward;
    };

    Var<T> push(Tensor<T> value, bool requires_grad, Parameter<T>* param, BackwardFn fn) {
        if (consumed_) throw ContractError("tape already consumed by backward; record a new forward pass");
        nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, param, std::move(fn)});
        return Var<T>{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;
    bool consumed_ = false;
};

template <std::floating_point T>
void Tape<T>::backward(Var<T> loss) {
    if (consumed_) throw ContractError("backward called twice without a new forward pass");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_string(root.value.shape()));
    }
    if (!root.value.all_finite()) throw NumericError("loss is not finite");
    consumed_ = true;
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, n.grad, n.value);
        if (n.param != nullptr) {
            auto& dst = n.param->grad;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
            if (!dst.all_finite()) throw NumericError("non-finite gradient for parameter " + n.param->name);
        }
    }
}

} // namespace patchfill::numerics
