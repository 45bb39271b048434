#pragma once

#include <concepts>
#include <map>
#include <string>

#include "patchfill/numerics/tape.hpp"

namespace patchfill::numerics {

/// Records named parameters on a tape at most once each. An optional overlay
/// store shadows the base: names present in the overlay resolve there, which
/// lets an adapter replace a few tensors without touching the base weights.
template <std::floating_point T>
class Binder {
public:
    Binder(Tape<T>& tape, ParameterStore<T>& base, ParameterStore<T>* overlay = nullptr)
        : tape_(tape), base_(base), overlay_(overlay) {}

    Var<T> operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Parameter<T>& p = (overlay_ && overlay_->contains(name)) ? overlay_->get(name) : base_.get(name);
        Var<T> v = tape_.parameter(p);
        bound_.emplace(name, v);
        return v;
    }

    Var<T> constant(Tensor<T> value) { return tape_.constant(std::move(value)); }

    Tape<T>& tape() { return tape_; }
    ParameterStore<T>& base() { return base_; }

private:
    Tape<T>& tape_;
    ParameterStore<T>& base_;
    ParameterStore<T>* overlay_;
    std::map<std::string, Var<T>> bound_;
};

} // namespace patchfill::numerics
