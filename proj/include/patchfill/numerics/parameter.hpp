#pragma once

#include <concepts>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "patchfill/numerics/tensor.hpp"

namespace patchfill::numerics {

/// A named trainable tensor with its gradient buffer.
template <std::floating_point T>
struct Parameter {
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    // Frozen parameters enter graphs as constants and must never be updated.
    bool frozen = false;

    void zero_grad() { grad.fill(T{0}); }
};

/// Owns parameters in insertion order; addresses stay stable for the store's lifetime.
template <std::floating_point T>
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) noexcept = default;
    ParameterStore& operator=(ParameterStore&&) noexcept = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = params_.size();
        params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
        return *params_.back();
    }

    Parameter<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw LookupError("unknown parameter: " + name);
        return *params_[it->second];
    }
    const Parameter<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw LookupError("unknown parameter: " + name);
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter<T>*> all() const {
        std::vector<Parameter<T>*> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.get());
        return out;
    }

    std::vector<Parameter<T>*> trainable() const {
        std::vector<Parameter<T>*> out;
        for (const auto& p : params_)
            if (!p->frozen) out.push_back(p.get());
        return out;
    }

    void set_frozen(bool frozen) {
        for (auto& p : params_) p->frozen = frozen;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::map<std::string, std::size_t> index_;
};

} // namespace patchfill::numerics
