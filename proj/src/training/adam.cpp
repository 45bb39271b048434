#include "patchfill/training/adam.hpp"

#include <cmath>

#include "patchfill/error.hpp"

namespace patchfill::training {

template <std::floating_point T>
Adam<T>::Adam(std::vector<numerics::Parameter<T>*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    if (!(config_.lr > 0.0) || !(config_.eps > 0.0) || config_.beta1 < 0.0 || config_.beta1 >= 1.0 ||
        config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
        throw ConfigError("invalid Adam hyperparameters");
    }
    for (auto* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

template <std::floating_point T>
void Adam<T>::step() {
    for (auto* p : params_) {
        if (p->frozen) throw InvariantViolation("optimizer asked to update frozen parameter " + p->name);
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& value = params_[k]->value;
        const auto& grad = params_[k]->grad;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            value[i] = static_cast<T>(value[i] - config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps));
        }
        if (!value.all_finite()) throw NumericError("non-finite value after update of " + params_[k]->name);
    }
}

template <std::floating_point T>
void Adam<T>::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

template <std::floating_point T>
void Adam<T>::save_state(numerics::Checkpoint& ckpt) const {
    ckpt.put_scalar("adam.t", static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        ckpt.put("adam.m." + params_[k]->name, m_[k]);
        ckpt.put("adam.v." + params_[k]->name, v_[k]);
    }
}

template <std::floating_point T>
void Adam<T>::load_state(const numerics::Checkpoint& ckpt) {
    t_ = static_cast<std::size_t>(ckpt.scalar("adam.t"));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto m = ckpt.get<T>("adam.m." + params_[k]->name);
        auto v = ckpt.get<T>("adam.v." + params_[k]->name);
        if (m.shape() != m_[k].shape() || v.shape() != v_[k].shape()) {
            throw LookupError("optimizer state for '" + params_[k]->name + "' has the wrong shape");
        }
        m_[k] = std::move(m);
        v_[k] = std::move(v);
    }
}

template class Adam<float>;
template class Adam<double>;

} // namespace patchfill::training
