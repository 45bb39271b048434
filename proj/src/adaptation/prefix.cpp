#include "patchfill/adaptation/prefix.hpp"

#include <algorithm>

#include "patchfill/error.hpp"
#include "patchfill/numerics/init.hpp"
#include "patchfill/numerics/ops.hpp"

namespace patchfill::adaptation {

using namespace numerics;

template <std::floating_point T>
void add_prefix_parameters(ParameterStore<T>& store, const BackboneConfig& base, Rng& rng) {
    const std::size_t D = base.width, L2 = 2 * base.layers;
    store.add("prefix.p", normal_tensor<T>({L2, D}, 0.02, rng));
    store.add("prefix.dt.fc1.w", xavier_uniform<T>(D, D, rng));
    store.add("prefix.dt.fc1.b", Tensor<T>({D}));
    store.add("prefix.dt.fc2.w", xavier_uniform<T>(D, L2 * D, rng));
    store.add("prefix.dt.fc2.b", Tensor<T>({L2 * D}));
}

template <std::floating_point T>
PrefixBundle<T> make_prefix_bundle(const Model<T>& base, const PrefixConfig& config, std::uint64_t seed) {
    PrefixBundle<T> b;
    b.base = base.config;
    b.config = config;
    Rng rng(seed);
    add_prefix_parameters(b.params, base.config, rng);
    if (config.train_domain) b.params.add("embed.domain", base.params.get("embed.domain").value);
    return b;
}

template <std::floating_point T>
Var<T> domain_transfer(Binder<T>& bind, Var<T> k) {
    Var<T> h = gelu(linear(k, bind("prefix.dt.fc1.w"), bind("prefix.dt.fc1.b")));
    return linear(h, bind("prefix.dt.fc2.w"), bind("prefix.dt.fc2.b"));
}

template <std::floating_point T>
PrefixKV<T> combine_prefix(Var<T> p, Var<T> k_hat, double beta) {
    const Shape& s = p.shape();
    if (s.size() != 2 || s[0] % 2 != 0 || s[0] == 0 || k_hat.shape() != s) {
        throw ConfigError("prefix " + shape_string(s) + " and transferred domain " + shape_string(k_hat.shape()) +
                          " must both be (2 * layers) x width");
    }
    Var<T> sum = add(p, scale(k_hat, static_cast<T>(beta)));
    PrefixKV<T> out;
    for (std::size_t l = 0; l < s[0] / 2; ++l) {
        out.push_back({slice(sum, 0, 2 * l, 2 * l + 1), slice(sum, 0, 2 * l + 1, 2 * l + 2)});
    }
    return out;
}

template <std::floating_point T>
PrefixFn<T> domain_prefix_fn(const BackboneConfig& base, double beta) {
    const auto embed = base.embedding();
    const std::size_t D = base.width, layers = base.layers;
    return [embed, D, layers, beta](Binder<T>& bind, std::span<const data::SeriesWindow> inputs) {
        std::vector<std::size_t> rows;
        for (const auto& w : inputs) rows.push_back(embed.domain_row(w.domain));
        const bool shared = std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return r == rows[0]; });
        if (shared) rows.resize(1);
        Var<T> k = gather_rows(bind("embed.domain"), std::span<const std::size_t>(rows));
        Var<T> k_hat = domain_transfer(bind, k);
        Var<T> p = bind("prefix.p");
        if (shared) return combine_prefix(p, reshape(k_hat, Shape{2 * layers, D}), beta);
        PrefixKV<T> out;
        auto part = [&](std::size_t r) {
            Var<T> kr = scale(slice(k_hat, 1, r * D, (r + 1) * D), static_cast<T>(beta));
            return add_bias(kr, reshape(slice(p, 0, r, r + 1), Shape{D}));
        };
        for (std::size_t l = 0; l < layers; ++l) out.push_back({part(2 * l), part(2 * l + 1)});
        return out;
    };
}

template <std::floating_point T>
FrozenGuard<T>::FrozenGuard(const ParameterStore<T>& store) : store_(store) {
    for (const auto* p : store.all()) values_.push_back(p->value);
}

template <std::floating_point T>
void FrozenGuard<T>::verify() const {
    const auto params = store_.all();
    if (params.size() != values_.size()) throw InvariantViolation("frozen parameter set changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!(params[i]->value == values_[i])) throw InvariantViolation("frozen parameter modified: " + params[i]->name);
    }
}

template <std::floating_point T>
training::TrainResult finetune_prefix(Model<T>& base, PrefixBundle<T>& bundle,
                                      std::vector<data::SeriesWindow> train, std::vector<data::SeriesWindow> val,
                                      const training::TrainConfig& config, std::ostream* log) {
    backbone::check_compatible(base.config, bundle.base);
    FrozenGuard<T> guard(base.params);
    training::TrainerHooks<T> hooks;
    hooks.overlay = &bundle.params;
    hooks.prefix = domain_prefix_fn<T>(base.config, bundle.config.beta);
    training::Trainer<T> trainer(base, std::move(train), std::move(val), config, log, hooks);
    training::TrainResult result = trainer.run();
    guard.verify();
    return result;
}

template <std::floating_point T>
Checkpoint to_checkpoint(const PrefixBundle<T>& bundle) {
    Checkpoint ckpt;
    backbone::write_config(ckpt, bundle.base);
    ckpt.put_text("meta.adapter", "domain_prefix");
    ckpt.put_scalar("meta.prefix.beta", bundle.config.beta);
    ckpt.put_scalar("meta.prefix.train_domain", bundle.config.train_domain ? 1.0 : 0.0);
    ckpt.put_parameters(bundle.params);
    return ckpt;
}

template <std::floating_point T>
PrefixBundle<T> prefix_from_checkpoint(const Checkpoint& ckpt, const BackboneConfig& base) {
    if (!ckpt.contains("meta.adapter") || ckpt.text("meta.adapter") != "domain_prefix") {
        throw FormatError("checkpoint is not a domain prefix bundle");
    }
    const BackboneConfig found = backbone::read_config(ckpt);
    backbone::check_compatible(base, found);
    PrefixBundle<T> b;
    b.base = found;
    b.config.beta = ckpt.scalar("meta.prefix.beta");
    b.config.train_domain = ckpt.scalar("meta.prefix.train_domain") != 0.0;
    Rng rng(0);
    add_prefix_parameters(b.params, found, rng);
    if (b.config.train_domain) b.params.add("embed.domain", ckpt.get<T>("embed.domain"));
    ckpt.load_into(b.params);
    return b;
}

#define PATCHFILL_INSTANTIATE_PREFIX(T)                                                                          \
    template void add_prefix_parameters<T>(ParameterStore<T>&, const BackboneConfig&, Rng&);                   \
    template PrefixBundle<T> make_prefix_bundle<T>(const Model<T>&, const PrefixConfig&, std::uint64_t);       \
    template Var<T> domain_transfer<T>(Binder<T>&, Var<T>);                                                    \
    template PrefixKV<T> combine_prefix<T>(Var<T>, Var<T>, double);                                            \
    template PrefixFn<T> domain_prefix_fn<T>(const BackboneConfig&, double);                                   \
    template training::TrainResult finetune_prefix<T>(Model<T>&, PrefixBundle<T>&, std::vector<data::SeriesWindow>, \
                                                      std::vector<data::SeriesWindow>, const training::TrainConfig&, \
                                                      std::ostream*);                                          \
    template Checkpoint to_checkpoint<T>(const PrefixBundle<T>&);                                              \
    template PrefixBundle<T> prefix_from_checkpoint<T>(const Checkpoint&, const BackboneConfig&);              \
    template class FrozenGuard<T>;

PATCHFILL_INSTANTIATE_PREFIX(float)
PATCHFILL_INSTANTIATE_PREFIX(double)

} // namespace patchfill::adaptation
