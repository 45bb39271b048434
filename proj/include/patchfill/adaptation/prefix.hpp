#pragma once

#include <concepts>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "patchfill/backbone/model.hpp"
#include "patchfill/training/trainer.hpp"

namespace patchfill::adaptation {

using backbone::BackboneConfig;
using backbone::Model;
using backbone::PrefixFn;
using backbone::PrefixKV;
using numerics::Binder;
using numerics::ParameterStore;
using numerics::Tensor;
using numerics::Var;

struct PrefixConfig {
    // Weight of the domain-transfer term added to the learned prefix.
    double beta = 0.01;
    // When set the bundle carries its own copy of the domain table and trains it.
    bool train_domain = false;
};

/// Learned prefix P (2*layers x D; row 2l is layer l's key, 2l+1 its value)
/// plus the domain-transfer MLP D -> D -> 2*layers*D.
template <std::floating_point T>
struct PrefixBundle {
    BackboneConfig base;
    PrefixConfig config;
    ParameterStore<T> params;
};

/// Adds prefix.p and prefix.dt.{fc1,fc2}.{w,b} to `store`.
template <std::floating_point T>
void add_prefix_parameters(ParameterStore<T>& store, const BackboneConfig& base, Rng& rng);

template <std::floating_point T>
PrefixBundle<T> make_prefix_bundle(const Model<T>& base, const PrefixConfig& config, std::uint64_t seed);

/// Domain rows k (R x D) to R x (2*layers*D).
template <std::floating_point T>
Var<T> domain_transfer(Binder<T>& bind, Var<T> k);

/// P + beta * K_hat split into per-layer key/value rows. Both inputs are
/// 2*layers x D. Throws ConfigError on a shape mismatch.
template <std::floating_point T>
PrefixKV<T> combine_prefix(Var<T> p, Var<T> k_hat, double beta);

/// Prefix for a batch: one shared row per layer when every input has the same
/// domain, one row per sequence otherwise.
template <std::floating_point T>
PrefixFn<T> domain_prefix_fn(const BackboneConfig& base, double beta);

/// Trains only the bundle's parameters with the base frozen and leaves the
/// bundle holding the best validation parameters. Throws InvariantViolation if
/// the base weights changed.
template <std::floating_point T>
training::TrainResult finetune_prefix(Model<T>& base, PrefixBundle<T>& bundle,
                                      std::vector<data::SeriesWindow> train, std::vector<data::SeriesWindow> val,
                                      const training::TrainConfig& config, std::ostream* log = nullptr);

/// The file holds the base config (for compatibility checks), the bundle's
/// parameters and meta.prefix.* settings; its size depends only on the shapes.
template <std::floating_point T>
numerics::Checkpoint to_checkpoint(const PrefixBundle<T>& bundle);

/// Throws ConfigError when the bundle was trained against a different base.
template <std::floating_point T>
PrefixBundle<T> prefix_from_checkpoint(const numerics::Checkpoint& ckpt, const BackboneConfig& base);

/// Snapshot of a parameter store, compared after an adapter run.
template <std::floating_point T>
class FrozenGuard {
public:
    explicit FrozenGuard(const ParameterStore<T>& store);
    /// Throws InvariantViolation naming the first parameter that changed.
    void verify() const;

private:
    const ParameterStore<T>& store_;
    std::vector<Tensor<T>> values_;
};

} // namespace patchfill::adaptation
