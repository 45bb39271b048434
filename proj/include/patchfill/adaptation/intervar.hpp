#pragma once

#include <concepts>
#include <cstdint>
#include <ostream>
#include <vector>

#include "patchfill/adaptation/prefix.hpp"
#include "patchfill/data/series.hpp"

namespace patchfill::adaptation {

struct InterVarConfig {
    // Token width of the lightweight encoder; 0 selects width / 4.
    std::size_t light_width = 0;
    std::size_t heads = 1;

    std::size_t light(const BackboneConfig& base) const { return light_width ? light_width : base.width / 4; }
};

/// Inter-variable prefix network: each of the V windows of a time block is
/// tokenized (L -> d), the V tokens pass through one bidirectional layer per
/// backbone layer without positional encoding, and after layer l a linear map
/// d -> 2D yields that layer's key and value row for every variable.
template <std::floating_point T>
struct InterVarNet {
    BackboneConfig base;
    InterVarConfig config;
    ParameterStore<T> params;
};

template <std::floating_point T>
InterVarNet<T> make_intervar(const BackboneConfig& base, const InterVarConfig& config, std::uint64_t seed);

/// x is V x L (normalized values, 0 where missing). Returns one prefix row per
/// variable and layer. Permuting the rows of x permutes the prefix rows.
template <std::floating_point T>
PrefixKV<T> intervar_prefix(Binder<T>& bind, const BackboneConfig& base, const InterVarConfig& config, Var<T> x);

/// Inputs arrive as consecutive blocks of `group` windows sharing a time range;
/// attention stays within a block.
template <std::floating_point T>
PrefixFn<T> intervar_prefix_fn(const BackboneConfig& base, const InterVarConfig& config, std::size_t group);

/// Windows of length L at the given stride, ordered block by block: every
/// variable in `variables` for start 0, then for the next start, and so on.
std::vector<data::SeriesWindow> block_windows(const data::MultivariateSeries& series, std::size_t length,
                                              std::size_t stride, const std::vector<std::size_t>& variables);

template <std::floating_point T>
training::TrainResult finetune_intervar(Model<T>& base, InterVarNet<T>& net, std::size_t group,
                                        std::vector<data::SeriesWindow> train, std::vector<data::SeriesWindow> val,
                                        const training::TrainConfig& config, std::ostream* log = nullptr);

template <std::floating_point T>
numerics::Checkpoint to_checkpoint(const InterVarNet<T>& net);

template <std::floating_point T>
InterVarNet<T> intervar_from_checkpoint(const numerics::Checkpoint& ckpt, const BackboneConfig& base);

} // namespace patchfill::adaptation
