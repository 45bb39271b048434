#pragma once

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "patchfill/data/revin.hpp"
#include "patchfill/embedding/embedding.hpp"
#include "patchfill/numerics/binder.hpp"
#include "patchfill/numerics/checkpoint.hpp"

namespace patchfill::backbone {

using numerics::Binder;
using numerics::ParameterStore;
using numerics::Tensor;
using numerics::Var;

struct BackboneConfig {
    std::size_t layers = 6;
    std::size_t heads = 4;
    std::size_t width = 64;
    std::size_t patch_length = 16;
    std::size_t window_length = 96;
    // 0 selects 4 * width.
    std::size_t ff_width = 0;
    // Rows of the position table; bounds the sequence including forecast tokens.
    std::size_t max_tokens = 64;
    double dropout = 0.1;
    std::vector<std::string> domains;

    std::size_t ff() const { return ff_width ? ff_width : 4 * width; }
    std::size_t patch_count() const { return window_length / patch_length; }
    std::size_t seq_length() const { return patch_count() + 2; }
    embedding::EmbeddingConfig embedding() const { return {window_length, patch_length, width, domains}; }
    void validate() const;
};

/// Key and value rows prepended to one layer's attention: 1 x D shared by the
/// batch, or B x D with one row per sequence.
template <std::floating_point T>
struct LayerPrefix {
    Var<T> key;
    Var<T> value;
};

template <std::floating_point T>
using PrefixKV = std::vector<LayerPrefix<T>>;

template <std::floating_point T>
struct HiddenStates {
    std::vector<Var<T>> layers;  // residual stream after each block
    Var<T> final;                // after the closing layer norm
};

/// All learnable state of the imputer: embedding, position table, blocks,
/// final norm, output head and the bilinear contrastive matrix.
template <std::floating_point T>
struct Model {
    BackboneConfig config;
    ParameterStore<T> params;
};

template <std::floating_point T>
Model<T> make_model(const BackboneConfig& config, std::uint64_t seed);

/// Adds rows [0, seq) of `pos` to every sequence, runs the pre-norm blocks and
/// the final norm. Dropout is active only when `dropout_rng` is given.
template <std::floating_point T>
HiddenStates<T> forward(Binder<T>& bind, const BackboneConfig& config, Var<T> tokens, std::size_t batch,
                        std::size_t seq, const PrefixKV<T>* prefix = nullptr, Rng* dropout_rng = nullptr);

/// Drops the domain and global tokens, flattens the N patch states of each
/// sequence and maps them to L values: B x L.
template <std::floating_point T>
Var<T> output_head(Binder<T>& bind, const BackboneConfig& config, Var<T> hidden, std::size_t batch,
                   std::size_t seq);

/// Rows of the N patch tokens of every sequence, in order.
std::vector<std::size_t> patch_rows(std::size_t batch, std::size_t seq, std::size_t patches);

/// Embedding, backbone and head in one call; returns B x L normalized values.
template <std::floating_point T>
Var<T> impute_forward(Binder<T>& bind, const BackboneConfig& config, const embedding::EmbeddingBatch<T>& batch,
                      const PrefixKV<T>* prefix = nullptr, Rng* dropout_rng = nullptr);

/// Builds the per-layer prefix for a batch of model inputs.
template <std::floating_point T>
using PrefixFn = std::function<PrefixKV<T>(Binder<T>&, std::span<const data::SeriesWindow>)>;

/// Normalized reconstructions of normalized inputs, evaluated in chunks of
/// `batch_size` without dropout. `overlay` shadows base parameters.
template <std::floating_point T>
std::vector<std::vector<double>> predict(Model<T>& model, std::span<const data::SeriesWindow> inputs,
                                         std::size_t batch_size, const PrefixFn<T>& prefix = {},
                                         ParameterStore<T>* overlay = nullptr);

/// Maps normalized model output back to the window's scale and keeps every
/// observed value verbatim.
std::vector<double> compose_imputation(const data::SeriesWindow& window, const data::RevinStats& stats,
                                       std::span<const double> model_output);

/// Checkpoint metadata. read_config throws FormatError when a field is absent.
void write_config(numerics::Checkpoint& ckpt, const BackboneConfig& config);
BackboneConfig read_config(const numerics::Checkpoint& ckpt);

/// Throws ConfigError naming the first field that differs.
void check_compatible(const BackboneConfig& expected, const BackboneConfig& found);

template <std::floating_point T>
numerics::Checkpoint to_checkpoint(const Model<T>& model);

template <std::floating_point T>
Model<T> from_checkpoint(const numerics::Checkpoint& ckpt);

} // namespace patchfill::backbone
