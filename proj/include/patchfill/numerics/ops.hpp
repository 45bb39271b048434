#pragma once

#include <concepts>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "patchfill/numerics/tape.hpp"

// Differentiable operations. Matrices are rank-2 row-major tensors; ops that
// take "rows" treat any tensor as (size / last_dim) x last_dim.
namespace patchfill::numerics {

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b);

template <std::floating_point T>
Var<T> transpose(Var<T> x);

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b);

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b);

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b);

template <std::floating_point T>
Var<T> scale(Var<T> x, T factor);

/// x (rows x n) + bias (n) broadcast over rows.
template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> bias);

/// x * w + b for x (rows x in), w (in x out), b (out).
template <std::floating_point T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

/// tanh approximation used by GPT-2.
template <std::floating_point T>
Var<T> gelu(Var<T> x);

template <std::floating_point T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);

/// Max-subtracted softmax along `axis`.
template <std::floating_point T>
Var<T> softmax(Var<T> x, std::size_t axis);

template <std::floating_point T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

/// Elements [begin, end) along `axis`.
template <std::floating_point T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end);

/// Output row r is input row indices[r]; rows may repeat.
template <std::floating_point T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> indices);

template <std::floating_point T>
Var<T> reshape(Var<T> x, Shape shape);

template <std::floating_point T>
Var<T> sum(Var<T> x);

template <std::floating_point T>
Var<T> mean(Var<T> x);

/// Reductions to a scalar; the gradient goes to the first extremal element.
template <std::floating_point T>
Var<T> min(Var<T> x);

template <std::floating_point T>
Var<T> max(Var<T> x);

/// Inverted dropout. rate == 0 returns x itself.
template <std::floating_point T>
Var<T> dropout(Var<T> x, T rate, std::mt19937_64& rng);

/// Mean over rows of -log softmax(logits[r])[targets[r]].
template <std::floating_point T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> targets);

/// Causal multi-head self-attention over a packed [q | k | v] projection of
/// shape (batch*seq x 3*width). The optional prefix key/value rows (1 x width
/// shared, or batch x width) are attended by every position before the causal
/// keys and produce no output row.
template <std::floating_point T>
Var<T> causal_attention(Var<T> qkv, std::size_t batch, std::size_t seq, std::size_t heads,
                        std::optional<Var<T>> prefix_key = std::nullopt,
                        std::optional<Var<T>> prefix_value = std::nullopt);

} // namespace patchfill::numerics
