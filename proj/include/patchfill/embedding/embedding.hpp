#pragma once

#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "patchfill/data/series.hpp"
#include "patchfill/numerics/binder.hpp"
#include "patchfill/random.hpp"

namespace patchfill::embedding {

using numerics::Binder;
using numerics::Tensor;
using numerics::Var;

struct EmbeddingConfig {
    std::size_t window_length = 96;
    std::size_t patch_length = 16;
    std::size_t width = 64;
    // Empty means one domain vector shared by every input; otherwise one row
    // per label and inputs must carry a known label.
    std::vector<std::string> domains;

    std::size_t patch_count() const { return window_length / patch_length; }
    std::size_t domain_rows() const { return domains.empty() ? 1 : domains.size(); }
    std::size_t domain_row(const std::string& label) const;
    void validate() const;
};

/// Parameters: embed.patch.{w,b} (P x D), embed.stats.{w,b} (4 x D, shared by
/// patch and series statistics), embed.missing (1 x D), embed.domain (K x D).
template <std::floating_point T>
void add_parameters(numerics::ParameterStore<T>& store, const EmbeddingConfig& config, Rng& rng);

/// Model-ready constants for B normalized windows.
template <std::floating_point T>
struct EmbeddingBatch {
    std::size_t batch = 0;
    std::size_t patches = 0;
    Tensor<T> patch_values;  // B*N x P
    Tensor<T> patch_stats;   // B*N x 4
    Tensor<T> series_stats;  // B x 4
    Tensor<T> ratios;        // B*N x 1
    std::vector<std::size_t> domain_rows;
};

template <std::floating_point T>
EmbeddingBatch<T> make_batch(std::span<const data::SeriesWindow> windows, const EmbeddingConfig& config);

/// patches*Wp + bp + stats*Ws + bs + ratios*z_m, one row per patch.
template <std::floating_point T>
Var<T> patch_tokens(Binder<T>& bind, Var<T> patches, Var<T> stats, Var<T> ratios);

/// The global statistics token: stats*Ws + bs.
template <std::floating_point T>
Var<T> stat_tokens(Binder<T>& bind, Var<T> stats);

/// B*(N+2) x D, sequence-major. Row b*(N+2) is the domain vector, the next row
/// the global statistics token, then the N patch tokens in time order.
template <std::floating_point T>
Var<T> embed_input(Binder<T>& bind, const EmbeddingBatch<T>& batch);

} // namespace patchfill::embedding
