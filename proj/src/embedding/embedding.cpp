#include "patchfill/embedding/embedding.hpp"

#include <algorithm>

#include "patchfill/embedding/patches.hpp"
#include "patchfill/error.hpp"
#include "patchfill/numerics/init.hpp"
#include "patchfill/numerics/ops.hpp"

namespace patchfill::embedding {

using namespace numerics;

std::size_t EmbeddingConfig::domain_row(const std::string& label) const {
    if (domains.empty()) return 0;
    auto it = std::find(domains.begin(), domains.end(), label);
    if (it == domains.end()) {
        throw LookupError(label.empty() ? "input has no domain label but per-domain embeddings are configured"
                                        : "unknown domain label: " + label);
    }
    return static_cast<std::size_t>(it - domains.begin());
}

void EmbeddingConfig::validate() const {
    if (width == 0) throw ConfigError("model width must be positive");
    if (patch_length == 0 || window_length == 0 || window_length % patch_length != 0) {
        throw ConfigError("window length " + std::to_string(window_length) + " is not a multiple of patch length " +
                          std::to_string(patch_length));
    }
}

template <std::floating_point T>
void add_parameters(ParameterStore<T>& store, const EmbeddingConfig& config, Rng& rng) {
    config.validate();
    const std::size_t D = config.width;
    store.add("embed.patch.w", xavier_uniform<T>(config.patch_length, D, rng));
    store.add("embed.patch.b", Tensor<T>({D}));
    store.add("embed.stats.w", xavier_uniform<T>(4, D, rng));
    store.add("embed.stats.b", Tensor<T>({D}));
    store.add("embed.missing", normal_tensor<T>({1, D}, 0.02, rng));
    store.add("embed.domain", normal_tensor<T>({config.domain_rows(), D}, 0.02, rng));
}

template <std::floating_point T>
EmbeddingBatch<T> make_batch(std::span<const data::SeriesWindow> windows, const EmbeddingConfig& config) {
    config.validate();
    if (windows.empty()) throw ConfigError("cannot embed an empty batch");
    const std::size_t B = windows.size(), N = config.patch_count(), P = config.patch_length;
    EmbeddingBatch<T> out;
    out.batch = B;
    out.patches = N;
    out.patch_values = Tensor<T>({B * N, P});
    out.patch_stats = Tensor<T>({B * N, 4});
    out.series_stats = Tensor<T>({B, 4});
    out.ratios = Tensor<T>({B * N, 1});
    for (std::size_t b = 0; b < B; ++b) {
        const auto& w = windows[b];
        if (w.length() != config.window_length) {
            throw DimensionError("window length " + std::to_string(w.length()) + " does not match configured " +
                                 std::to_string(config.window_length));
        }
        const PatchSet ps = patchify(w, P);
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t row = b * N + j;
            const auto vals = ps.patch(j);
            const auto m = ps.patch_mask(j);
            for (std::size_t i = 0; i < P; ++i) out.patch_values.at(row, i) = m[i] ? static_cast<T>(vals[i]) : T{0};
            const Stats st = patch_stats(vals, m);
            for (std::size_t s = 0; s < 4; ++s) out.patch_stats.at(row, s) = static_cast<T>(st[s]);
            out.ratios[row] = static_cast<T>(ps.ratios[j]);
        }
        const Stats g = series_stats(w.values, w.mask);
        for (std::size_t s = 0; s < 4; ++s) out.series_stats.at(b, s) = static_cast<T>(g[s]);
        out.domain_rows.push_back(config.domain_row(w.domain));
    }
    return out;
}

template <std::floating_point T>
Var<T> patch_tokens(Binder<T>& bind, Var<T> patches, Var<T> stats, Var<T> ratios) {
    Var<T> tok = linear(patches, bind("embed.patch.w"), bind("embed.patch.b"));
    tok = add(tok, linear(stats, bind("embed.stats.w"), bind("embed.stats.b")));
    return add(tok, matmul(ratios, bind("embed.missing")));
}

template <std::floating_point T>
Var<T> stat_tokens(Binder<T>& bind, Var<T> stats) {
    return linear(stats, bind("embed.stats.w"), bind("embed.stats.b"));
}

template <std::floating_point T>
Var<T> embed_input(Binder<T>& bind, const EmbeddingBatch<T>& batch) {
    const std::size_t B = batch.batch, N = batch.patches, S = N + 2;
    Var<T> patches = patch_tokens(bind, bind.constant(batch.patch_values), bind.constant(batch.patch_stats),
                                  bind.constant(batch.ratios));
    Var<T> global = stat_tokens(bind, bind.constant(batch.series_stats));
    Var<T> domain = gather_rows(bind("embed.domain"), std::span<const std::size_t>(batch.domain_rows));
    // Stack as [domain (B); global (B); patches (B*N)] and reorder per sequence.
    const Var<T> parts[] = {domain, global, patches};
    Var<T> stacked = concat(std::span<const Var<T>>(parts), 0);
    std::vector<std::size_t> order(B * S);
    for (std::size_t b = 0; b < B; ++b) {
        order[b * S] = b;
        order[b * S + 1] = B + b;
        for (std::size_t j = 0; j < N; ++j) order[b * S + 2 + j] = 2 * B + b * N + j;
    }
    return gather_rows(stacked, std::span<const std::size_t>(order));
}

#define PATCHFILL_INSTANTIATE_EMBEDDING(T)                                                                   \
    template void add_parameters<T>(ParameterStore<T>&, const EmbeddingConfig&, Rng&);                       \
    template EmbeddingBatch<T> make_batch<T>(std::span<const data::SeriesWindow>, const EmbeddingConfig&);   \
    template Var<T> patch_tokens<T>(Binder<T>&, Var<T>, Var<T>, Var<T>);                                     \
    template Var<T> stat_tokens<T>(Binder<T>&, Var<T>);                                                      \
    template Var<T> embed_input<T>(Binder<T>&, const EmbeddingBatch<T>&);

PATCHFILL_INSTANTIATE_EMBEDDING(float)
PATCHFILL_INSTANTIATE_EMBEDDING(double)

} // namespace patchfill::embedding
