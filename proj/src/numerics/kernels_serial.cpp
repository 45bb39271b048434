#include "patchfill/numerics/kernels.hpp"

#include "attention_detail.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace patchfill::numerics::kernels::serial {

template <std::floating_point T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c.data() + i * n;
        if (!accumulate) std::fill(crow, crow + n, T{0});
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <std::floating_point T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate) {
    for (std::size_t p = 0; p < k; ++p) {
        T* crow = c.data() + p * n;
        if (!accumulate) std::fill(crow, crow + n, T{0});
        for (std::size_t i = 0; i < m; ++i) {
            const T av = a[i * k + p];
            const T* brow = b.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <std::floating_point T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate) {
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn<T>(m, k, n, a, bt, c, accumulate);
}

template <std::floating_point T>
void attention_forward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                       std::span<const T> prefix_v, std::span<T> out, std::span<T> probs) {
    for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h)
            detail::attend_one<T>(s, b, h, qkv, prefix_k, prefix_v, out, probs);
}

template <std::floating_point T>
void attention_backward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                        std::span<const T> prefix_v, std::span<const T> probs, std::span<const T> d_out,
                        std::span<T> d_qkv, std::span<T> d_prefix_k, std::span<T> d_prefix_v) {
    const std::size_t W = s.width();
    // Per-sequence prefix gradients, reduced over the batch in order afterwards.
    std::vector<T> pk_rows(s.has_prefix ? s.batch * W : W, T{0});
    std::vector<T> pv_rows(s.has_prefix ? s.batch * W : W, T{0});
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t h = 0; h < s.heads; ++h) {
            const std::size_t r = s.has_prefix ? b : 0;
            detail::attend_one_backward<T>(s, b, h, qkv, prefix_k, prefix_v, probs, d_out, d_qkv,
                                           pk_rows.data() + r * W, pv_rows.data() + r * W);
        }
    }
    if (!s.has_prefix) return;
    std::fill(d_prefix_k.begin(), d_prefix_k.end(), T{0});
    std::fill(d_prefix_v.begin(), d_prefix_v.end(), T{0});
    for (std::size_t b = 0; b < s.batch; ++b) {
        const std::size_t dst = s.shared_prefix ? 0 : b;
        for (std::size_t c = 0; c < W; ++c) {
            d_prefix_k[dst * W + c] += pk_rows[b * W + c];
            d_prefix_v[dst * W + c] += pv_rows[b * W + c];
        }
    }
}

#define PATCHFILL_INSTANTIATE(T)                                                                                    \
    template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,        \
                             std::span<T>, bool);                                                                   \
    template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,        \
                             std::span<T>, bool);                                                                   \
    template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,        \
                             std::span<T>, bool);                                                                   \
    template void attention_forward<T>(const AttentionShape&, std::span<const T>, std::span<const T>,              \
                                       std::span<const T>, std::span<T>, std::span<T>);                            \
    template void attention_backward<T>(const AttentionShape&, std::span<const T>, std::span<const T>,             \
                                        std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>,  \
                                        std::span<T>, std::span<T>);

PATCHFILL_INSTANTIATE(float)
PATCHFILL_INSTANTIATE(double)

} // namespace patchfill::numerics::kernels::serial
