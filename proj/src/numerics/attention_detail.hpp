#pragma once

// Per-(sequence, head) attention routines shared by the serial and OpenMP
// drivers. Each call touches only its own slice of the outputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "patchfill/numerics/kernels.hpp"

namespace patchfill::numerics::kernels::detail {

template <std::floating_point T>
inline void attend_one(const AttentionShape& s, std::size_t b, std::size_t h, std::span<const T> qkv,
                std::span<const T> prefix_k, std::span<const T> prefix_v, std::span<T> out, std::span<T> probs) {
    const std::size_t W = s.width();
    const std::size_t dh = s.head_dim;
    const std::size_t stride = 3 * W;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh));
    const std::size_t prow = s.shared_prefix ? 0 : b;
    std::vector<T> scores(s.slots());

    for (std::size_t i = 0; i < s.seq; ++i) {
        const T* q = qkv.data() + (b * s.seq + i) * stride + h * dh;
        T best = -std::numeric_limits<T>::infinity();
        if (s.has_prefix) {
            const T* pk = prefix_k.data() + prow * W + h * dh;
            T dot = 0;
            for (std::size_t d = 0; d < dh; ++d) dot += q[d] * pk[d];
            scores[0] = dot * scale;
            best = scores[0];
        }
        for (std::size_t j = 0; j <= i; ++j) {
            const T* key = qkv.data() + (b * s.seq + j) * stride + W + h * dh;
            T dot = 0;
            for (std::size_t d = 0; d < dh; ++d) dot += q[d] * key[d];
            scores[1 + j] = dot * scale;
            best = std::max(best, scores[1 + j]);
        }
        T* p = probs.data() + ((b * s.heads + h) * s.seq + i) * s.slots();
        std::fill(p, p + s.slots(), T{0});
        T total = 0;
        if (s.has_prefix) {
            p[0] = std::exp(scores[0] - best);
            total += p[0];
        }
        for (std::size_t j = 0; j <= i; ++j) {
            p[1 + j] = std::exp(scores[1 + j] - best);
            total += p[1 + j];
        }
        const T inv = T{1} / total;
        for (std::size_t slot = 0; slot <= i + 1; ++slot) p[slot] *= inv;

        T* o = out.data() + (b * s.seq + i) * W + h * dh;
        std::fill(o, o + dh, T{0});
        if (s.has_prefix) {
            const T* pv = prefix_v.data() + prow * W + h * dh;
            for (std::size_t d = 0; d < dh; ++d) o[d] += p[0] * pv[d];
        }
        for (std::size_t j = 0; j <= i; ++j) {
            const T* v = qkv.data() + (b * s.seq + j) * stride + 2 * W + h * dh;
            for (std::size_t d = 0; d < dh; ++d) o[d] += p[1 + j] * v[d];
        }
    }
}

// d_pk/d_pv point at this sequence's own gradient row.
template <std::floating_point T>
inline void attend_one_backward(const AttentionShape& s, std::size_t b, std::size_t h, std::span<const T> qkv,
                         std::span<const T> prefix_k, std::span<const T> prefix_v, std::span<const T> probs,
                         std::span<const T> d_out, std::span<T> d_qkv, T* d_pk, T* d_pv) {
    const std::size_t W = s.width();
    const std::size_t dh = s.head_dim;
    const std::size_t stride = 3 * W;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh));
    const std::size_t prow = s.shared_prefix ? 0 : b;
    std::vector<T> dp(s.slots());

    for (std::size_t i = 0; i < s.seq; ++i) {
        const std::size_t row = b * s.seq + i;
        for (std::size_t part = 0; part < 3; ++part) {
            T* g = d_qkv.data() + row * stride + part * W + h * dh;
            std::fill(g, g + dh, T{0});
        }
    }
    if (s.has_prefix) {
        std::fill(d_pk + h * dh, d_pk + (h + 1) * dh, T{0});
        std::fill(d_pv + h * dh, d_pv + (h + 1) * dh, T{0});
    }

    for (std::size_t i = 0; i < s.seq; ++i) {
        const std::size_t row = b * s.seq + i;
        const T* q = qkv.data() + row * stride + h * dh;
        const T* go = d_out.data() + row * W + h * dh;
        const T* p = probs.data() + ((b * s.heads + h) * s.seq + i) * s.slots();
        T weighted = 0;
        if (s.has_prefix) {
            const T* pv = prefix_v.data() + prow * W + h * dh;
            T dot = 0;
            for (std::size_t d = 0; d < dh; ++d) dot += go[d] * pv[d];
            dp[0] = dot;
            weighted += p[0] * dot;
        }
        for (std::size_t j = 0; j <= i; ++j) {
            const T* v = qkv.data() + (b * s.seq + j) * stride + 2 * W + h * dh;
            T dot = 0;
            for (std::size_t d = 0; d < dh; ++d) dot += go[d] * v[d];
            dp[1 + j] = dot;
            weighted += p[1 + j] * dot;
        }
        T* gq = d_qkv.data() + row * stride + h * dh;
        if (s.has_prefix) {
            const T ds = p[0] * (dp[0] - weighted) * scale;
            const T* pk = prefix_k.data() + prow * W + h * dh;
            for (std::size_t d = 0; d < dh; ++d) {
                gq[d] += ds * pk[d];
                d_pk[h * dh + d] += ds * q[d];
                d_pv[h * dh + d] += p[0] * go[d];
            }
        }
        for (std::size_t j = 0; j <= i; ++j) {
            const std::size_t krow = b * s.seq + j;
            const T ds = p[1 + j] * (dp[1 + j] - weighted) * scale;
            const T* key = qkv.data() + krow * stride + W + h * dh;
            T* gk = d_qkv.data() + krow * stride + W + h * dh;
            T* gv = d_qkv.data() + krow * stride + 2 * W + h * dh;
            for (std::size_t d = 0; d < dh; ++d) {
                gq[d] += ds * key[d];
                gk[d] += ds * q[d];
                gv[d] += p[1 + j] * go[d];
            }
        }
    }
}

} // namespace patchfill::numerics::kernels::detail
