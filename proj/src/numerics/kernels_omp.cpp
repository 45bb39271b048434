#include "patchfill/numerics/kernels.hpp"

#include "attention_detail.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

#include <omp.h>

namespace patchfill::numerics::kernels::omp {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 32 * 1024;

// C[r][j] (+)= sum_s a(r, s) * B[s * n + j] with a(r, s) = A[r * ra + s * sa],
// for R rows and the columns [j0, j0 + JT). Accumulators stay in registers;
// every element still sums over s in ascending order, so results match the
// serial reference bit for bit.
// One 512-bit lane group; GCC lowers it to narrower registers when needed.
template <typename T>
struct Vec;
template <>
struct Vec<float> {
    typedef float type __attribute__((vector_size(64)));
};
template <>
struct Vec<double> {
    typedef double type __attribute__((vector_size(64)));
};

template <typename T, std::size_t R, std::size_t JT>
inline void block_full(const T* A, std::size_t ra, std::size_t sa, const T* B, std::size_t n, std::size_t S, T* C,
                       std::size_t j0, bool accumulate) {
    using V = typename Vec<T>::type;
    constexpr std::size_t VL = 64 / sizeof(T);
    constexpr std::size_t NV = JT / VL;
    V acc[R][NV];
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t v = 0; v < NV; ++v) {
            if (accumulate) std::memcpy(&acc[r][v], C + r * n + j0 + v * VL, sizeof(V));
            else acc[r][v] = V{};
        }
    for (std::size_t s = 0; s < S; ++s) {
        const T* brow = B + s * n + j0;
        V bv[NV];
        for (std::size_t v = 0; v < NV; ++v) std::memcpy(&bv[v], brow + v * VL, sizeof(V));
        for (std::size_t r = 0; r < R; ++r) {
            const T av = A[r * ra + s * sa];
            for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
        }
    }
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t v = 0; v < NV; ++v) std::memcpy(C + r * n + j0 + v * VL, &acc[r][v], sizeof(V));
}

template <typename T>
inline void block_edge(const T* A, std::size_t ra, std::size_t sa, const T* B, std::size_t n, std::size_t S, T* C,
                       std::size_t rows, std::size_t j0, std::size_t j1, bool accumulate) {
    for (std::size_t r = 0; r < rows; ++r) {
        T* crow = C + r * n;
        if (!accumulate) std::fill(crow + j0, crow + j1, T{0});
        for (std::size_t s = 0; s < S; ++s) {
            const T av = A[r * ra + s * sa];
            const T* brow = B + s * n;
            for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
        }
    }
}

// Rows of C are produced in blocks of kRows; see block_full.
template <typename T>
void blocked(std::size_t rows, std::size_t S, std::size_t n, const T* A, std::size_t ra, std::size_t sa, const T* B,
             T* C, bool accumulate, bool parallel) {
    constexpr std::size_t kRows = 4;
    constexpr std::size_t kCols = 64 / sizeof(T) * 2;
    const auto blocks = static_cast<std::int64_t>((rows + kRows - 1) / kRows);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t bb = 0; bb < blocks; ++bb) {
        const std::size_t r0 = static_cast<std::size_t>(bb) * kRows;
        const std::size_t nr = std::min(kRows, rows - r0);
        const T* a0 = A + r0 * ra;
        T* c0 = C + r0 * n;
        std::size_t j0 = 0;
        if (nr == kRows) {
            for (; j0 + kCols <= n; j0 += kCols) block_full<T, kRows, kCols>(a0, ra, sa, B, n, S, c0, j0, accumulate);
        }
        if (j0 < n) block_edge<T>(a0, ra, sa, B, n, S, c0, nr, j0, n, accumulate);
    }
}

} // namespace

template <std::floating_point T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate) {
    blocked<T>(m, k, n, a.data(), k, 1, b.data(), c.data(), accumulate, m * k * n >= kParallelWork);
}

template <std::floating_point T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate) {
    blocked<T>(k, m, n, a.data(), 1, k, b.data(), c.data(), accumulate, m * k * n >= kParallelWork);
}

template <std::floating_point T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate) {
    std::vector<T> bt(k * n);
    const auto src_rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (k * n >= kParallelWork)
    for (std::int64_t jj = 0; jj < src_rows; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    gemm_nn<T>(m, k, n, a, bt, c, accumulate);
}

template <std::floating_point T>
void attention_forward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                       std::span<const T> prefix_v, std::span<T> out, std::span<T> probs) {
    const auto units = static_cast<std::int64_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static) if (s.batch * s.seq * s.seq * s.width() >= kParallelWork)
    for (std::int64_t u = 0; u < units; ++u) {
        const auto b = static_cast<std::size_t>(u) / s.heads;
        const auto h = static_cast<std::size_t>(u) % s.heads;
        detail::attend_one<T>(s, b, h, qkv, prefix_k, prefix_v, out, probs);
    }
}

template <std::floating_point T>
void attention_backward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                        std::span<const T> prefix_v, std::span<const T> probs, std::span<const T> d_out,
                        std::span<T> d_qkv, std::span<T> d_prefix_k, std::span<T> d_prefix_v) {
    const std::size_t W = s.width();
    std::vector<T> pk_rows(s.has_prefix ? s.batch * W : W, T{0});
    std::vector<T> pv_rows(s.has_prefix ? s.batch * W : W, T{0});
    const auto units = static_cast<std::int64_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static) if (s.batch * s.seq * s.seq * W >= kParallelWork)
    for (std::int64_t u = 0; u < units; ++u) {
        const auto b = static_cast<std::size_t>(u) / s.heads;
        const auto h = static_cast<std::size_t>(u) % s.heads;
        const std::size_t r = s.has_prefix ? b : 0;
        detail::attend_one_backward<T>(s, b, h, qkv, prefix_k, prefix_v, probs, d_out, d_qkv, pk_rows.data() + r * W,
                                       pv_rows.data() + r * W);
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

} // namespace patchfill::numerics::kernels::omp
