#pragma once

#include <concepts>
#include <cstddef>
#include <span>

// Dense inner loops used by the autodiff ops. Two interchangeable
// implementations exist: `serial` is the reference, `omp` parallelizes the
// outer loops with OpenMP. Each output element is accumulated in the same order
// in both, so their results are bit-identical; tests rely on that.
namespace patchfill::numerics::kernels {

// Layout of one fused causal self-attention call. Rows of the packed
// projection are tokens ordered sequence-major: row = b * seq + i, columns are
// [query | key | value], each `heads * head_dim` wide.
struct AttentionShape {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    bool has_prefix = false;
    // One prefix row shared by every sequence, or one row per sequence.
    bool shared_prefix = true;

    std::size_t width() const { return heads * head_dim; }
    std::size_t slots() const { return seq + 1; }
    std::size_t prob_count() const { return batch * heads * seq * slots(); }
    std::size_t prefix_rows() const { return shared_prefix ? 1 : batch; }
};

namespace serial {

// C(m x n) (+)= A(m x k) * B(k x n)
template <std::floating_point T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate);

// C(k x n) (+)= A(m x k)^T * B(m x n)
template <std::floating_point T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate);

// C(m x n) (+)= A(m x k) * B(n x k)^T
template <std::floating_point T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate);

// out is (batch*seq x width); probs keeps the softmax weights for backward.
template <std::floating_point T>
void attention_forward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                       std::span<const T> prefix_v, std::span<T> out, std::span<T> probs);

// Overwrites d_qkv, d_prefix_k and d_prefix_v.
template <std::floating_point T>
void attention_backward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                        std::span<const T> prefix_v, std::span<const T> probs, std::span<const T> d_out,
                        std::span<T> d_qkv, std::span<T> d_prefix_k, std::span<T> d_prefix_v);

} // namespace serial

namespace omp {

// C(m x n) (+)= A(m x k) * B(k x n)
template <std::floating_point T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate);

// C(k x n) (+)= A(m x k)^T * B(m x n)
template <std::floating_point T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate);

// C(m x n) (+)= A(m x k) * B(n x k)^T
template <std::floating_point T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c,
             bool accumulate);

// out is (batch*seq x width); probs keeps the softmax weights for backward.
template <std::floating_point T>
void attention_forward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                       std::span<const T> prefix_v, std::span<T> out, std::span<T> probs);

// Overwrites d_qkv, d_prefix_k and d_prefix_v.
template <std::floating_point T>
void attention_backward(const AttentionShape& s, std::span<const T> qkv, std::span<const T> prefix_k,
                        std::span<const T> prefix_v, std::span<const T> probs, std::span<const T> d_out,
                        std::span<T> d_qkv, std::span<T> d_prefix_k, std::span<T> d_prefix_v);

} // namespace omp

// Kernels used by the ops.
namespace active = omp;

} // namespace patchfill::numerics::kernels
