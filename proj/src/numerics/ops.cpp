#include "patchfill/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "patchfill/numerics/kernels.hpp"

namespace patchfill::numerics {

namespace kern = kernels::active;

namespace {

template <std::floating_point T>
const Tensor<T>& val(Var<T> v) {
    return v.tape->value(v);
}

template <std::floating_point T>
void require_matrix(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got shape " + shape_string(t.shape()));
    }
}

template <std::floating_point T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

template <std::floating_point T>
void accumulate(Tape<T>& tape, Var<T> target, const Tensor<T>& g) {
    if (Tensor<T>* dst = tape.grad_of(target)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
    }
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t length = 1;
    std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    if (B.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_string(A.shape()) + " x " +
                             shape_string(B.shape()));
    }
    Tensor<T> out({m, n});
    kern::gemm_nn<T>(m, k, n, A.values(), B.values(), out.values(), false);
    return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        if (Tensor<T>* ga = tape.grad_of(a)) kern::gemm_nt<T>(m, n, k, g.values(), val(b).values(), ga->values(), true);
        if (Tensor<T>* gb = tape.grad_of(b)) kern::gemm_tn<T>(m, k, n, val(a).values(), g.values(), gb->values(), true);
    });
}

template <std::floating_point T>
Var<T> transpose(Var<T> x) {
    const Tensor<T>& X = val(x);
    require_matrix(X, "transpose");
    const std::size_t r = X.dim(0), c = X.dim(1);
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = X.at(i, j);
    return x.tape->record(std::move(out), {x}, [x, r, c](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = tape.grad_of(x);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx->at(i, j) += g.at(j, i);
    });
}

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape(val(a), val(b), "add");
    Tensor<T> out = val(a);
    const Tensor<T>& B = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        accumulate(tape, a, g);
        accumulate(tape, b, g);
    });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_shape(val(a), val(b), "sub");
    Tensor<T> out = val(a);
    const Tensor<T>& B = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        accumulate(tape, a, g);
        if (Tensor<T>* gb = tape.grad_of(b))
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape(val(a), val(b), "mul");
    Tensor<T> out = val(a);
    const Tensor<T>& B = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        if (Tensor<T>* ga = tape.grad_of(a)) {
            const Tensor<T>& B = val(b);
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
        }
        if (Tensor<T>* gb = tape.grad_of(b)) {
            const Tensor<T>& A = val(a);
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
        }
    });
}

template <std::floating_point T>
Var<T> scale(Var<T> x, T factor) {
    Tensor<T> out = val(x);
    for (auto& v : out.values()) v *= factor;
    return x.tape->record(std::move(out), {x}, [x, factor](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = tape.grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
    });
}

template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& B = val(bias);
    const std::size_t n = X.cols();
    if (B.size() != n) {
        throw DimensionError("add_bias: bias of size " + std::to_string(B.size()) + " for rows of width " +
                             std::to_string(n));
    }
    Tensor<T> out = X;
    const std::size_t rows = X.rows();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] += B[j];
    return x.tape->record(std::move(out), {x, bias}, [x, bias, rows, n](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        accumulate(tape, x, g);
        if (Tensor<T>* gb = tape.grad_of(bias))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[r * n + j];
    });
}

template <std::floating_point T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    return add_bias(matmul(x, w), b);
}

template <std::floating_point T>
Var<T> gelu(Var<T> x) {
    constexpr T c = static_cast<T>(0.7978845608028654); // sqrt(2 / pi)
    constexpr T k = static_cast<T>(0.044715);
    const Tensor<T>& X = val(x);
    Tensor<T> out(X.shape());
    std::vector<T> th(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) {
        const T v = X[i];
        th[i] = std::tanh(c * (v + k * v * v * v));
        out[i] = T{0.5} * v * (T{1} + th[i]);
    }
    return x.tape->record(std::move(out), {x},
                          [x, th = std::move(th)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
                              const Tensor<T>& X = val(x);
                              Tensor<T>* gx = tape.grad_of(x);
                              for (std::size_t i = 0; i < X.size(); ++i) {
                                  const T v = X[i];
                                  const T t = th[i];
                                  const T d = T{0.5} * (T{1} + t) +
                                              T{0.5} * v * (T{1} - t * t) * c * (T{1} + T{3} * k * v * v);
                                  (*gx)[i] += g[i] * d;
                              }
                          });
}

template <std::floating_point T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
    const Tensor<T>& X = val(x);
    const std::size_t D = X.cols();
    if (D == 0) throw DimensionError("layer_norm: zero-length last axis");
    if (val(gamma).size() != D || val(beta).size() != D) {
        throw DimensionError("layer_norm: affine parameters do not match last axis " + std::to_string(D));
    }
    if (!(eps > T{0})) throw ConfigError("layer_norm: eps must be positive");
    const std::size_t rows = X.rows();
    const Tensor<T>& G = val(gamma);
    const Tensor<T>& Bt = val(beta);
    auto xhat = std::make_shared<std::vector<T>>(X.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    Tensor<T> out(X.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = X.data() + r * D;
        T mu = 0;
        for (std::size_t j = 0; j < D; ++j) mu += row[j];
        mu /= static_cast<T>(D);
        T var = 0;
        for (std::size_t j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(D);
        const T inv = T{1} / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < D; ++j) {
            const T h = (row[j] - mu) * inv;
            (*xhat)[r * D + j] = h;
            out[r * D + j] = G[j] * h + Bt[j];
        }
    }
    return x.tape->record(std::move(out), {x, gamma, beta},
                          [x, gamma, beta, xhat, inv_std, rows, D](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
                              const Tensor<T>& G = val(gamma);
                              if (Tensor<T>* gg = tape.grad_of(gamma))
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < D; ++j)
                                          (*gg)[j] += g[r * D + j] * (*xhat)[r * D + j];
                              if (Tensor<T>* gb = tape.grad_of(beta))
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < D; ++j) (*gb)[j] += g[r * D + j];
                              Tensor<T>* gx = tape.grad_of(x);
                              if (!gx) return;
                              const T dn = static_cast<T>(D);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  T sum_g = 0, sum_gh = 0;
                                  for (std::size_t j = 0; j < D; ++j) {
                                      const T gh = g[r * D + j] * G[j];
                                      sum_g += gh;
                                      sum_gh += gh * (*xhat)[r * D + j];
                                  }
                                  const T inv = (*inv_std)[r];
                                  for (std::size_t j = 0; j < D; ++j) {
                                      const T gh = g[r * D + j] * G[j];
                                      (*gx)[r * D + j] +=
                                          inv / dn * (dn * gh - sum_g - (*xhat)[r * D + j] * sum_gh);
                                  }
                              }
                          });
}

template <std::floating_point T>
Var<T> softmax(Var<T> x, std::size_t axis) {
    const Tensor<T>& X = val(x);
    const AxisSplit s = split_axis(X.shape(), axis);
    Tensor<T> out(X.shape());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.length * s.inner + in;
            T best = X[base];
            for (std::size_t a = 1; a < s.length; ++a) best = std::max(best, X[base + a * s.inner]);
            T total = 0;
            for (std::size_t a = 0; a < s.length; ++a) {
                const T e = std::exp(X[base + a * s.inner] - best);
                out[base + a * s.inner] = e;
                total += e;
            }
            for (std::size_t a = 0; a < s.length; ++a) out[base + a * s.inner] /= total;
        }
    }
    return x.tape->record(std::move(out), {x}, [x, s](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>& Y) {
        Tensor<T>* gx = tape.grad_of(x);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.length * s.inner + in;
                T dot = 0;
                for (std::size_t a = 0; a < s.length; ++a) dot += g[base + a * s.inner] * Y[base + a * s.inner];
                for (std::size_t a = 0; a < s.length; ++a) {
                    const std::size_t idx = base + a * s.inner;
                    (*gx)[idx] += Y[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

template <std::floating_point T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    Tape<T>* tape = parts.front().tape;
    Shape shape = val(parts.front()).shape();
    const AxisSplit first = split_axis(shape, axis);
    std::vector<std::size_t> lengths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& ps = val(p).shape();
        if (ps.size() != shape.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t d = 0; d < ps.size(); ++d) {
            if (d != axis && ps[d] != shape[d]) {
                throw DimensionError("concat: shape mismatch " + shape_string(ps) + " vs " + shape_string(shape));
            }
        }
        lengths.push_back(ps[axis]);
        total += ps[axis];
    }
    shape[axis] = total;
    const std::size_t outer = first.outer, inner = first.inner;
    Tensor<T> out(shape);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Tensor<T>& P = val(parts[i]);
        const std::size_t block = lengths[i] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(P.data() + o * block, block, out.data() + o * total * inner + offset * inner);
        offset += lengths[i];
    }
    std::vector<Var<T>> parents(parts.begin(), parts.end());
    return tape->record(std::move(out), parents,
                        [parents, lengths, outer, inner, total](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
                            std::size_t offset = 0;
                            for (std::size_t i = 0; i < parents.size(); ++i) {
                                const std::size_t block = lengths[i] * inner;
                                if (Tensor<T>* gp = tape.grad_of(parents[i])) {
                                    for (std::size_t o = 0; o < outer; ++o) {
                                        const T* src = g.data() + o * total * inner + offset * inner;
                                        T* dst = gp->data() + o * block;
                                        for (std::size_t e = 0; e < block; ++e) dst[e] += src[e];
                                    }
                                }
                                offset += lengths[i];
                            }
                        });
}

template <std::floating_point T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
    const Tensor<T>& X = val(x);
    const AxisSplit s = split_axis(X.shape(), axis);
    if (begin >= end || end > s.length) {
        throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for axis " +
                             std::to_string(axis) + " of " + shape_string(X.shape()));
    }
    Shape shape = X.shape();
    shape[axis] = end - begin;
    const std::size_t block = (end - begin) * s.inner;
    Tensor<T> out(shape);
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(X.data() + o * s.length * s.inner + begin * s.inner, block, out.data() + o * block);
    return x.tape->record(std::move(out), {x}, [x, s, begin, block](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = tape.grad_of(x);
        for (std::size_t o = 0; o < s.outer; ++o) {
            T* dst = gx->data() + o * s.length * s.inner + begin * s.inner;
            const T* src = g.data() + o * block;
            for (std::size_t e = 0; e < block; ++e) dst[e] += src[e];
        }
    });
}

template <std::floating_point T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> indices) {
    const Tensor<T>& X = val(x);
    const std::size_t cols = X.cols();
    const std::size_t rows = X.rows();
    if (indices.empty()) throw DimensionError("gather_rows: no indices");
    for (std::size_t r : indices) {
        if (r >= rows) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(rows));
    }
    Tensor<T> out({indices.size(), cols});
    for (std::size_t i = 0; i < indices.size(); ++i) std::copy_n(X.data() + indices[i] * cols, cols, out.data() + i * cols);
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return x.tape->record(std::move(out), {x}, [x, idx, cols](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = tape.grad_of(x);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            T* dst = gx->data() + idx[i] * cols;
            const T* src = g.data() + i * cols;
            for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
    });
}

template <std::floating_point T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = val(x).reshaped(std::move(shape));
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        accumulate(tape, x, g);
    });
}

template <std::floating_point T>
Var<T> sum(Var<T> x) {
    T total = 0;
    for (T v : val(x).values()) total += v;
    return x.tape->record(Tensor<T>::scalar(total), {x}, [x](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = tape.grad_of(x);
        for (auto& v : gx->values()) v += g[0];
    });
}

template <std::floating_point T>
Var<T> mean(Var<T> x) {
    return scale(sum(x), T{1} / static_cast<T>(val(x).size()));
}

namespace {

template <std::floating_point T, typename Better>
Var<T> extremum(Var<T> x, Better better) {
    const Tensor<T>& X = val(x);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < X.size(); ++i)
        if (better(X[i], X[arg])) arg = i;
    return x.tape->record(Tensor<T>::scalar(X[arg]), {x}, [x, arg](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        (*tape.grad_of(x))[arg] += g[0];
    });
}

} // namespace

template <std::floating_point T>
Var<T> min(Var<T> x) {
    return extremum(x, [](T a, T b) { return a < b; });
}

template <std::floating_point T>
Var<T> max(Var<T> x) {
    return extremum(x, [](T a, T b) { return a > b; });
}

template <std::floating_point T>
Var<T> dropout(Var<T> x, T rate, std::mt19937_64& rng) {
    if (rate < T{0} || rate >= T{1}) throw ConfigError("dropout rate must lie in [0, 1)");
    if (rate == T{0}) return x;
    const Tensor<T>& X = val(x);
    const T keep_scale = T{1} / (T{1} - rate);
    auto keep = std::make_shared<std::vector<T>>(X.size());
    Tensor<T> out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        (*keep)[i] = u < static_cast<double>(rate) ? T{0} : keep_scale;
        out[i] = X[i] * (*keep)[i];
    }
    return x.tape->record(std::move(out), {x}, [x, keep](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = tape.grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*keep)[i];
    });
}

template <std::floating_point T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> targets) {
    const Tensor<T>& L = val(logits);
    const std::size_t rows = L.rows(), cols = L.cols();
    if (targets.size() != rows) throw DimensionError("cross_entropy: one target per row required");
    auto probs = std::make_shared<std::vector<T>>(L.size());
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= cols) throw DimensionError("cross_entropy: target out of range");
        const T* row = L.data() + r * cols;
        const T best = *std::max_element(row, row + cols);
        T z = 0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - best);
        for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] = std::exp(row[c] - best) / z;
        total += std::log(z) + best - row[targets[r]];
    }
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return logits.tape->record(
        Tensor<T>::scalar(total / static_cast<T>(rows)), {logits},
        [logits, probs, tgt, rows, cols](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
            Tensor<T>* gl = tape.grad_of(logits);
            const T w = g[0] / static_cast<T>(rows);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    (*gl)[r * cols + c] += w * ((*probs)[r * cols + c] - (c == tgt[r] ? T{1} : T{0}));
        });
}

template <std::floating_point T>
Var<T> causal_attention(Var<T> qkv, std::size_t batch, std::size_t seq, std::size_t heads,
                        std::optional<Var<T>> prefix_key, std::optional<Var<T>> prefix_value) {
    const Tensor<T>& Q = val(qkv);
    if (heads == 0 || Q.cols() % 3 != 0) throw DimensionError("causal_attention: packed projection must be 3*width wide");
    const std::size_t width = Q.cols() / 3;
    if (width % heads != 0) throw DimensionError("causal_attention: width not divisible by head count");
    if (Q.rows() != batch * seq) throw DimensionError("causal_attention: rows must equal batch*seq");
    if (prefix_key.has_value() != prefix_value.has_value()) {
        throw DimensionError("causal_attention: prefix key and value must be given together");
    }
    kernels::AttentionShape shape{batch, seq, heads, width / heads, prefix_key.has_value(), true};
    std::vector<Var<T>> parents{qkv};
    std::span<const T> pk, pv;
    if (shape.has_prefix) {
        const Tensor<T>& K = val(*prefix_key);
        const Tensor<T>& V = val(*prefix_value);
        if (K.cols() != width || V.cols() != width || K.rows() != V.rows()) {
            throw DimensionError("causal_attention: prefix width mismatch");
        }
        if (K.rows() == 1) {
            shape.shared_prefix = true;
        } else if (K.rows() == batch) {
            shape.shared_prefix = false;
        } else {
            throw DimensionError("causal_attention: prefix must have 1 or batch rows");
        }
        pk = K.values();
        pv = V.values();
        parents.push_back(*prefix_key);
        parents.push_back(*prefix_value);
    }
    Tensor<T> out({batch * seq, width});
    auto probs = std::make_shared<std::vector<T>>(shape.prob_count());
    kern::attention_forward<T>(shape, Q.values(), pk, pv, out.values(), *probs);
    return qkv.tape->record(std::move(out), parents,
                            [parents, shape, probs](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
                                const Tensor<T>& Q = val(parents[0]);
                                std::span<const T> pk, pv;
                                const std::size_t prefix_size = shape.prefix_rows() * shape.width();
                                std::vector<T> gpk(shape.has_prefix ? prefix_size : 0);
                                std::vector<T> gpv(gpk.size());
                                if (shape.has_prefix) {
                                    pk = val(parents[1]).values();
                                    pv = val(parents[2]).values();
                                }
                                std::vector<T> gq(Q.size());
                                kern::attention_backward<T>(shape, Q.values(), pk, pv, *probs, g.values(), gq, gpk, gpv);
                                if (Tensor<T>* dst = tape.grad_of(parents[0]))
                                    for (std::size_t i = 0; i < gq.size(); ++i) (*dst)[i] += gq[i];
                                if (!shape.has_prefix) return;
                                if (Tensor<T>* dst = tape.grad_of(parents[1]))
                                    for (std::size_t i = 0; i < gpk.size(); ++i) (*dst)[i] += gpk[i];
                                if (Tensor<T>* dst = tape.grad_of(parents[2]))
                                    for (std::size_t i = 0; i < gpv.size(); ++i) (*dst)[i] += gpv[i];
                            });
}

#define PATCHFILL_INSTANTIATE_OPS(T)                                                                                 \
    template Var<T> matmul<T>(Var<T>, Var<T>);                                                                       \
    template Var<T> transpose<T>(Var<T>);                                                                            \
    template Var<T> add<T>(Var<T>, Var<T>);                                                                          \
    template Var<T> sub<T>(Var<T>, Var<T>);                                                                          \
    template Var<T> mul<T>(Var<T>, Var<T>);                                                                          \
    template Var<T> scale<T>(Var<T>, T);                                                                             \
    template Var<T> add_bias<T>(Var<T>, Var<T>);                                                                     \
    template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                                               \
    template Var<T> gelu<T>(Var<T>);                                                                                 \
    template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                                        \
    template Var<T> softmax<T>(Var<T>, std::size_t);                                                                 \
    template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);                                                 \
    template Var<T> slice<T>(Var<T>, std::size_t, std::size_t, std::size_t);                                         \
    template Var<T> gather_rows<T>(Var<T>, std::span<const std::size_t>);                                            \
    template Var<T> reshape<T>(Var<T>, Shape);                                                                       \
    template Var<T> sum<T>(Var<T>);                                                                                  \
    template Var<T> mean<T>(Var<T>);                                                                                 \
    template Var<T> min<T>(Var<T>);                                                                                  \
    template Var<T> max<T>(Var<T>);                                                                                  \
    template Var<T> dropout<T>(Var<T>, T, std::mt19937_64&);                                                         \
    template Var<T> cross_entropy<T>(Var<T>, std::span<const std::size_t>);                                          \
    template Var<T> causal_attention<T>(Var<T>, std::size_t, std::size_t, std::size_t, std::optional<Var<T>>,       \
                                        std::optional<Var<T>>);

PATCHFILL_INSTANTIATE_OPS(float)
PATCHFILL_INSTANTIATE_OPS(double)

} // namespace patchfill::numerics
