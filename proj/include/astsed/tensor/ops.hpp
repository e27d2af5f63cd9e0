#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "astsed/tensor/autodiff.hpp"

namespace astsed {

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void axpy(NdArray<T>& dst, const NdArray<T>& src, T scale = T{1}) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "add");
    NdArray<T> out = a.value();
    detail::axpy(out, b.value());
    return make_var<T>(std::move(out), {a, b}, [](Node<T>& n) {
        if (auto* g = n.parent_grad(0)) detail::axpy(*g, n.grad);
        if (auto* g = n.parent_grad(1)) detail::axpy(*g, n.grad);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "mul");
    NdArray<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_var<T>(std::move(out), {a, b}, [](Node<T>& n) {
        const auto& av = n.parent_value(0);
        const auto& bv = n.parent_value(1);
        if (auto* g = n.parent_grad(0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        if (auto* g = n.parent_grad(1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    NdArray<T> out = a.value();
    for (auto& v : out.values()) v *= s;
    return make_var<T>(std::move(out), {a}, [s](Node<T>& n) {
        if (auto* g = n.parent_grad(0)) detail::axpy(*g, n.grad, s);
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T total{0};
    for (T v : a.value().values()) total += v;
    return make_var<T>(NdArray<T>::scalar(total), {a}, [](Node<T>& n) {
        if (auto* g = n.parent_grad(0))
            for (auto& v : g->values()) v += n.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    NdArray<T> out = a.value().reshaped(std::move(shape));
    return make_var<T>(std::move(out), {a}, [](Node<T>& n) {
        if (auto* g = n.parent_grad(0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Affine maps and normalization

/// y = x W + b over the trailing axis of x.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    detail::require(wv.rank() == 2 && xv.last_dim() == wv.dim(0),
                    "linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                        shape_str(wv.shape()));
    detail::require(b.value().rank() == 1 && b.value().dim(0) == wv.dim(1),
                    "linear: bias " + shape_str(b.shape()) + " incompatible with weight " +
                        shape_str(wv.shape()));
    Shape out_shape = xv.shape();
    out_shape.back() = wv.dim(1);
    NdArray<T> out(out_shape);
    auto y = as_matrix(out);
    y.noalias() = as_matrix(xv) * as_matrix(wv);
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        b.value().data(), static_cast<Eigen::Index>(wv.dim(1)));
    return make_var<T>(std::move(out), {x, w, b}, [](Node<T>& n) {
        auto dy = as_matrix(n.grad);
        if (auto* g = n.parent_grad(0)) as_matrix(*g).noalias() += dy * as_matrix(n.parent_value(1)).transpose();
        if (auto* g = n.parent_grad(1)) as_matrix(*g).noalias() += as_matrix(n.parent_value(0)).transpose() * dy;
        if (auto* g = n.parent_grad(2)) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(g->data(), static_cast<Eigen::Index>(g->size()));
            gb += dy.colwise().sum();
        }
    });
}

/// y = x W over the trailing axis of x.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    detail::require(wv.rank() == 2 && xv.last_dim() == wv.dim(0),
                    "linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                        shape_str(wv.shape()));
    Shape out_shape = xv.shape();
    out_shape.back() = wv.dim(1);
    NdArray<T> out(out_shape);
    as_matrix(out).noalias() = as_matrix(xv) * as_matrix(wv);
    return make_var<T>(std::move(out), {x, w}, [](Node<T>& n) {
        auto dy = as_matrix(n.grad);
        if (auto* g = n.parent_grad(0)) as_matrix(*g).noalias() += dy * as_matrix(n.parent_value(1)).transpose();
        if (auto* g = n.parent_grad(1)) as_matrix(*g).noalias() += as_matrix(n.parent_value(0)).transpose() * dy;
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
    const auto& xv = x.value();
    const std::size_t c = xv.empty() ? 0 : xv.last_dim();
    detail::require(c >= 1, "layer_norm: empty normalized axis");
    detail::require(gain.value().size() == c && bias.value().size() == c,
                    "layer_norm: affine parameters " + shape_str(gain.shape()) + "/" +
                        shape_str(bias.shape()) + " do not match input " + shape_str(xv.shape()));
    const std::size_t rows = xv.size() / c;
    NdArray<T> out(xv.shape());
    std::vector<T> xhat(xv.size());
    std::vector<T> inv_std(rows);
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * c;
        T mu{0};
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<T>(c);
        T var{0};
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(c);
        const T inv = T{1} / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (row[j] - mu) * inv;
            xhat[r * c + j] = h;
            out[r * c + j] = gv[j] * h + bv[j];
        }
    }
    return make_var<T>(std::move(out), {x, gain, bias},
                       [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
        const auto& gv = n.parent_value(1);
        auto* gx = n.parent_grad(0);
        auto* gg = n.parent_grad(1);
        auto* gb = n.parent_grad(2);
        std::vector<T> dxhat(c);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* dy = n.grad.data() + r * c;
            const T* h = xhat.data() + r * c;
            if (gg)
                for (std::size_t j = 0; j < c; ++j) (*gg)[j] += dy[j] * h[j];
            if (gb)
                for (std::size_t j = 0; j < c; ++j) (*gb)[j] += dy[j];
            if (!gx) continue;
            T mean_d{0}, mean_dh{0};
            for (std::size_t j = 0; j < c; ++j) {
                dxhat[j] = dy[j] * gv[j];
                mean_d += dxhat[j];
                mean_dh += dxhat[j] * h[j];
            }
            mean_d /= static_cast<T>(c);
            mean_dh /= static_cast<T>(c);
            T* out = gx->data() + r * c;
            for (std::size_t j = 0; j < c; ++j)
                out[j] += inv_std[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax and activations

namespace detail {

template <typename T>
void softmax_row(const T* in, T* out, std::size_t k) {
    T m = *std::max_element(in, in + k);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) {
        out[j] = std::exp(in[j] - m);
        z += out[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] /= z;
}

// dx = p * (dy - <dy, p>)
template <typename T>
void softmax_row_backward(const T* p, const T* dy, T* dx, std::size_t k) {
    T dot{0};
    for (std::size_t j = 0; j < k; ++j) dot += dy[j] * p[j];
    for (std::size_t j = 0; j < k; ++j) dx[j] += p[j] * (dy[j] - dot);
}

}  // namespace detail

template <typename T>
Var<T> softmax_last(const Var<T>& x) {
    const auto& xv = x.value();
    const std::size_t k = xv.last_dim();
    NdArray<T> out(xv.shape());
    for (std::size_t r = 0; r < xv.size() / k; ++r)
        detail::softmax_row(xv.data() + r * k, out.data() + r * k, k);
    return make_var<T>(std::move(out), {x}, [k](Node<T>& n) {
        if (auto* g = n.parent_grad(0))
            for (std::size_t r = 0; r < g->size() / k; ++r)
                detail::softmax_row_backward(n.value.data() + r * k, n.grad.data() + r * k,
                                             g->data() + r * k, k);
    });
}

enum class Activation { gelu, sigmoid, tanh };

inline Activation parse_activation(std::string_view name) {
    if (name == "gelu") return Activation::gelu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

namespace detail {

template <typename T>
T sigmoid(T x) {
    return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

// Exact GELU: x * Phi(x).
template <typename T>
T gelu(T x) {
    return T{0.5} * x * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
    const T cdf = T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T{-0.5} * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    return cdf + x * pdf;
}

}  // namespace detail

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind) {
    NdArray<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (kind) {
            case Activation::gelu: out[i] = detail::gelu(xv[i]); break;
            case Activation::sigmoid: out[i] = detail::sigmoid(xv[i]); break;
            case Activation::tanh: out[i] = std::tanh(xv[i]); break;
        }
    }
    return make_var<T>(std::move(out), {x}, [kind](Node<T>& n) {
        auto* g = n.parent_grad(0);
        if (!g) return;
        const auto& xv = n.parent_value(0);
        for (std::size_t i = 0; i < g->size(); ++i) {
            const T y = n.value[i];
            T d{};
            switch (kind) {
                case Activation::gelu: d = detail::gelu_grad(xv[i]); break;
                case Activation::sigmoid: d = y * (T{1} - y); break;
                case Activation::tanh: d = T{1} - y * y; break;
            }
            (*g)[i] += n.grad[i] * d;
        }
    });
}

template <typename T>
Var<T> activation(const Var<T>& x, std::string_view kind) {
    return activation(x, parse_activation(kind));
}

// ---------------------------------------------------------------------------
// Attention

/// Scaled dot-product attention applied independently to each group.
/// q, k, v: [G, N, C]; heads split C. Returns [G, N, C].
/// When `weights` is given it receives the attention maps [G, heads, N, N].
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                 NdArray<T>* weights = nullptr) {
    detail::require(q.value().rank() == 3, "attention: expected [groups, tokens, channels], got " +
                                               shape_str(q.shape()));
    detail::require_same_shape(q, k, "attention");
    detail::require_same_shape(q, v, "attention");
    const std::size_t groups = q.dim(0), tokens = q.dim(1), channels = q.dim(2);
    if (heads == 0 || channels % heads != 0) {
        throw ConfigError("attention: " + std::to_string(channels) +
                          " channels not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t hd = channels / heads;
    const T scale_factor = T{1} / std::sqrt(static_cast<T>(hd));
    using Stride = Eigen::OuterStride<>;
    using CMap = Eigen::Map<const RowMatrix<T>, 0, Stride>;
    using MMap = Eigen::Map<RowMatrix<T>, 0, Stride>;
    const auto N = static_cast<Eigen::Index>(tokens);
    const auto D = static_cast<Eigen::Index>(hd);
    const Stride stride(static_cast<Eigen::Index>(channels));

    NdArray<T> out(q.shape());
    std::vector<T> probs(groups * heads * tokens * tokens);
    RowMatrix<T> scores(N, N);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = g * tokens * channels + h * hd;
            CMap qm(q.value().data() + off, N, D, stride);
            CMap km(k.value().data() + off, N, D, stride);
            CMap vm(v.value().data() + off, N, D, stride);
            scores.noalias() = qm * km.transpose();
            scores *= scale_factor;
            T* p = probs.data() + (g * heads + h) * tokens * tokens;
            for (std::size_t r = 0; r < tokens; ++r)
                detail::softmax_row(scores.data() + r * tokens, p + r * tokens, tokens);
            MMap om(out.data() + off, N, D, stride);
            om.noalias() = Eigen::Map<const RowMatrix<T>>(p, N, N) * vm;
        }
    }
    if (weights) *weights = NdArray<T>(Shape{groups, heads, tokens, tokens}, probs);

    return make_var<T>(std::move(out), {q, k, v},
                       [=, probs = std::move(probs)](Node<T>& n) {
        auto* gq = n.parent_grad(0);
        auto* gk = n.parent_grad(1);
        auto* gv = n.parent_grad(2);
        RowMatrix<T> dp(N, N), ds(N, N);
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = g * tokens * channels + h * hd;
                CMap qm(n.parent_value(0).data() + off, N, D, stride);
                CMap km(n.parent_value(1).data() + off, N, D, stride);
                CMap vm(n.parent_value(2).data() + off, N, D, stride);
                CMap dout(n.grad.data() + off, N, D, stride);
                Eigen::Map<const RowMatrix<T>> p(probs.data() + (g * heads + h) * tokens * tokens, N, N);
                if (gv) MMap(gv->data() + off, N, D, stride).noalias() += p.transpose() * dout;
                if (!gq && !gk) continue;
                dp.noalias() = dout * vm.transpose();
                ds.setZero();
                for (std::size_t r = 0; r < tokens; ++r)
                    detail::softmax_row_backward(p.data() + r * tokens, dp.data() + r * tokens,
                                                 ds.data() + r * tokens, tokens);
                ds *= scale_factor;
                if (gq) MMap(gq->data() + off, N, D, stride).noalias() += ds * km;
                if (gk) MMap(gk->data() + off, N, D, stride).noalias() += ds.transpose() * qm;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Token-grid reshuffles. All operate on rank-3 [A, B, C] arrays.

/// [A, B, C] -> [B, A, C]
template <typename T>
Var<T> swap_axes01(const Var<T>& x) {
    detail::require(x.value().rank() == 3, "swap_axes01: expected rank 3, got " + shape_str(x.shape()));
    const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
    NdArray<T> out(Shape{b, a, c});
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
            std::copy_n(&x.value().at(i, j, 0), c, &out.at(j, i, 0));
    return make_var<T>(std::move(out), {x}, [a, b, c](Node<T>& n) {
        if (auto* g = n.parent_grad(0))
            for (std::size_t i = 0; i < a; ++i)
                for (std::size_t j = 0; j < b; ++j)
                    for (std::size_t k = 0; k < c; ++k) g->at(i, j, k) += n.grad.at(j, i, k);
    });
}

/// Prepends the same token vector [C] to every group: [G, N, C] -> [G, N+1, C].
template <typename T>
Var<T> prepend_token(const Var<T>& x, const Var<T>& token) {
    detail::require(x.value().rank() == 3 && token.value().size() == x.dim(2),
                    "prepend_token: token " + shape_str(token.shape()) + " incompatible with " +
                        shape_str(x.shape()));
    const std::size_t g = x.dim(0), nt = x.dim(1), c = x.dim(2);
    NdArray<T> out(Shape{g, nt + 1, c});
    for (std::size_t i = 0; i < g; ++i) {
        std::copy_n(token.value().data(), c, &out.at(i, 0, 0));
        std::copy_n(&x.value().at(i, 0, 0), nt * c, &out.at(i, 1, 0));
    }
    return make_var<T>(std::move(out), {x, token}, [g, nt, c](Node<T>& n) {
        if (auto* gx = n.parent_grad(0))
            for (std::size_t i = 0; i < g; ++i)
                for (std::size_t j = 0; j < nt * c; ++j) (&gx->at(i, 0, 0))[j] += (&n.grad.at(i, 1, 0))[j];
        if (auto* gt = n.parent_grad(1))
            for (std::size_t i = 0; i < g; ++i)
                for (std::size_t k = 0; k < c; ++k) (*gt)[k] += n.grad.at(i, 0, k);
    });
}

/// Picks token `index` of every group: [G, N, C] -> [G, C].
template <typename T>
Var<T> select_token(const Var<T>& x, std::size_t index) {
    detail::require(x.value().rank() == 3 && index < x.dim(1),
                    "select_token: index " + std::to_string(index) + " out of range for " + shape_str(x.shape()));
    const std::size_t g = x.dim(0), c = x.dim(2);
    NdArray<T> out(Shape{g, c});
    for (std::size_t i = 0; i < g; ++i) std::copy_n(&x.value().at(i, index, 0), c, &out.at(i, 0));
    return make_var<T>(std::move(out), {x}, [g, c, index](Node<T>& n) {
        if (auto* gx = n.parent_grad(0))
            for (std::size_t i = 0; i < g; ++i)
                for (std::size_t k = 0; k < c; ++k) gx->at(i, index, k) += n.grad.at(i, k);
    });
}

/// Picks slice `index` along the leading axis: [A, B, C] -> [B, C].
template <typename T>
Var<T> select_axis0(const Var<T>& x, std::size_t index) {
    detail::require(x.value().rank() == 3 && index < x.dim(0),
                    "select_axis0: index " + std::to_string(index) + " out of range for " + shape_str(x.shape()));
    const std::size_t slab = x.dim(1) * x.dim(2);
    NdArray<T> out(Shape{x.dim(1), x.dim(2)});
    std::copy_n(x.value().data() + index * slab, slab, out.data());
    return make_var<T>(std::move(out), {x}, [slab, index](Node<T>& n) {
        if (auto* g = n.parent_grad(0))
            for (std::size_t j = 0; j < slab; ++j) (*g)[index * slab + j] += n.grad[j];
    });
}

/// Mean over the leading axis: [A, B, C] -> [B, C]. Each output sums its A
/// inputs in ascending-value order, so the result is bitwise independent of
/// how the leading axis is ordered.
template <typename T>
Var<T> mean_axis0(const Var<T>& x) {
    detail::require(x.value().rank() == 3, "mean_axis0: expected rank 3, got " + shape_str(x.shape()));
    const std::size_t a = x.dim(0), slab = x.dim(1) * x.dim(2);
    NdArray<T> out(Shape{x.dim(1), x.dim(2)});
    std::vector<T> column(a);
    for (std::size_t j = 0; j < slab; ++j) {
        for (std::size_t i = 0; i < a; ++i) column[i] = x.value()[i * slab + j];
        std::sort(column.begin(), column.end());
        T s{0};
        for (T v : column) s += v;
        out[j] = s / static_cast<T>(a);
    }
    return make_var<T>(std::move(out), {x}, [a, slab](Node<T>& n) {
        if (auto* g = n.parent_grad(0)) {
            const T w = T{1} / static_cast<T>(a);
            for (std::size_t i = 0; i < a; ++i)
                for (std::size_t j = 0; j < slab; ++j) (*g)[i * slab + j] += w * n.grad[j];
        }
    });
}

/// Repeats each row n times: [L, C] -> [nL, C], out[i] = in[i / n].
template <typename T>
Var<T> repeat_rows(const Var<T>& x, std::size_t n) {
    if (n == 0) throw ConfigError("repeat_rows: ratio must be at least 1");
    detail::require(x.value().rank() == 2, "repeat_rows: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t l = x.dim(0), c = x.dim(1);
    NdArray<T> out(Shape{l * n, c});
    for (std::size_t i = 0; i < l * n; ++i) std::copy_n(&x.value().at(i / n, 0), c, &out.at(i, 0));
    return make_var<T>(std::move(out), {x}, [l, c, n](Node<T>& node) {
        if (auto* g = node.parent_grad(0))
            for (std::size_t i = 0; i < l * n; ++i)
                for (std::size_t k = 0; k < c; ++k) g->at(i / n, k) += node.grad.at(i, k);
    });
}

/// [L, A] ++ [L, B] -> [L, A+B]
template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
    detail::require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(0) == b.dim(0),
                    "concat_last: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t l = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    NdArray<T> out(Shape{l, ca + cb});
    for (std::size_t i = 0; i < l; ++i) {
        std::copy_n(&a.value().at(i, 0), ca, &out.at(i, 0));
        std::copy_n(&b.value().at(i, 0), cb, &out.at(i, ca));
    }
    return make_var<T>(std::move(out), {a, b}, [l, ca, cb](Node<T>& n) {
        if (auto* g = n.parent_grad(0))
            for (std::size_t i = 0; i < l; ++i)
                for (std::size_t k = 0; k < ca; ++k) g->at(i, k) += n.grad.at(i, k);
        if (auto* g = n.parent_grad(1))
            for (std::size_t i = 0; i < l; ++i)
                for (std::size_t k = 0; k < cb; ++k) g->at(i, k) += n.grad.at(i, ca + k);
    });
}

// ---------------------------------------------------------------------------
// Gated recurrent unit

/// Single-direction GRU over x [L, Din] with zero initial state. Gate blocks
/// in the 3H axis are ordered (reset, update, candidate):
///   r = s(x Wr + br + h Ur + cr), z = s(x Wz + bz + h Uz + cz),
///   n = tanh(x Wn + bn + r * (h Un + cn)), h' = (1 - z) n + z h.
/// `reverse` runs from the last step to the first.
template <typename T>
Var<T> gru(const Var<T>& x, const Var<T>& wx, const Var<T>& wh, const Var<T>& bx,
           const Var<T>& bh, bool reverse) {
    const auto& xv = x.value();
    detail::require(xv.rank() == 2, "gru: expected [steps, features], got " + shape_str(xv.shape()));
    detail::require(wh.value().rank() == 2 && wh.dim(1) == 3 * wh.dim(0),
                    "gru: recurrent weight must be [H, 3H], got " + shape_str(wh.shape()));
    const std::size_t steps = xv.dim(0), hidden = wh.dim(0), h3 = 3 * hidden;
    detail::require(wx.value().rank() == 2 && wx.dim(0) == xv.dim(1) && wx.dim(1) == h3,
                    "gru: input weight " + shape_str(wx.shape()) + " incompatible with input " +
                        shape_str(xv.shape()));
    detail::require(bx.value().size() == h3 && bh.value().size() == h3, "gru: bias size must be 3H");

    using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
    const auto H = static_cast<Eigen::Index>(hidden);
    NdArray<T> xg(Shape{steps, h3});
    as_matrix(xg).noalias() = as_matrix(xv) * as_matrix(wx.value());
    as_matrix(xg).rowwise() += Eigen::Map<const RowVec>(bx.value().data(), 3 * H);

    // Per step: r, z, n, (h Un + cn), h_prev.
    std::vector<T> cache(steps * hidden * 5);
    NdArray<T> out(Shape{steps, hidden});
    RowVec h = RowVec::Zero(H), hg(3 * H);
    const auto bh_row = Eigen::Map<const RowVec>(bh.value().data(), 3 * H);
    const auto whm = as_matrix(wh.value());
    for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t t = reverse ? steps - 1 - s : s;
        hg.noalias() = h * whm;
        hg += bh_row;
        const T* xr = &xg.at(t, 0);
        T* c = cache.data() + t * hidden * 5;
        for (std::size_t j = 0; j < hidden; ++j) {
            const T r = detail::sigmoid(xr[j] + hg[j]);
            const T z = detail::sigmoid(xr[hidden + j] + hg[hidden + j]);
            const T hn = hg[2 * hidden + j];
            const T cand = std::tanh(xr[2 * hidden + j] + r * hn);
            c[j] = r;
            c[hidden + j] = z;
            c[2 * hidden + j] = cand;
            c[3 * hidden + j] = hn;
            c[4 * hidden + j] = h[j];
        }
        for (std::size_t j = 0; j < hidden; ++j) {
            const T z = c[hidden + j];
            h[j] = (T{1} - z) * c[2 * hidden + j] + z * h[j];
            out.at(t, j) = h[j];
        }
    }

    return make_var<T>(std::move(out), {x, wx, wh, bx, bh},
                       [=, cache = std::move(cache)](Node<T>& n) {
        auto* gx = n.parent_grad(0);
        auto* gwx = n.parent_grad(1);
        auto* gwh = n.parent_grad(2);
        auto* gbx = n.parent_grad(3);
        auto* gbh = n.parent_grad(4);
        const auto whm = as_matrix(n.parent_value(2));
        NdArray<T> dxg(Shape{steps, h3});
        RowVec dh_next = RowVec::Zero(H), dhg(3 * H), hprev(H);
        for (std::size_t s = steps; s-- > 0;) {
            const std::size_t t = reverse ? steps - 1 - s : s;
            const T* c = cache.data() + t * hidden * 5;
            T* dx = &dxg.at(t, 0);
            for (std::size_t j = 0; j < hidden; ++j) {
                const T r = c[j], z = c[hidden + j], cand = c[2 * hidden + j];
                const T hn = c[3 * hidden + j], hp = c[4 * hidden + j];
                const T dh = n.grad.at(t, j) + dh_next[j];
                const T dcand = dh * (T{1} - z);
                const T dz = dh * (hp - cand);
                const T dan = dcand * (T{1} - cand * cand);
                const T dar = dan * hn * r * (T{1} - r);
                const T daz = dz * z * (T{1} - z);
                dx[j] = dar;
                dx[hidden + j] = daz;
                dx[2 * hidden + j] = dan;
                dhg[j] = dar;
                dhg[hidden + j] = daz;
                dhg[2 * hidden + j] = dan * r;
                dh_next[j] = dh * z;
                hprev[j] = hp;
            }
            if (gwh) as_matrix(*gwh).noalias() += hprev.transpose() * dhg;
            if (gbh)
                for (std::size_t j = 0; j < h3; ++j) (*gbh)[j] += dhg[j];
            dh_next.noalias() += dhg * whm.transpose();
        }
        if (gx) as_matrix(*gx).noalias() += as_matrix(dxg) * as_matrix(n.parent_value(1)).transpose();
        if (gwx) as_matrix(*gwx).noalias() += as_matrix(n.parent_value(0)).transpose() * as_matrix(dxg);
        if (gbx) {
            Eigen::Map<RowVec> gb(gbx->data(), 3 * H);
            gb += as_matrix(dxg).colwise().sum();
        }
    });
}

// ---------------------------------------------------------------------------
// Clip pooling and losses

enum class ClipPooling { linear_softmax, max, mean };

inline ClipPooling parse_clip_pooling(std::string_view name) {
    if (name == "linear_softmax") return ClipPooling::linear_softmax;
    if (name == "max") return ClipPooling::max;
    if (name == "mean") return ClipPooling::mean;
    throw ConfigError("unknown clip pooling '" + std::string(name) + "'");
}

inline const char* to_string(ClipPooling p) {
    switch (p) {
        case ClipPooling::linear_softmax: return "linear_softmax";
        case ClipPooling::max: return "max";
        case ClipPooling::mean: return "mean";
    }
    return "?";
}

/// Frame probabilities [L, K] -> clip probabilities [K].
/// linear_softmax: sum p^2 / sum p (0 when sum p == 0).
template <typename T>
Var<T> pool_frames(const Var<T>& p, ClipPooling kind) {
    detail::require(p.value().rank() == 2, "pool_frames: expected [steps, classes], got " + shape_str(p.shape()));
    const std::size_t l = p.dim(0), k = p.dim(1);
    const auto& pv = p.value();
    NdArray<T> out(Shape{k});
    std::vector<std::size_t> argmax(k, 0);
    std::vector<T> s1(k, T{0}), s2(k, T{0});
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t t = 0; t < l; ++t) {
            const T v = pv.at(t, j);
            s1[j] += v;
            s2[j] += v * v;
            if (v > pv.at(argmax[j], j)) argmax[j] = t;
        }
        switch (kind) {
            case ClipPooling::linear_softmax: out[j] = s1[j] > T{0} ? s2[j] / s1[j] : T{0}; break;
            case ClipPooling::max: out[j] = pv.at(argmax[j], j); break;
            case ClipPooling::mean: out[j] = s1[j] / static_cast<T>(l); break;
        }
    }
    return make_var<T>(std::move(out), {p}, [=](Node<T>& n) {
        auto* g = n.parent_grad(0);
        if (!g) return;
        const auto& pv = n.parent_value(0);
        for (std::size_t j = 0; j < k; ++j) {
            const T dy = n.grad[j];
            switch (kind) {
                case ClipPooling::linear_softmax:
                    if (s1[j] > T{0})
                        for (std::size_t t = 0; t < l; ++t)
                            g->at(t, j) += dy * (T{2} * pv.at(t, j) * s1[j] - s2[j]) / (s1[j] * s1[j]);
                    break;
                case ClipPooling::max: g->at(argmax[j], j) += dy; break;
                case ClipPooling::mean:
                    for (std::size_t t = 0; t < l; ++t) g->at(t, j) += dy / static_cast<T>(l);
                    break;
            }
        }
    });
}

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy of probabilities against (possibly soft)
/// targets. Probabilities are clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> bce(const Var<T>& p, const NdArray<T>& target) {
    detail::require(p.shape() == target.shape(),
                    "bce: prediction " + shape_str(p.shape()) + " vs target " + shape_str(target.shape()));
    const T lo = static_cast<T>(kBceClamp), hi = T{1} - lo;
    const auto& pv = p.value();
    T total{0};
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const T q = std::clamp(pv[i], lo, hi);
        total -= target[i] * std::log(q) + (T{1} - target[i]) * std::log(T{1} - q);
    }
    const T count = static_cast<T>(pv.size());
    return make_var<T>(NdArray<T>::scalar(total / count), {p}, [=](Node<T>& n) {
        auto* g = n.parent_grad(0);
        if (!g) return;
        const auto& pv = n.parent_value(0);
        for (std::size_t i = 0; i < g->size(); ++i) {
            if (pv[i] < lo || pv[i] > hi) continue;
            (*g)[i] += n.grad[0] * (pv[i] - target[i]) / (pv[i] * (T{1} - pv[i])) / count;
        }
    });
}

/// Mean squared error against a constant target.
template <typename T>
Var<T> mse(const Var<T>& a, const NdArray<T>& target) {
    detail::require(a.shape() == target.shape(),
                    "mse: prediction " + shape_str(a.shape()) + " vs target " + shape_str(target.shape()));
    const auto& av = a.value();
    T total{0};
    for (std::size_t i = 0; i < av.size(); ++i) total += (av[i] - target[i]) * (av[i] - target[i]);
    const T count = static_cast<T>(av.size());
    return make_var<T>(NdArray<T>::scalar(total / count), {a}, [=](Node<T>& n) {
        if (auto* g = n.parent_grad(0)) {
            const auto& av = n.parent_value(0);
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += n.grad[0] * T{2} * (av[i] - target[i]) / count;
        }
    });
}

/// Inverted dropout: zeroes each entry with probability `rate` and scales
/// survivors by 1 / (1 - rate). rate 0 returns x itself.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
    if (rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const T s = static_cast<T>(1.0 / (1.0 - rate));
    NdArray<T> mask(x.shape());
    for (auto& m : mask.values()) m = keep(rng) ? s : T{0};
    NdArray<T> out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return make_var<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& n) {
        if (auto* g = n.parent_grad(0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * mask[i];
    });
}

}  // namespace astsed
