#pragma once

#include <string>

#include "astsed/tensor/ops.hpp"
#include "astsed/tensor/param_tree.hpp"

namespace astsed {

// The key projection has no bias: softmax is invariant to it, so it would
// be a parameter with an identically zero gradient.
template <typename T = double>
struct MhsaWeights {
    Var<T> wq, bq, wk, wv, bv, wo, bo;

    static MhsaWeights bind(const ParamBinding<T>& p, const std::string& prefix) {
        return {p(prefix + ".q.weight"), p(prefix + ".q.bias"), p(prefix + ".k.weight"),
                p(prefix + ".v.weight"), p(prefix + ".v.bias"), p(prefix + ".out.weight"),
                p(prefix + ".out.bias")};
    }
};

/// Multi-head self-attention. tokens is [N, C] (one sequence) or [G, N, C]
/// (G independent sequences sharing the weights); attention never crosses
/// groups. No positional term is added here.
template <typename T>
Var<T> mhsa(const Var<T>& tokens, std::size_t heads, const MhsaWeights<T>& w,
            NdArray<T>* weights = nullptr) {
    const auto& shape = tokens.shape();
    if (shape.size() != 2 && shape.size() != 3) {
        throw DimensionError("mhsa: expected [N, C] or [G, N, C], got " + shape_str(shape));
    }
    const std::size_t channels = shape.back();
    if (heads == 0 || channels % heads != 0) {
        throw ConfigError("mhsa: " + std::to_string(channels) + " channels not divisible by " +
                          std::to_string(heads) + " heads");
    }
    Var<T> x = shape.size() == 2 ? reshape(tokens, Shape{1, shape[0], shape[1]}) : tokens;
    Var<T> q = linear(x, w.wq, w.bq);
    Var<T> k = linear(x, w.wk);
    Var<T> v = linear(x, w.wv, w.bv);
    Var<T> out = linear(attention(q, k, v, heads, weights), w.wo, w.bo);
    return shape.size() == 2 ? reshape(out, shape) : out;
}

}  // namespace astsed
