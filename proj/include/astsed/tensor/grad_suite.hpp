#pragma once

#include <functional>
#include <string>
#include <vector>

#include "astsed/tensor/attention.hpp"
#include "astsed/tensor/grad_check.hpp"
#include "astsed/util/rng.hpp"

namespace astsed {

struct SuiteResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t points = 0;
};

namespace suite_detail {

using Tree = ParamTree<double>;
using Binding = ParamBinding<double>;

inline NdArray<double> normal(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
    NdArray<double> a(std::move(shape));
    for (auto& v : a.values()) v = sd * normal01(rng);
    return a;
}

inline NdArray<double> unit(Shape shape, std::mt19937_64& rng) {
    NdArray<double> a(std::move(shape));
    for (auto& v : a.values()) v = uniform01(rng);
    return a;
}

// Weighted sum with fixed random weights, so every output coordinate
// reaches the scalar.
inline Var<double> project(const Var<double>& y, std::mt19937_64& rng) {
    return sum(mul(y, Var<double>::constant(normal(y.shape(), rng))));
}

inline Tree tree_of(std::initializer_list<std::pair<std::string, NdArray<double>>> leaves) {
    Tree t;
    for (const auto& [k, v] : leaves) t.add(k, v);
    return t;
}

struct Case {
    const char* name;
    std::function<Var<double>(const Binding&, std::mt19937_64&)> fn;
    std::function<Tree(std::mt19937_64&)> point;
};

inline Tree gru_point(std::mt19937_64& r) {
    return tree_of({{"x", normal({5, 3}, r)}, {"wx", normal({3, 6}, r, 0.7)}, {"wh", normal({2, 6}, r, 0.7)},
                    {"bx", normal({6}, r, 0.3)}, {"bh", normal({6}, r, 0.3)}});
}

inline std::vector<Case> primitive_cases() {
    using R = std::mt19937_64;
    return {
        {"linear", [](const Binding& p, R& r) { return project(linear(p("x"), p("w"), p("b")), r); },
         [](R& r) { return tree_of({{"x", normal({3, 4}, r)}, {"w", normal({4, 5}, r)}, {"b", normal({5}, r)}}); }},
        {"linear_nobias", [](const Binding& p, R& r) { return project(linear(p("x"), p("w")), r); },
         [](R& r) { return tree_of({{"x", normal({2, 3, 4}, r)}, {"w", normal({4, 2}, r)}}); }},
        {"layer_norm", [](const Binding& p, R& r) { return project(layer_norm(p("x"), p("g"), p("b"), 1e-6), r); },
         [](R& r) { return tree_of({{"x", normal({3, 6}, r)}, {"g", normal({6}, r)}, {"b", normal({6}, r)}}); }},
        {"softmax_last", [](const Binding& p, R& r) { return project(softmax_last(p("x")), r); },
         [](R& r) { return tree_of({{"x", normal({2, 5}, r)}}); }},
        {"gelu", [](const Binding& p, R& r) { return project(activation(p("x"), Activation::gelu), r); },
         [](R& r) { return tree_of({{"x", normal({8}, r, 2.0)}}); }},
        {"sigmoid", [](const Binding& p, R& r) { return project(activation(p("x"), Activation::sigmoid), r); },
         [](R& r) { return tree_of({{"x", normal({8}, r, 2.0)}}); }},
        {"tanh", [](const Binding& p, R& r) { return project(activation(p("x"), Activation::tanh), r); },
         [](R& r) { return tree_of({{"x", normal({8}, r, 2.0)}}); }},
        {"add_mul_scale", [](const Binding& p, R& r) { return project(scale(add(mul(p("x"), p("y")), p("x")), 1.7), r); },
         [](R& r) { return tree_of({{"x", normal({6}, r)}, {"y", normal({6}, r)}}); }},
        {"sum_mean_reshape", [](const Binding& p, R& r) {
             return add(mean(mul(p("x"), p("x"))), project(reshape(p("x"), Shape{3, 2}), r));
         },
         [](R& r) { return tree_of({{"x", normal({2, 3}, r)}}); }},
        {"attention", [](const Binding& p, R& r) { return project(attention(p("q"), p("k"), p("v"), 2), r); },
         [](R& r) {
             return tree_of({{"q", normal({2, 4, 6}, r)}, {"k", normal({2, 4, 6}, r)}, {"v", normal({2, 4, 6}, r)}});
         }},
        {"mhsa", [](const Binding& p, R& r) { return project(mhsa(p("x"), 2, MhsaWeights<double>::bind(p, "attn")), r); },
         [](R& r) {
             auto t = tree_of({{"x", normal({5, 4}, r)}});
             for (std::string n : {"q", "k", "v", "out"}) {
                 t.add("attn." + n + ".weight", normal({4, 4}, r, 0.5));
                 if (n != "k") t.add("attn." + n + ".bias", normal({4}, r, 0.1));
             }
             return t;
         }},
        {"swap_select_prepend", [](const Binding& p, R& r) {
             auto g = prepend_token(swap_axes01(p("x")), p("tok"));
             return add(project(select_token(g, 0), r), project(select_axis0(g, 1), r));
         },
         [](R& r) { return tree_of({{"x", normal({3, 2, 4}, r)}, {"tok", normal({4}, r)}}); }},
        {"mean_axis0", [](const Binding& p, R& r) { return project(mean_axis0(p("x")), r); },
         [](R& r) { return tree_of({{"x", normal({3, 2, 4}, r)}}); }},
        {"repeat_concat", [](const Binding& p, R& r) {
             return project(concat_last(repeat_rows(p("a"), 3), repeat_rows(p("b"), 3)), r);
         },
         [](R& r) { return tree_of({{"a", normal({2, 3}, r)}, {"b", normal({2, 2}, r)}}); }},
        {"gru_forward", [](const Binding& p, R& r) {
             return project(gru(p("x"), p("wx"), p("wh"), p("bx"), p("bh"), false), r);
         }, gru_point},
        {"gru_reverse", [](const Binding& p, R& r) {
             return project(gru(p("x"), p("wx"), p("wh"), p("bx"), p("bh"), true), r);
         }, gru_point},
        {"pool_linear_softmax", [](const Binding& p, R&) {
             return sum(pool_frames(activation(p("x"), Activation::sigmoid), ClipPooling::linear_softmax));
         },
         [](R& r) { return tree_of({{"x", normal({6, 3}, r)}}); }},
        {"pool_mean", [](const Binding& p, R&) {
             return sum(pool_frames(activation(p("x"), Activation::sigmoid), ClipPooling::mean));
         },
         [](R& r) { return tree_of({{"x", normal({6, 3}, r)}}); }},
        {"pool_max", [](const Binding& p, R&) {
             return sum(pool_frames(activation(p("x"), Activation::sigmoid), ClipPooling::max));
         },
         [](R& r) { return tree_of({{"x", normal({6, 3}, r)}}); }},
        {"dropout", [](const Binding& p, R& r) { return project(dropout(p("x"), 0.3, r), r); },
         [](R& r) { return tree_of({{"x", normal({10}, r)}}); }},
        {"bce", [](const Binding& p, R& r) { return bce(activation(p("x"), Activation::sigmoid), unit({4, 3}, r)); },
         [](R& r) { return tree_of({{"x", normal({4, 3}, r)}}); }},
        {"mse", [](const Binding& p, R& r) { return mse(p("x"), normal({4, 3}, r)); },
         [](R& r) { return tree_of({{"x", normal({4, 3}, r)}}); }},
    };
}

}  // namespace suite_detail

/// Gradient check of every differentiable primitive at `points` random
/// points each; reports the worst relative error per primitive.
inline std::vector<SuiteResult> primitive_grad_suite(std::uint64_t seed = 8, std::size_t points = 20,
                                                     double step = 1e-5) {
    std::vector<SuiteResult> out;
    for (const auto& c : suite_detail::primitive_cases()) {
        auto rng = make_rng(seed, c.name);
        SuiteResult res{c.name, 0.0, points};
        for (std::size_t i = 0; i < points; ++i) {
            auto at = c.point(rng);
            const std::uint64_t fn_seed = rng();
            auto fn = [&](const ParamBinding<double>& p) {
                std::mt19937_64 local(fn_seed);
                return c.fn(p, local);
            };
            res.max_rel_error = std::max(res.max_rel_error, grad_check(fn, at, step).max_rel_error);
        }
        out.push_back(res);
    }
    return out;
}

}  // namespace astsed
