#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "astsed/tensor/attention.hpp"
#include "astsed/tensor/grad_check.hpp"
#include "astsed/tensor/grad_suite.hpp"
#include "test_util.hpp"

using namespace astsed;
using astsed::testing::random_array;
using astsed::testing::random_projection;
using V = Var<double>;
using A = NdArray<double>;

namespace {

constexpr double kStep = 1e-5;
constexpr double kPrimitiveTol = 1e-4;
constexpr int kRandomPoints = 20;

MhsaWeights<double> const_mhsa(std::size_t c, std::mt19937_64& rng, ParamTree<double>* into = nullptr) {
    ParamTree<double> t;
    for (const char* name : {"q", "k", "v", "out"}) {
        t.add(std::string("attn.") + name + ".weight", random_array({c, c}, rng, 0.4));
        if (std::string(name) != "k") t.add(std::string("attn.") + name + ".bias", random_array({c}, rng, 0.1));
    }
    if (into) *into = t;
    ParamBinding<double> b(t, false);
    return MhsaWeights<double>::bind(b, "attn");
}

}  // namespace

TEST(Linear, IdentityAndHandArithmetic) {
    auto y = linear(V::constant(A::vector({1, 2})), V::constant(A::matrix(2, 2, {1, 0, 0, 1})),
                    V::constant(A::vector({0, 0})));
    EXPECT_EQ(y.value().buffer(), (std::vector<double>{1, 2}));

    auto z = linear(V::constant(A::vector({1, 1})), V::constant(A::matrix(2, 1, {2, 3})),
                    V::constant(A::vector({1})));
    EXPECT_EQ(z.value().buffer(), (std::vector<double>{6}));
}

TEST(Linear, BiasGradientIsAllOnesPerRow) {
    std::mt19937_64 rng(1);
    auto x = V::constant(random_array({3, 4}, rng));
    auto w = V::constant(random_array({4, 2}, rng));
    auto b = V::parameter(random_array({2}, rng));
    backward(sum(linear(x, w, b)));
    // Three rows each contribute one to every bias entry.
    EXPECT_DOUBLE_EQ(b.grad()[0], 3.0);
    EXPECT_DOUBLE_EQ(b.grad()[1], 3.0);

    auto report = grad_check_input([&](const V& bias) { return sum(linear(x, w, bias)); },
                                   b.value(), kStep);
    EXPECT_LE(report.max_rel_error, 1e-8);
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
    try {
        linear(V::constant(A(Shape{2, 3})), V::constant(A(Shape{4, 5})), V::constant(A(Shape{5})));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
    }
}

TEST(LayerNorm, ConstantSliceNormalizesToZero) {
    auto y = layer_norm(V::constant(A::vector({5, 5, 5})), V::constant(A(Shape{3}, 1.0)),
                        V::constant(A(Shape{3}, 0.0)), 1e-6);
    for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, UnitSliceUnchangedWithinEps) {
    const double eps = 1e-6;
    auto y = layer_norm(V::constant(A::vector({1, -1})), V::constant(A(Shape{2}, 1.0)),
                        V::constant(A(Shape{2}, 0.0)), eps);
    EXPECT_NEAR(y.value()[0], 1.0, eps);
    EXPECT_NEAR(y.value()[1], -1.0, eps);
}

TEST(LayerNorm, PreAffineMomentsOnRandomSlices) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_array({4, 7}, rng, 3.0);
        auto y = layer_norm(V::constant(x), V::constant(A(Shape{7}, 1.0)), V::constant(A(Shape{7}, 0.0)), 1e-12);
        for (std::size_t r = 0; r < 4; ++r) {
            double m = 0, var = 0;
            for (std::size_t j = 0; j < 7; ++j) m += y.value().at(r, j);
            m /= 7;
            for (std::size_t j = 0; j < 7; ++j) var += (y.value().at(r, j) - m) * (y.value().at(r, j) - m);
            var /= 7;
            EXPECT_LE(std::abs(m), 1e-10);
            EXPECT_LE(std::abs(var - 1.0), 1e-6);
        }
    }
}

TEST(LayerNorm, EmptyAxisIsDimensionError) {
    EXPECT_THROW(layer_norm(V::constant(A(Shape{2, 3})), V::constant(A(Shape{2})), V::constant(A(Shape{2})), 1e-6),
                 DimensionError);
    EXPECT_THROW(A(Shape{4, 0}), DimensionError);
}

TEST(Softmax, Examples) {
    auto a = softmax_last(V::constant(A::vector({0, 0})));
    EXPECT_DOUBLE_EQ(a.value()[0], 0.5);
    EXPECT_DOUBLE_EQ(a.value()[1], 0.5);

    auto b = softmax_last(V::constant(A::vector({1000, 1000})));
    EXPECT_DOUBLE_EQ(b.value()[0], 0.5);
    EXPECT_DOUBLE_EQ(b.value()[1], 0.5);

    auto c = softmax_last(V::constant(A::vector({std::log(1.0), std::log(3.0)})));
    EXPECT_NEAR(c.value()[0], 0.25, 1e-15);
    EXPECT_NEAR(c.value()[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_array({5, 9}, rng, 4.0);
        auto shifted = x;
        for (auto& v : shifted.values()) v += 7.3;
        auto p = softmax_last(V::constant(x)).value();
        auto q = softmax_last(V::constant(shifted)).value();
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < 9; ++j) {
                EXPECT_GE(p.at(r, j), 0.0);
                s += p.at(r, j);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
        EXPECT_LE(max_abs_diff(p, q), 1e-12);
    }
}

TEST(Activation, ClosedFormsAtZero) {
    auto x = V::parameter(A::scalar(0.0));
    auto s = activation(x, Activation::sigmoid);
    backward(s);
    EXPECT_DOUBLE_EQ(s.item(), 0.5);
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);

    auto x2 = V::parameter(A::scalar(0.0));
    auto t = activation(x2, "tanh");
    backward(t);
    EXPECT_DOUBLE_EQ(t.item(), 0.0);
    EXPECT_DOUBLE_EQ(x2.grad()[0], 1.0);
}

TEST(Activation, GeluGradientAtFixedPoints) {
    auto report = grad_check_input([](const V& x) { return sum(activation(x, Activation::gelu)); },
                                   A::vector({-2, -0.5, 0, 0.5, 2}), kStep);
    EXPECT_LE(report.max_rel_error, kPrimitiveTol);
}

TEST(Activation, UnknownKindIsConfigError) {
    EXPECT_THROW(activation(V::constant(A::scalar(1.0)), "relu6"), ConfigError);
}

TEST(Mhsa, SingleTokenIsValueThenOutputProjection) {
    std::mt19937_64 rng(4);
    ParamTree<double> t;
    auto w = const_mhsa(8, rng, &t);
    auto x = V::constant(random_array({1, 8}, rng));
    auto y = mhsa(x, 2, w);
    auto expected = linear(linear(x, w.wv, w.bv), w.wo, w.bo);
    EXPECT_LE(max_abs_diff(y.value(), expected.value()), 1e-14);
}

TEST(Mhsa, IdenticalTokensGiveIdenticalRows) {
    std::mt19937_64 rng(5);
    auto w = const_mhsa(8, rng);
    auto row = random_array({1, 8}, rng);
    A x(Shape{3, 8});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 8; ++j) x.at(i, j) = row.at(0, j);
    auto y = mhsa(V::constant(x), 4, w).value();
    for (std::size_t i = 1; i < 3; ++i)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y.at(i, j), y.at(0, j));
}

TEST(Mhsa, PermutationEquivariant) {
    std::mt19937_64 rng(6);
    auto w = const_mhsa(12, rng);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_array({7, 12}, rng);
        std::vector<std::size_t> perm(7);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        A xp(x.shape());
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 12; ++j) xp.at(i, j) = x.at(perm[i], j);
        auto y = mhsa(V::constant(x), 3, w).value();
        auto yp = mhsa(V::constant(xp), 3, w).value();
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(yp.at(i, j), y.at(perm[i], j), 1e-10);
    }
}

TEST(Mhsa, IndivisibleHeadsIsConfigError) {
    std::mt19937_64 rng(7);
    auto w = const_mhsa(6, rng);
    EXPECT_THROW(mhsa(V::constant(A(Shape{2, 6})), 4, w), ConfigError);
}

TEST(GradCheck, PolynomialAndSigmoid) {
    auto sq = grad_check_input([](const V& x) { return sum(mul(x, x)); }, A::scalar(3.0), kStep);
    EXPECT_LE(sq.max_rel_error, 1e-8);

    auto x = V::parameter(A(Shape{4}, 0.0));
    backward(sum(activation(x, Activation::sigmoid)));
    for (double g : x.grad().values()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(GradCheck, NonFiniteValueIsEvaluationError) {
    auto bad = [](const V& x) { return sum(scale(x, std::numeric_limits<double>::infinity())); };
    EXPECT_THROW(grad_check_input(bad, A::scalar(1.0), kStep), EvaluationError);
}

// Every differentiable primitive at 20 random points, all coordinates.
TEST(GradCheck, AllPrimitivesAtRandomPoints) {
    const auto results = primitive_grad_suite(8, kRandomPoints, kStep);
    EXPECT_GE(results.size(), 20u);
    for (const auto& r : results) EXPECT_LE(r.max_rel_error, kPrimitiveTol) << r.name;
}

TEST(Backward, VisitsEachNodeExactlyOnce) {
    auto x = V::parameter(A::vector({0.3, -0.2}));
    auto h = activation(x, Activation::tanh);
    // Diamond: h feeds two branches that rejoin.
    auto y = sum(add(mul(h, h), scale(h, 2.0)));
    auto order = topological_order(y);
    const std::size_t visited = backward(y);
    EXPECT_EQ(visited, order.size());
    for (auto* n : order) EXPECT_EQ(n->visits, 1u);
    // d/dx sum(tanh^2 + 2 tanh) = (2 tanh + 2)(1 - tanh^2)
    for (std::size_t i = 0; i < 2; ++i) {
        const double t = std::tanh(x.value()[i]);
        EXPECT_NEAR(x.grad()[i], (2 * t + 2) * (1 - t * t), 1e-14);
    }
}

TEST(Backward, NonScalarRootRejected) {
    auto x = V::parameter(A::vector({1, 2}));
    EXPECT_THROW(backward(scale(x, 2.0)), DimensionError);
}

TEST(ParamTreeIo, RoundTripIsBitExact) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        ParamTree<double> t;
        t.add("a.weight", random_array({3, 4}, rng));
        t.add("a.bias", random_array({4}, rng, 1e-300));
        t.add("z", A(Shape{2, 1, 3}, -0.0));
        std::stringstream ss;
        save_params(ss, t);
        auto back = load_params<double>(ss);
        ASSERT_EQ(back.size(), t.size());
        for (const auto& [path, v] : t.leaves()) {
            const auto& w = back.at(path);
            ASSERT_EQ(v.shape(), w.shape());
            EXPECT_EQ(std::memcmp(v.data(), w.data(), v.size() * sizeof(double)), 0) << path;
        }
    }
    ParamTree<float> f;
    f.add("w", NdArray<float>(Shape{2}, std::vector<float>{1.5f, -2.25f}));
    std::stringstream ss;
    save_params(ss, f);
    EXPECT_TRUE(load_params<float>(ss) == f);
}

TEST(ParamTreeIo, RejectsForeignBytes) {
    std::stringstream ss("not a container at all");
    EXPECT_THROW(load_params<double>(ss), IoError);
}

TEST(ParamTreeStructure, DivergentPathIsNamed) {
    ParamTree<double> a, b;
    a.add("x", A(Shape{2}));
    a.add("y", A(Shape{2}));
    b.add("x", A(Shape{2}));
    b.add("w", A(Shape{2}));
    try {
        a.require_same_structure(b);
        FAIL();
    } catch (const StructuralError& e) {
        EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
    }
}

TEST(SinglePrecision, ForwardBackwardWorks) {
    using F = Var<float>;
    auto x = F::parameter(NdArray<float>(Shape{2, 3}, 0.5f));
    auto w = F::constant(NdArray<float>(Shape{3, 2}, 0.25f));
    auto b = F::constant(NdArray<float>(Shape{2}, 0.0f));
    auto y = sum(activation(linear(x, w, b), Activation::gelu));
    backward(y);
    EXPECT_TRUE(x.grad().all_finite());
    EXPECT_GT(y.item(), 0.0f);
}
