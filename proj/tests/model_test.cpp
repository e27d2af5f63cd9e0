#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "astsed/model/checkpoint.hpp"
#include "astsed/tensor/grad_check.hpp"
#include "test_util.hpp"

using namespace astsed;
using astsed::testing::random_array;
using V = Var<double>;
using A = NdArray<double>;

namespace {

ModelConfig small_config(EncoderKind enc = EncoderKind::fte, std::size_t ur = 2) {
    ModelConfig cfg;
    cfg.mel_bins = 36;  // F = 3
    cfg.input_frames = 46;  // T = 4
    cfg.clip_seconds = 0.46;
    cfg.embed_dim = 8;
    cfg.pte_heads = 2;
    cfg.fte_heads = 2;
    cfg.pte_depth = 1;
    cfg.fte_depth = 2;
    cfg.mlp_ratio = 2;
    cfg.num_classes = 3;
    cfg.encoder = enc;
    cfg.upsample_ratio = ur;
    return cfg;
}

Spectrogram random_spec(const ModelConfig& cfg, std::mt19937_64& rng) {
    return {random_array({cfg.mel_bins, cfg.input_frames}, rng, 0.5), 0.01};
}

// Random PO grid plus bound FTE parameters with larger-than-init weights so
// the checks are not trivially satisfied.
struct FteFixture {
    ModelConfig cfg = small_config();
    ParamTree<double> tree;
    ParamBinding<double> bound;

    explicit FteFixture(std::uint64_t seed) {
        tree = init_params<double>(cfg, seed);
        std::mt19937_64 rng(seed);
        for (auto& [path, v] : tree.leaves())
            if (path.rfind("fte.", 0) == 0 && path.find(".ln") == std::string::npos)
                v = random_array(v.shape(), rng, 0.5);
        bound = ParamBinding<double>(tree, false);
    }
};

A permute_time(const A& grid, const std::vector<std::size_t>& perm) {
    A out(grid.shape());
    for (std::size_t f = 0; f < grid.dim(0); ++f)
        for (std::size_t t = 0; t < grid.dim(1); ++t)
            for (std::size_t c = 0; c < grid.dim(2); ++c) out.at(f, t, c) = grid.at(f, perm[t], c);
    return out;
}

A permute_rows(const A& seq, const std::vector<std::size_t>& perm) {
    A out(seq.shape());
    for (std::size_t t = 0; t < seq.dim(0); ++t)
        for (std::size_t c = 0; c < seq.dim(1); ++c) out.at(t, c) = seq.at(perm[t], c);
    return out;
}

}  // namespace

TEST(ModelConfig, PatchGridArithmetic) {
    ModelConfig paper;
    paper.mel_bins = 128;
    paper.input_frames = 1000;
    EXPECT_EQ(paper.freq_patches(), 12u);
    EXPECT_EQ(paper.time_patches(), 99u);

    ModelConfig toy;
    EXPECT_EQ(toy.freq_patches(), 5u);
    EXPECT_EQ(toy.time_patches(), 19u);
    EXPECT_EQ(toy.output_steps(), 190u);
}

TEST(ModelConfig, ValidationRejectsBadHeadsAndRatio) {
    ModelConfig cfg;
    cfg.fte_heads = 5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.upsample_ratio = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.num_classes = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PatchEmbed, ZeroInputGivesBias) {
    auto cfg = small_config();
    auto tree = init_params<double>(cfg, 1);
    tree.at("patch_embed.pos").fill(0.0);
    std::mt19937_64 rng(2);
    tree.at("patch_embed.bias") = random_array({cfg.embed_dim}, rng);
    ParamBinding<double> p(tree, false);
    Spectrogram zero{A(Shape{cfg.mel_bins, cfg.input_frames}), 0.01};
    auto grid = patch_embed(zero, cfg, p);
    ASSERT_EQ(grid.values.shape(), (Shape{3, 4, 8}));
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t c = 0; c < 8; ++c)
                EXPECT_EQ(grid.values.value().at(f, t, c), tree.at("patch_embed.bias")[c]);
}

TEST(PatchEmbed, TooSmallOrMismatchedIsInputError) {
    auto cfg = small_config();
    ParamBinding<double> p(init_params<double>(cfg, 1), false);
    Spectrogram tiny{A(Shape{10, 46}), 0.01};
    EXPECT_THROW(patch_embed(tiny, cfg, p), InputError);
    Spectrogram other{A(Shape{36, 50}), 0.01};
    EXPECT_THROW(patch_embed(other, cfg, p), InputError);
}

TEST(Pte, DepthZeroIsIdentityAndShapePreserved) {
    auto cfg = small_config();
    std::mt19937_64 rng(3);
    TokenGrid<double> grid{V::constant(random_array({3, 4, 8}, rng))};
    auto zero_cfg = cfg;
    zero_cfg.pte_depth = 0;
    ParamBinding<double> p0(init_params<double>(zero_cfg, 1), false);
    EXPECT_EQ(pte_forward(grid, zero_cfg, p0).values.value(), grid.values.value());

    ParamBinding<double> p(init_params<double>(cfg, 1), false);
    EXPECT_EQ(pte_forward(grid, cfg, p).values.shape(), grid.values.shape());

    ModelConfig paper;
    paper.pte_depth = 10;
    EXPECT_NO_THROW(paper.validate());
}

TEST(MeanPool, ConstantRowsAndPermutationInvariance) {
    TokenGrid<double> constant{V::constant(A(Shape{3, 4, 2}, 1.25))};
    auto c = mean_pool_frequency(constant, 0.4);
    for (double v : c.values.value().values()) EXPECT_EQ(v, 1.25);
    EXPECT_DOUBLE_EQ(c.seconds_per_step, 0.1);

    A two(Shape{2, 1, 2});
    two.at(0, 0, 0) = 1.0;
    two.at(0, 0, 1) = 4.0;
    two.at(1, 0, 0) = 3.0;
    two.at(1, 0, 1) = -2.0;
    auto m = mean_pool_frequency(TokenGrid<double>{V::constant(two)}, 1.0);
    EXPECT_EQ(m.values.value().at(0, 0), 2.0);
    EXPECT_EQ(m.values.value().at(0, 1), 1.0);

    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        auto g = random_array({5, 6, 4}, rng);
        std::vector<std::size_t> perm(5);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        A shuffled(g.shape());
        for (std::size_t f = 0; f < 5; ++f)
            std::copy_n(&g.at(perm[f], 0, 0), 24, &shuffled.at(f, 0, 0));
        auto a = mean_pool_frequency(TokenGrid<double>{V::constant(g)}, 1.0).values.value();
        auto b = mean_pool_frequency(TokenGrid<double>{V::constant(shuffled)}, 1.0).values.value();
        EXPECT_EQ(a, b);
    }
}

TEST(Fte, OutputIsClsRowPerTimeStep) {
    FteFixture fx(5);
    std::mt19937_64 rng(6);
    TokenGrid<double> po{V::constant(random_array({3, 4, 8}, rng))};
    auto c = fte_forward(po, fx.cfg, fx.bound);
    EXPECT_EQ(c.values.shape(), (Shape{4, 8}));
    EXPECT_DOUBLE_EQ(c.seconds_per_step, fx.cfg.clip_seconds / 4);
}

TEST(Fte, LocalityZeroingOtherColumnsLeavesFrameUnchanged) {
    for (std::uint64_t seed : {7u, 8u, 9u}) {
        FteFixture fx(seed);
        std::mt19937_64 rng(seed);
        auto g = random_array({3, 4, 8}, rng);
        auto full = fte_forward(TokenGrid<double>{V::constant(g)}, fx.cfg, fx.bound).values.value();
        for (std::size_t t = 0; t < 4; ++t) {
            A masked(g.shape());
            for (std::size_t f = 0; f < 3; ++f) std::copy_n(&g.at(f, t, 0), 8, &masked.at(f, t, 0));
            auto out = fte_forward(TokenGrid<double>{V::constant(masked)}, fx.cfg, fx.bound).values.value();
            for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(out.at(t, c), full.at(t, c)) << "frame " << t;
        }
    }
}

TEST(Fte, TimeEquivariance) {
    FteFixture fx(10);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto g = random_array({3, 4, 8}, rng);
        std::vector<std::size_t> perm{0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), rng);
        auto a = fte_forward(TokenGrid<double>{V::constant(permute_time(g, perm))}, fx.cfg, fx.bound);
        auto b = fte_forward(TokenGrid<double>{V::constant(g)}, fx.cfg, fx.bound);
        EXPECT_LE(max_abs_diff(a.values.value(), permute_rows(b.values.value(), perm)), 1e-10);
    }
}

// Without a positional term inside the encoder, reordering frequency rows
// only reorders the keys each CLS token attends over.
TEST(Fte, FrequencyRowOrderDoesNotMatter) {
    FteFixture fx(12);
    std::mt19937_64 rng(13);
    auto g = random_array({3, 4, 8}, rng);
    A swapped = g;
    std::copy_n(&g.at(0, 0, 0), 32, &swapped.at(2, 0, 0));
    std::copy_n(&g.at(2, 0, 0), 32, &swapped.at(0, 0, 0));
    auto a = fte_forward(TokenGrid<double>{V::constant(g)}, fx.cfg, fx.bound).values.value();
    auto b = fte_forward(TokenGrid<double>{V::constant(swapped)}, fx.cfg, fx.bound).values.value();
    EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

// Grids whose rows differ but whose frequency means agree: mean pooling
// cannot tell them apart, the frequency-wise encoder can.
TEST(Fte, SeparatesGridsThatMeanPoolingConflates) {
    FteFixture fx(12);
    std::mt19937_64 rng(13);
    auto g = random_array({3, 4, 8}, rng);
    auto delta = random_array({4, 8}, rng);
    A h = g;
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t c = 0; c < 8; ++c) {
            h.at(0, t, c) += delta.at(t, c);
            h.at(1, t, c) -= delta.at(t, c);
        }
    auto mg = mean_pool_frequency(TokenGrid<double>{V::constant(g)}, 1.0).values.value();
    auto mh = mean_pool_frequency(TokenGrid<double>{V::constant(h)}, 1.0).values.value();
    EXPECT_LE(max_abs_diff(mg, mh), 1e-12);
    auto a = fte_forward(TokenGrid<double>{V::constant(g)}, fx.cfg, fx.bound).values.value();
    auto b = fte_forward(TokenGrid<double>{V::constant(h)}, fx.cfg, fx.bound).values.value();
    EXPECT_GT(max_abs_diff(a, b), 1e-3);
}

TEST(Fte, UniformAttentionWhenTokenMatchesCls) {
    FteFixture fx(14);  // F = 1 below
    fx.cfg.mel_bins = 16;
    const auto& cls = fx.tree.at("fte.cls");
    A g(Shape{1, 4, 8});
    for (std::size_t t = 0; t < 4; ++t) std::copy_n(cls.data(), 8, &g.at(0, t, 0));
    A attn;
    fte_forward(TokenGrid<double>{V::constant(g)}, fx.cfg, fx.bound, {}, &attn);
    ASSERT_EQ(attn.shape(), (Shape{4, 2, 2, 2}));
    for (double w : attn.values()) EXPECT_NEAR(w, 0.5, 1e-15);
}

TEST(Fte, PaperGeometryInputHasClsRow) {
    ModelConfig cfg;
    cfg.mel_bins = 128;
    cfg.input_frames = 1000;
    cfg.clip_seconds = 10.0;
    cfg.embed_dim = 8;
    cfg.fte_heads = 2;
    cfg.fte_depth = 1;
    cfg.mlp_ratio = 1;
    ParamBinding<double> p(init_params<double>(cfg, 1), false);
    TokenGrid<double> po{V::constant(A(Shape{12, 99, 8}, 0.1))};
    A attn;
    auto c = fte_forward(po, cfg, p, {}, &attn);
    EXPECT_EQ(attn.shape(), (Shape{99, 2, 13, 13}));
    EXPECT_EQ(c.values.shape(), (Shape{99, 8}));
}

TEST(Nni, RepeatsFramesExactly) {
    FrameSequence<double> c{V::constant(A(Shape{2, 1}, std::vector<double>{1, 2})), 0.5};
    auto up = nni(c, 2);
    EXPECT_EQ(up.values.value().values().size(), 4u);
    EXPECT_EQ(up.values.value(), A(Shape{4, 1}, std::vector<double>{1, 1, 2, 2}));
    EXPECT_DOUBLE_EQ(up.seconds_per_step, 0.25);
    EXPECT_EQ(nni(c, 1).values.value(), c.values.value());
    EXPECT_THROW(nni(c, 0), ConfigError);

    std::mt19937_64 rng(15);
    FrameSequence<double> paper{V::constant(random_array({99, 3}, rng)), 10.0 / 99};
    auto big = nni(paper, 10);
    ASSERT_EQ(big.length(), 990u);
    for (std::size_t i = 0; i < 990; ++i)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(big.values.value().at(i, k), paper.values.value().at(i / 10, k));
}

TEST(BiGru, ZeroFixedPoint) {
    auto cfg = small_config();
    auto tree = init_params<double>(cfg, 1);
    for (auto& [path, v] : tree.leaves())
        if (path.find("gru.") == 0 && (path.find(".bx") != std::string::npos || path.find(".bh") != std::string::npos))
            v.fill(0.0);
    ParamBinding<double> p(tree, false);
    FrameSequence<double> zero{V::constant(A(Shape{6, 8})), 0.1};
    auto o = bigru_forward(zero, p);
    EXPECT_EQ(o.values.shape(), (Shape{6, 8}));
    for (double v : o.values.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(BiGru, ContextPropagatesBothWays) {
    auto cfg = small_config();
    ParamBinding<double> p(init_params<double>(cfg, 1), false);
    std::mt19937_64 rng(16);
    auto x = random_array({7, 8}, rng);
    auto base = bigru_forward(FrameSequence<double>{V::constant(x), 0.1}, p).values.value();
    for (auto [i, j] : {std::pair<std::size_t, std::size_t>{1, 5}, {5, 1}}) {
        auto y = x;
        y.at(j, 3) += 0.5;
        auto out = bigru_forward(FrameSequence<double>{V::constant(y), 0.1}, p).values.value();
        double diff = 0;
        for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(out.at(i, c) - base.at(i, c)));
        EXPECT_GT(diff, 1e-9) << "step " << i << " unaffected by step " << j;
    }
}

TEST(BiGru, ReversalSwapsDirectionsWithTiedWeights) {
    auto cfg = small_config();
    auto tree = init_params<double>(cfg, 1);
    for (const char* leaf : {"wx", "wh", "bx", "bh"})
        tree.at(std::string("gru.bwd.") + leaf) = tree.at(std::string("gru.fwd.") + leaf);
    ParamBinding<double> p(tree, false);
    std::mt19937_64 rng(17);
    auto x = random_array({6, 8}, rng);
    std::vector<std::size_t> rev{5, 4, 3, 2, 1, 0};
    auto a = bigru_forward(FrameSequence<double>{V::constant(x), 0.1}, p).values.value();
    auto b = bigru_forward(FrameSequence<double>{V::constant(permute_rows(x, rev))}, p).values.value();
    const std::size_t h = cfg.hidden();
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t k = 0; k < h; ++k) {
            EXPECT_NEAR(b.at(t, k), a.at(5 - t, h + k), 1e-14);
            EXPECT_NEAR(b.at(t, h + k), a.at(5 - t, k), 1e-14);
        }
}

TEST(Heads, PoolingClosedForms) {
    auto pool = [](std::vector<double> col) {
        const std::size_t n = col.size();
        return pool_frames(V::constant(A(Shape{n, 1}, std::move(col))), ClipPooling::linear_softmax).item();
    };
    EXPECT_DOUBLE_EQ(pool({0.3, 0.3, 0.3}), 0.3);
    EXPECT_DOUBLE_EQ(pool({1.0, 0.0}), 1.0);
    EXPECT_NEAR(pool({0.5, 0.25}), 0.3125 / 0.75, 1e-15);
    EXPECT_EQ(pool({0.0, 0.0}), 0.0);
}

TEST(Forward, ToyGeometryShapesAndRange) {
    ModelConfig cfg;  // toy defaults: 64 x 198, UR 10
    cfg.embed_dim = 16;
    cfg.pte_depth = 1;
    cfg.fte_depth = 1;
    ParamBinding<double> p(init_params<double>(cfg, 3), false);
    std::mt19937_64 rng(18);
    auto pred = forward(random_spec(cfg, rng), cfg, p);
    EXPECT_EQ(pred.frame_probs.shape(), (Shape{190, 6}));
    EXPECT_EQ(pred.clip_probs.shape(), (Shape{6}));
    EXPECT_DOUBLE_EQ(pred.seconds_per_step, 2.0 / 190);
    for (double v : pred.frame_probs.value().values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : pred.clip_probs.value().values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Forward, AblationTopologies) {
    auto baseline = small_config(EncoderKind::mean_pool, 1);
    auto tree = init_params<double>(baseline, 4);
    for (const auto& [path, v] : tree.leaves()) EXPECT_NE(path.rfind("fte.", 0), 0u) << path;
    std::mt19937_64 rng(19);
    auto spec = random_spec(baseline, rng);
    EXPECT_EQ(forward(spec, baseline, ParamBinding<double>(tree, false)).frame_probs.dim(0), 4u);

    auto sed = small_config(EncoderKind::fte, 10);
    auto sed_tree = init_params<double>(sed, 4);
    EXPECT_TRUE(sed_tree.contains("fte.cls"));
    EXPECT_EQ(forward(spec, sed, ParamBinding<double>(sed_tree, false)).frame_probs.dim(0), 40u);
    // shared leaves initialize identically across topologies
    for (const auto& [path, v] : tree.leaves()) EXPECT_EQ(sed_tree.at(path), v) << path;
}

TEST(Forward, DropoutOnlyWithRng) {
    auto cfg = small_config();
    cfg.dropout = 0.2;
    ParamBinding<double> p(init_params<double>(cfg, 4), false);
    std::mt19937_64 rng(20);
    auto spec = random_spec(cfg, rng);
    auto a = forward(spec, cfg, p).frame_probs.value();
    EXPECT_EQ(a, forward(spec, cfg, p).frame_probs.value());
    std::mt19937_64 drop(1);
    auto b = forward(spec, cfg, p, ForwardOptions{&drop}).frame_probs.value();
    EXPECT_GT(max_abs_diff(a, b), 0.0);
}

TEST(Forward, WholeModelGradientMatchesFiniteDifferences) {
    ModelConfig cfg;  // toy geometry
    cfg.embed_dim = 16;
    auto tree = init_params<double>(cfg, 21);
    std::mt19937_64 rng(22);
    auto spec = random_spec(cfg, rng);
    auto frame_target = astsed::testing::random_uniform({190, 6}, rng, 0, 1);
    auto clip_target = astsed::testing::random_uniform({6}, rng, 0, 1);
    auto loss = [&](const ParamBinding<double>& p) {
        auto pred = forward(spec, cfg, p);
        return add(scale(bce(pred.clip_probs, clip_target), 0.5), bce(pred.frame_probs, frame_target));
    };
    auto report = grad_check(loss, tree, 1e-5, 10, 23);
    EXPECT_LE(report.max_rel_error, 5e-3) << report.worst_path << "[" << report.worst_index << "]";
}

TEST(Backbone, LoadingLeavesNewPartsUntouched) {
    auto cfg = small_config();
    auto sed = init_params<double>(cfg, 1);
    const auto fresh = sed;
    auto tagger = init_params<double>(cfg, 99, ParamSet::tagging);
    EXPECT_TRUE(tagger.contains("at_head.weight"));
    load_backbone(sed, tagger);
    for (const auto& [path, v] : sed.leaves()) {
        if (is_backbone_path(path)) EXPECT_EQ(v, tagger.at(path)) << path;
        else EXPECT_EQ(v, fresh.at(path)) << path;
    }
    auto wider = cfg;
    wider.embed_dim = 12;
    auto other = init_params<double>(wider, 1, ParamSet::tagging);
    EXPECT_THROW(load_backbone(sed, other), StructuralError);
}

TEST(Checkpoint, RoundTripAndMismatchNamesField) {
    auto dir = std::filesystem::temp_directory_path() / "astsed_model_test";
    std::filesystem::create_directories(dir);
    auto cfg = small_config();
    auto tree = init_params<double>(cfg, 5);
    save_checkpoint(dir / "m.ckpt", cfg, tree);
    auto ck = load_checkpoint(dir / "m.ckpt");
    EXPECT_TRUE(ck.params == tree);
    EXPECT_EQ(model_config_record(ck.config), model_config_record(cfg));
    EXPECT_TRUE(load_model_params(dir / "m.ckpt", cfg) == tree);

    auto other = cfg;
    other.upsample_ratio = 5;
    try {
        load_model_params(dir / "m.ckpt", other);
        FAIL() << "expected mismatch";
    } catch (const StructuralError& e) {
        EXPECT_NE(std::string(e.what()).find("model.upsample_ratio"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}
