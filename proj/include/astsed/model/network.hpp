#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "astsed/audio/features.hpp"
#include "astsed/model/config.hpp"
#include "astsed/tensor/attention.hpp"
#include "astsed/tensor/param_tree.hpp"
#include "astsed/util/rng.hpp"

namespace astsed {

/// [F, T, C] token grid (PI / PO).
template <typename T = double>
struct TokenGrid {
    Var<T> values;

    std::size_t freq() const { return values.dim(0); }
    std::size_t time() const { return values.dim(1); }
    std::size_t channels() const { return values.dim(2); }
};

/// [L, C'] frame sequence with its time resolution.
template <typename T = double>
struct FrameSequence {
    Var<T> values;
    double seconds_per_step = 0.0;

    std::size_t length() const { return values.dim(0); }
};

template <typename T = double>
struct Predictions {
    Var<T> frame_probs;  // [L, K]
    Var<T> clip_probs;   // [K]
    double seconds_per_step = 0.0;
};

/// Which parameter set a tree holds: the SED network, or the backbone plus
/// a clip-tagging head used for pretraining.
enum class ParamSet { sed, tagging };

struct ForwardOptions {
    std::mt19937_64* dropout_rng = nullptr;  // dropout is active only when set
};

// ---------------------------------------------------------------------------
// Parameters

enum class InitKind { trunc_normal, zeros, ones, gru_uniform };

struct ParamSpec {
    std::string path;
    Shape shape;
    InitKind init;
};

inline bool is_backbone_path(const std::string& path) {
    return path.rfind("patch_embed.", 0) == 0 || path.rfind("pte.", 0) == 0;
}

namespace model_detail {

inline void add_ln(std::vector<ParamSpec>& s, const std::string& p, std::size_t c) {
    s.push_back({p + ".gain", {c}, InitKind::ones});
    s.push_back({p + ".bias", {c}, InitKind::zeros});
}

inline void add_linear(std::vector<ParamSpec>& s, const std::string& p, std::size_t din, std::size_t dout,
                       bool bias = true) {
    s.push_back({p + ".weight", {din, dout}, InitKind::trunc_normal});
    if (bias) s.push_back({p + ".bias", {dout}, InitKind::zeros});
}

inline void add_block(std::vector<ParamSpec>& s, const std::string& p, const ModelConfig& cfg) {
    const std::size_t c = cfg.embed_dim;
    add_ln(s, p + ".ln1", c);
    add_linear(s, p + ".attn.q", c, c);
    add_linear(s, p + ".attn.k", c, c, false);
    add_linear(s, p + ".attn.v", c, c);
    add_linear(s, p + ".attn.out", c, c);
    add_ln(s, p + ".ln2", c);
    add_linear(s, p + ".mlp.fc1", c, c * cfg.mlp_ratio);
    add_linear(s, p + ".mlp.fc2", c * cfg.mlp_ratio, c);
}

inline void add_gru(std::vector<ParamSpec>& s, const std::string& p, std::size_t din, std::size_t h) {
    s.push_back({p + ".wx", {din, 3 * h}, InitKind::gru_uniform});
    s.push_back({p + ".wh", {h, 3 * h}, InitKind::gru_uniform});
    s.push_back({p + ".bx", {3 * h}, InitKind::gru_uniform});
    s.push_back({p + ".bh", {3 * h}, InitKind::gru_uniform});
}

}  // namespace model_detail

/// Every parameter of the network in `set`, in a fixed order.
inline std::vector<ParamSpec> param_specs(const ModelConfig& cfg, ParamSet set = ParamSet::sed) {
    using namespace model_detail;
    cfg.validate();
    const std::size_t c = cfg.embed_dim;
    std::vector<ParamSpec> s;
    add_linear(s, "patch_embed", cfg.patch_height * cfg.patch_width, c);
    s.push_back({"patch_embed.pos", {cfg.freq_patches(), cfg.time_patches(), c}, InitKind::trunc_normal});
    for (std::size_t i = 0; i < cfg.pte_depth; ++i) add_block(s, "pte." + std::to_string(i), cfg);
    if (set == ParamSet::tagging) {
        add_linear(s, "at_head", c, cfg.num_classes);
        return s;
    }
    if (cfg.encoder == EncoderKind::fte) {
        s.push_back({"fte.cls", {c}, InitKind::trunc_normal});
        for (std::size_t i = 0; i < cfg.fte_depth; ++i) add_block(s, "fte." + std::to_string(i), cfg);
    }
    add_gru(s, "gru.fwd", c, cfg.hidden());
    add_gru(s, "gru.bwd", c, cfg.hidden());
    add_linear(s, "head", 2 * cfg.hidden(), cfg.num_classes);
    return s;
}

/// Fresh parameters. Each leaf draws from its own stream keyed by
/// (seed, path), so leaves shared by two topologies initialize identically.
template <typename T = double>
ParamTree<T> init_params(const ModelConfig& cfg, std::uint64_t seed, ParamSet set = ParamSet::sed) {
    ParamTree<T> tree;
    for (const auto& spec : param_specs(cfg, set)) {
        NdArray<T> a(spec.shape);
        auto rng = make_rng(seed, spec.path);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden()));
        for (auto& v : a.values()) {
            switch (spec.init) {
                case InitKind::trunc_normal: v = static_cast<T>(truncated_normal(rng, 0.02)); break;
                case InitKind::zeros: v = T{0}; break;
                case InitKind::ones: v = T{1}; break;
                case InitKind::gru_uniform: v = static_cast<T>(uniform(rng, -bound, bound)); break;
            }
        }
        tree.add(spec.path, std::move(a));
    }
    return tree;
}

/// Copies the backbone leaves (patch embedding and PTE) of `source` into
/// `target`; all other leaves of `target` are left untouched.
template <typename T>
void load_backbone(ParamTree<T>& target, const ParamTree<T>& source) {
    std::size_t copied = 0;
    for (const auto& [path, value] : target.leaves()) {
        if (!is_backbone_path(path)) continue;
        if (!source.contains(path)) throw StructuralError("backbone checkpoint lacks '" + path + "'");
        const auto& src = source.at(path);
        if (src.shape() != value.shape()) {
            throw StructuralError("backbone leaf '" + path + "' has shape " + shape_str(src.shape()) +
                                  ", model expects " + shape_str(value.shape()));
        }
        ++copied;
    }
    for (const auto& [path, value] : source.leaves()) {
        if (is_backbone_path(path) && !target.contains(path))
            throw StructuralError("backbone checkpoint has unexpected leaf '" + path + "'");
    }
    for (const auto& [path, value] : source.leaves())
        if (is_backbone_path(path)) target.at(path) = value;
    if (copied == 0) throw StructuralError("model has no backbone leaves");
}

// ---------------------------------------------------------------------------
// Forward pieces

namespace model_detail {

template <typename T>
Var<T> maybe_dropout(const Var<T>& x, const ModelConfig& cfg, const ForwardOptions& opt) {
    if (!opt.dropout_rng || cfg.dropout == 0.0) return x;
    return dropout(x, cfg.dropout, *opt.dropout_rng);
}

template <typename T>
Var<T> mlp(const Var<T>& x, const ParamBinding<T>& p, const std::string& prefix) {
    auto h = activation(linear(x, p(prefix + ".fc1.weight"), p(prefix + ".fc1.bias")), Activation::gelu);
    return linear(h, p(prefix + ".fc2.weight"), p(prefix + ".fc2.bias"));
}

template <typename T>
Var<T> ln(const Var<T>& x, const ParamBinding<T>& p, const std::string& prefix, double eps) {
    return layer_norm(x, p(prefix + ".gain"), p(prefix + ".bias"), static_cast<T>(eps));
}

}  // namespace model_detail

/// Splits the spectrogram into patches, projects each to C and adds the
/// positional embedding.
template <typename T>
TokenGrid<T> patch_embed(const Spectrogram& spec, const ModelConfig& cfg, const ParamBinding<T>& p) {
    const std::size_t m = spec.values.rank() == 2 ? spec.mel_bins() : 0;
    const std::size_t frames = spec.values.rank() == 2 ? spec.frames() : 0;
    if (m < cfg.patch_height || frames < cfg.patch_width) {
        throw InputError("spectrogram " + shape_str(spec.values.shape()) + " is smaller than one " +
                         std::to_string(cfg.patch_height) + "x" + std::to_string(cfg.patch_width) + " patch");
    }
    if (m != cfg.mel_bins || frames != cfg.input_frames) {
        throw InputError("spectrogram " + shape_str(spec.values.shape()) + " does not match the configured [" +
                         std::to_string(cfg.mel_bins) + ", " + std::to_string(cfg.input_frames) + "] input");
    }
    const std::size_t nf = cfg.freq_patches(), nt = cfg.time_patches();
    const std::size_t ph = cfg.patch_height, pw = cfg.patch_width;
    NdArray<T> patches(Shape{nf * nt, ph * pw});
    for (std::size_t f = 0; f < nf; ++f)
        for (std::size_t t = 0; t < nt; ++t) {
            T* row = &patches.at(f * nt + t, 0);
            for (std::size_t i = 0; i < ph; ++i)
                for (std::size_t j = 0; j < pw; ++j)
                    row[i * pw + j] = static_cast<T>(spec.values.at(f * cfg.stride_freq + i, t * cfg.stride_time + j));
        }
    auto tokens = linear(Var<T>::constant(std::move(patches)), p("patch_embed.weight"), p("patch_embed.bias"));
    return {add(reshape(tokens, Shape{nf, nt, cfg.embed_dim}), p("patch_embed.pos"))};
}

/// Pre-norm transformer block over tokens [N, C] or [G, N, C].
template <typename T>
Var<T> prenorm_block(const Var<T>& x, const ParamBinding<T>& p, const std::string& prefix, std::size_t heads,
                     const ModelConfig& cfg, const ForwardOptions& opt, NdArray<T>* attn = nullptr) {
    using namespace model_detail;
    auto a = mhsa(ln(x, p, prefix + ".ln1", cfg.ln_eps), heads, MhsaWeights<T>::bind(p, prefix + ".attn"), attn);
    auto h = add(x, maybe_dropout(a, cfg, opt));
    auto m = mlp(ln(h, p, prefix + ".ln2", cfg.ln_eps), p, prefix + ".mlp");
    return add(h, maybe_dropout(m, cfg, opt));
}

/// Post-norm block: x^ = LN(MHSA(x) + x), out = LN(MLP(x^) + x^).
template <typename T>
Var<T> postnorm_block(const Var<T>& x, const ParamBinding<T>& p, const std::string& prefix, std::size_t heads,
                      const ModelConfig& cfg, const ForwardOptions& opt, NdArray<T>* attn = nullptr) {
    using namespace model_detail;
    auto a = mhsa(x, heads, MhsaWeights<T>::bind(p, prefix + ".attn"), attn);
    auto h = ln(add(maybe_dropout(a, cfg, opt), x), p, prefix + ".ln1", cfg.ln_eps);
    auto m = mlp(h, p, prefix + ".mlp");
    return ln(add(maybe_dropout(m, cfg, opt), h), p, prefix + ".ln2", cfg.ln_eps);
}

/// Patch-wise encoder: attention over all F*T tokens.
template <typename T>
TokenGrid<T> pte_forward(const TokenGrid<T>& pi, const ModelConfig& cfg, const ParamBinding<T>& p,
                         const ForwardOptions& opt = {}) {
    if (cfg.pte_depth == 0) return pi;
    const Shape grid = pi.values.shape();
    auto x = reshape(pi.values, Shape{grid[0] * grid[1], grid[2]});
    for (std::size_t i = 0; i < cfg.pte_depth; ++i)
        x = prenorm_block(x, p, "pte." + std::to_string(i), cfg.pte_heads, cfg, opt);
    return {reshape(x, grid)};
}

template <typename T>
FrameSequence<T> mean_pool_frequency(const TokenGrid<T>& po, double clip_seconds) {
    return {mean_axis0(po.values), clip_seconds / static_cast<double>(po.time())};
}

/// Frame sequence from a single frequency row of the grid.
template <typename T>
FrameSequence<T> frequency_row(const TokenGrid<T>& po, std::size_t row, double clip_seconds) {
    return {select_axis0(po.values, row), clip_seconds / static_cast<double>(po.time())};
}

/// Frequency-wise encoder. The CLS vector is prepended to every time
/// column, attention runs within each column only, and the CLS outputs form
/// the [T, C] frame sequence. `attn`, when given, receives the first block's
/// attention weights [T, heads, F+1, F+1].
template <typename T>
FrameSequence<T> fte_forward(const TokenGrid<T>& po, const ModelConfig& cfg, const ParamBinding<T>& p,
                             const ForwardOptions& opt = {}, NdArray<T>* attn = nullptr) {
    // [F, T, C] -> [T, F, C] -> [T, F+1, C]: one attention group per time column
    auto x = prepend_token(swap_axes01(po.values), p("fte.cls"));
    for (std::size_t i = 0; i < cfg.fte_depth; ++i)
        x = postnorm_block(x, p, "fte." + std::to_string(i), cfg.fte_heads, cfg, opt, i == 0 ? attn : nullptr);
    return {select_token(x, 0), cfg.clip_seconds / static_cast<double>(po.time())};
}

/// Nearest-neighbour upsampling: each frame repeated n times.
template <typename T>
FrameSequence<T> nni(const FrameSequence<T>& c, std::size_t n) {
    if (n == 0) throw ConfigError("upsample ratio must be at least 1");
    return {repeat_rows(c.values, n), c.seconds_per_step / static_cast<double>(n)};
}

template <typename T>
FrameSequence<T> bigru_forward(const FrameSequence<T>& seq, const ParamBinding<T>& p) {
    auto run = [&](const std::string& d, bool reverse) {
        return gru(seq.values, p(d + ".wx"), p(d + ".wh"), p(d + ".bx"), p(d + ".bh"), reverse);
    };
    return {concat_last(run("gru.fwd", false), run("gru.bwd", true)), seq.seconds_per_step};
}

template <typename T>
Predictions<T> heads(const FrameSequence<T>& o, const ModelConfig& cfg, const ParamBinding<T>& p) {
    auto frames = activation(linear(o.values, p("head.weight"), p("head.bias")), Activation::sigmoid);
    auto clip = pool_frames(frames, cfg.pooling);
    return {frames, clip, o.seconds_per_step};
}

/// Backbone output PO for one spectrogram.
template <typename T>
TokenGrid<T> encode_patches(const Spectrogram& spec, const ModelConfig& cfg, const ParamBinding<T>& p,
                            const ForwardOptions& opt = {}) {
    return pte_forward(patch_embed(spec, cfg, p), cfg, p, opt);
}

/// LGD and heads on an encoder frame sequence.
template <typename T>
Predictions<T> decode_frames(const FrameSequence<T>& c, const ModelConfig& cfg, const ParamBinding<T>& p) {
    return heads(bigru_forward(nni(c, cfg.upsample_ratio), p), cfg, p);
}

template <typename T>
Predictions<T> forward(const Spectrogram& spec, const ModelConfig& cfg, const ParamBinding<T>& p,
                       const ForwardOptions& opt = {}) {
    auto po = encode_patches(spec, cfg, p, opt);
    auto c = cfg.encoder == EncoderKind::fte ? fte_forward(po, cfg, p, opt) : mean_pool_frequency(po, cfg.clip_seconds);
    return decode_frames(c, cfg, p);
}

/// Clip tagging used during backbone pretraining: mean of all PTE output
/// tokens, linear classifier, sigmoid. Returns clip probabilities [K].
template <typename T>
Var<T> tagging_forward(const Spectrogram& spec, const ModelConfig& cfg, const ParamBinding<T>& p,
                       const ForwardOptions& opt = {}) {
    auto po = encode_patches(spec, cfg, p, opt);
    auto frames = mean_pool_frequency(po, cfg.clip_seconds).values;  // [T, C]
    auto pooled = mean_axis0(reshape(frames, Shape{frames.dim(0), 1, frames.dim(1)}));  // [1, C]
    auto logits = linear(pooled, p("at_head.weight"), p("at_head.bias"));
    return reshape(activation(logits, Activation::sigmoid), Shape{cfg.num_classes});
}

}  // namespace astsed
