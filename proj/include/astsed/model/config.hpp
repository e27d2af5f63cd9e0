#pragma once

#include <string>
#include <string_view>

#include "astsed/tensor/ops.hpp"

namespace astsed {

enum class EncoderKind { mean_pool, fte };
enum class DecoderKind { bigru };

inline const char* to_string(EncoderKind e) { return e == EncoderKind::fte ? "fte" : "mean_pool"; }
inline const char* to_string(DecoderKind) { return "bigru"; }

inline void from_string(std::string_view s, EncoderKind& e) {
    if (s == "fte") e = EncoderKind::fte;
    else if (s == "mean_pool") e = EncoderKind::mean_pool;
    else throw ConfigError("unknown encoder '" + std::string(s) + "' (expected fte or mean_pool)");
}

inline void from_string(std::string_view s, DecoderKind& d) {
    if (s != "bigru") throw ConfigError("unknown decoder '" + std::string(s) + "' (expected bigru)");
    d = DecoderKind::bigru;
}

inline void from_string(std::string_view s, ClipPooling& p) { p = parse_clip_pooling(s); }

struct ModelConfig {
    // input geometry
    std::size_t mel_bins = 64;
    std::size_t input_frames = 198;
    double clip_seconds = 2.0;
    std::size_t patch_height = 16;
    std::size_t patch_width = 16;
    std::size_t stride_freq = 10;
    std::size_t stride_time = 10;

    std::size_t embed_dim = 32;
    std::size_t pte_depth = 2;
    std::size_t pte_heads = 4;
    std::size_t fte_depth = 2;
    std::size_t fte_heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t upsample_ratio = 10;
    std::size_t num_classes = 6;
    EncoderKind encoder = EncoderKind::fte;
    DecoderKind decoder = DecoderKind::bigru;
    std::size_t gru_hidden = 0;  // 0: embed_dim / 2
    ClipPooling pooling = ClipPooling::linear_softmax;
    double ln_eps = 1e-6;
    double dropout = 0.0;

    template <typename V>
    void visit(V& v) {
        v("mel_bins", mel_bins);
        v("input_frames", input_frames);
        v("clip_seconds", clip_seconds);
        v("patch_height", patch_height);
        v("patch_width", patch_width);
        v("stride_freq", stride_freq);
        v("stride_time", stride_time);
        v("embed_dim", embed_dim);
        v("pte_depth", pte_depth);
        v("pte_heads", pte_heads);
        v("fte_depth", fte_depth);
        v("fte_heads", fte_heads);
        v("mlp_ratio", mlp_ratio);
        v("upsample_ratio", upsample_ratio);
        v("num_classes", num_classes);
        v("encoder", encoder);
        v("decoder", decoder);
        v("gru_hidden", gru_hidden);
        v("pooling", pooling);
        v("ln_eps", ln_eps);
        v("dropout", dropout);
    }

    std::size_t freq_patches() const {
        return mel_bins < patch_height ? 0 : (mel_bins - patch_height) / stride_freq + 1;
    }
    std::size_t time_patches() const {
        return input_frames < patch_width ? 0 : (input_frames - patch_width) / stride_time + 1;
    }
    std::size_t hidden() const { return gru_hidden ? gru_hidden : embed_dim / 2; }
    std::size_t output_steps() const { return time_patches() * upsample_ratio; }
    double seconds_per_step() const { return clip_seconds / static_cast<double>(output_steps()); }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
        if (patch_height == 0 || patch_width == 0 || stride_freq == 0 || stride_time == 0)
            fail("patch sizes and strides must be positive");
        if (freq_patches() == 0) fail("mel_bins smaller than one patch");
        if (time_patches() == 0) fail("input_frames smaller than one patch");
        if (embed_dim == 0) fail("embed_dim must be positive");
        if (pte_heads == 0 || embed_dim % pte_heads != 0)
            fail("embed_dim " + std::to_string(embed_dim) + " not divisible by pte_heads " + std::to_string(pte_heads));
        if (encoder == EncoderKind::fte && (fte_heads == 0 || embed_dim % fte_heads != 0))
            fail("embed_dim " + std::to_string(embed_dim) + " not divisible by fte_heads " + std::to_string(fte_heads));
        if (mlp_ratio == 0) fail("mlp_ratio must be positive");
        if (upsample_ratio == 0) fail("upsample_ratio must be at least 1");
        if (num_classes == 0) fail("num_classes must be at least 1");
        if (hidden() == 0) fail("gru hidden size must be positive");
        if (!(clip_seconds > 0)) fail("clip_seconds must be positive");
        if (!(ln_eps > 0)) fail("ln_eps must be positive");
        if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
    }
};

}  // namespace astsed
