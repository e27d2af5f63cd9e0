#pragma once

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include "astsed/eval/decode.hpp"
#include "astsed/eval/metrics.hpp"
#include "astsed/model/network.hpp"

namespace astsed {

struct EvalClip {
    std::string filename;
    Spectrogram features;  // normalized model input
};

/// [K x F] table; each class row divided by its maximum.
struct BandHistogram {
    std::vector<std::string> classes;
    std::size_t rows = 0;
    std::vector<std::vector<double>> raw;         // class-wise EB-F1 per frequency row
    std::vector<std::vector<double>> normalized;

    std::size_t argmax(std::size_t k) const {
        const auto& r = normalized.at(k);
        return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
};

/// Runs the decoder on one frequency row of the backbone output at a time
/// (in place of the frequency mean) and scores every class per row.
/// A class that scores zero on every row keeps an all-zero histogram.
inline BandHistogram band_activation_analysis(const ModelConfig& cfg, const ParamTree<double>& params,
                                              const std::vector<EvalClip>& clips, const ClipEvents& refs,
                                              const std::vector<std::string>& classes, const DecodeConfig& dc = {},
                                              const MatchConfig& mc = {}) {
    if (cfg.encoder != EncoderKind::mean_pool)
        throw ConfigError("band analysis needs a mean_pool model, got encoder '" + std::string(to_string(cfg.encoder)) + "'");
    if (classes.size() != cfg.num_classes)
        throw ConfigError("band analysis: " + std::to_string(classes.size()) + " class names for " +
                          std::to_string(cfg.num_classes) + " outputs");
    const std::size_t rows = cfg.freq_patches();
    if (rows == 1) std::cerr << "warning: one frequency row only; band analysis is degenerate\n";

    const ParamBinding<double> p(params, false);
    std::vector<ClipEvents> per_row(rows);
    for (const auto& clip : clips) {
        const auto po = encode_patches(clip.features, cfg, p);
        for (std::size_t f = 0; f < rows; ++f) {
            const auto pred = decode_frames(frequency_row(po, f, cfg.clip_seconds), cfg, p);
            per_row[f][clip.filename] = decode_events(pred.frame_probs.value(), classes, pred.seconds_per_step, dc);
        }
    }

    BandHistogram h;
    h.classes = classes;
    h.rows = rows;
    h.raw.assign(classes.size(), std::vector<double>(rows, 0.0));
    for (std::size_t f = 0; f < rows; ++f) {
        const auto res = eb_f1(refs, per_row[f], classes, mc);
        for (std::size_t k = 0; k < classes.size(); ++k) h.raw[k][f] = res.per_class.at(classes[k]).f1();
    }
    h.normalized = h.raw;
    for (auto& r : h.normalized) {
        const double top = *std::max_element(r.begin(), r.end());
        if (top > 0)
            for (auto& v : r) v /= top;
    }
    return h;
}

/// Frequency-patch rows whose mel span overlaps [lo_hz, hi_hz].
inline std::vector<std::size_t> rows_overlapping_band(const ModelConfig& cfg, double sample_rate, double lo_hz,
                                                      double hi_hz) {
    const auto edges = mel_band_edges(cfg.mel_bins, sample_rate);
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < cfg.freq_patches(); ++f) {
        const std::size_t first = f * cfg.stride_freq, last = first + cfg.patch_height - 1;
        const double row_lo = edges[first], row_hi = edges[last + 2];
        if (row_lo < hi_hz && lo_hz < row_hi) out.push_back(f);
    }
    return out;
}

}  // namespace astsed
