#pragma once

#include <map>
#include <string>
#include <vector>

#include "astsed/data/dataset.hpp"
#include "astsed/eval/report.hpp"

namespace astsed {

inline FrontendConfig frontend_for(const ModelConfig& cfg) {
    FrontendConfig fe;
    fe.mel_bins = cfg.mel_bins;
    return fe;
}

/// Normalized log-mel features of every clip in a split, checked against
/// the model's input geometry.
inline std::vector<EvalClip> load_split_features(const Dataset& ds, const std::string& split, const ModelConfig& cfg) {
    const auto fe = frontend_for(cfg);
    std::vector<EvalClip> out;
    for (const auto& rec : ds.split(split)) {
        auto spec = compute_features(read_wav(rec.path), fe);
        if (spec.frames() != cfg.input_frames)
            throw InputError(rec.path.string() + ": " + std::to_string(spec.frames()) + " frames, model expects " +
                             std::to_string(cfg.input_frames));
        out.push_back({rec.filename, std::move(spec)});
    }
    return out;
}

inline ClipEvents split_truth(const Dataset& ds, const std::string& split) {
    ClipEvents refs;
    for (const auto& rec : ds.split(split)) refs[rec.filename] = rec.events;
    return refs;
}

/// Frame posteriors [L, K] per clip.
using FrameProbs = std::map<std::string, NdArray<double>>;

inline FrameProbs predict_frames(const ModelConfig& cfg, const ParamTree<double>& params,
                                 const std::vector<EvalClip>& clips) {
    const ParamBinding<double> p(params, false);
    FrameProbs out;
    for (const auto& clip : clips) out[clip.filename] = forward(clip.features, cfg, p).frame_probs.value();
    return out;
}

inline ClipEvents decode_all(const FrameProbs& probs, const std::vector<std::string>& classes, double spf,
                             const DecodeConfig& dc) {
    ClipEvents out;
    for (const auto& [f, p] : probs) out[f] = decode_events(p, classes, spf, dc);
    return out;
}

inline std::vector<ClipEvents> decode_sweep(const FrameProbs& probs, const std::vector<std::string>& classes,
                                            double spf, const DecodeConfig& dc, const std::vector<double>& thresholds) {
    std::vector<ClipEvents> out;
    for (double t : thresholds) {
        DecodeConfig at = dc;
        at.threshold = t;
        out.push_back(decode_all(probs, classes, spf, at));
    }
    return out;
}

/// Decodes model posteriors at the operating threshold and over the PSDS
/// sweep, then scores them against `refs`.
inline EvalReport evaluate_posteriors(const FrameProbs& probs, const ClipEvents& refs, const ModelConfig& cfg,
                                      const std::vector<std::string>& classes, const EvalSettings& s) {
    const double spf = cfg.seconds_per_step();
    const auto ests = decode_all(probs, classes, spf, s.decode);
    const auto sweep = decode_sweep(probs, classes, spf, s.decode, default_thresholds(s.psds.thresholds));
    return evaluate(refs, ests, sweep, classes, probs.size(), cfg.clip_seconds, s);
}

}  // namespace astsed
