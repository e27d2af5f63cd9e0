#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "astsed/eval/inference.hpp"

namespace astsed {

/// One training clip. Frame labels live at input-frame resolution so that
/// time shifts move features and labels together; they are resampled to
/// the model's output steps when the loss is built.
struct TrainExample {
    std::string filename;
    NdArray<double> features;      // [M, T_in], normalized log-mel
    NdArray<double> frame_labels;  // [T_in, K]
    NdArray<double> clip_labels;   // [K]
    bool has_clip_labels = false;
    bool has_frame_labels = false;
    std::size_t group = 0;  // MixUp partners share a group
};

enum class SourceGroup : std::size_t { strong = 0, weak = 1, unlabeled = 2 };

/// Frame j is active for an event when its centre j*hop + win/2 lies in
/// [onset, offset).
inline NdArray<double> rasterize_frames(const EventList& events, const std::vector<std::string>& classes,
                                        std::size_t frames, const FrontendConfig& fe) {
    NdArray<double> out(Shape{frames, classes.size()});
    for (const auto& e : events) {
        const auto it = std::find(classes.begin(), classes.end(), e.label);
        if (it == classes.end()) throw InputError("event label '" + e.label + "' is not in the vocabulary");
        const std::size_t k = static_cast<std::size_t>(it - classes.begin());
        for (std::size_t j = 0; j < frames; ++j) {
            const double c = static_cast<double>(j) * fe.hop_seconds + fe.window_seconds / 2.0;
            if (c >= e.onset && c < e.offset) out.at(j, k) = 1.0;
        }
    }
    return out;
}

inline NdArray<double> clip_label_vector(const std::set<std::string>& labels, const std::vector<std::string>& classes) {
    NdArray<double> out(Shape{classes.size()});
    for (const auto& l : labels) {
        const auto it = std::find(classes.begin(), classes.end(), l);
        if (it == classes.end()) throw InputError("label '" + l + "' is not in the vocabulary");
        out[static_cast<std::size_t>(it - classes.begin())] = 1.0;
    }
    return out;
}

/// Input-frame labels [T_in, K] -> output-step labels [L, K]: each step
/// takes the frame whose centre is nearest to its own centre.
inline NdArray<double> resample_labels(const NdArray<double>& frame_labels, std::size_t steps, double clip_seconds,
                                       const FrontendConfig& fe) {
    const std::size_t frames = frame_labels.dim(0), k = frame_labels.dim(1);
    NdArray<double> out(Shape{steps, k});
    const double spf = clip_seconds / static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const double centre = (static_cast<double>(s) + 0.5) * spf;
        const double j = std::round((centre - fe.window_seconds / 2.0) / fe.hop_seconds);
        const auto idx = static_cast<std::size_t>(std::clamp(j, 0.0, static_cast<double>(frames - 1)));
        for (std::size_t c = 0; c < k; ++c) out.at(s, c) = frame_labels.at(idx, c);
    }
    return out;
}

/// Training sources in batch order.
inline constexpr std::array<const char*, 4> kTrainSources{"strong_real", "strong_synth", "weak", "unlabeled"};

struct TrainingData {
    std::vector<std::string> classes;
    std::map<std::string, std::vector<TrainExample>> sources;
};

inline TrainingData load_training_data(const Dataset& ds, const ModelConfig& cfg) {
    TrainingData td;
    td.classes = ds.vocabulary();
    if (td.classes.size() != cfg.num_classes)
        throw ConfigError("model.num_classes is " + std::to_string(cfg.num_classes) + " but the dataset has " +
                          std::to_string(td.classes.size()) + " classes");
    const auto fe = frontend_for(cfg);
    for (const std::string source : kTrainSources) {
        auto clips = load_split_features(ds, source, cfg);
        const auto& records = ds.split(source);
        auto& dst = td.sources[source];
        for (std::size_t i = 0; i < clips.size(); ++i) {
            const auto& rec = records[i];
            TrainExample ex;
            ex.filename = rec.filename;
            ex.features = std::move(clips[i].features.values);
            ex.frame_labels = NdArray<double>(Shape{cfg.input_frames, td.classes.size()});
            ex.clip_labels = NdArray<double>(Shape{td.classes.size()});
            switch (rec.supervision) {
                case Supervision::strong:
                    ex.frame_labels = rasterize_frames(rec.events, td.classes, cfg.input_frames, fe);
                    ex.clip_labels = clip_label_vector(label_set(rec.events), td.classes);
                    ex.has_clip_labels = ex.has_frame_labels = true;
                    ex.group = static_cast<std::size_t>(SourceGroup::strong);
                    break;
                case Supervision::weak:
                    ex.clip_labels = clip_label_vector(rec.weak_labels, td.classes);
                    ex.has_clip_labels = true;
                    ex.group = static_cast<std::size_t>(SourceGroup::weak);
                    break;
                case Supervision::none:
                    ex.group = static_cast<std::size_t>(SourceGroup::unlabeled);
                    break;
            }
            dst.push_back(std::move(ex));
        }
    }
    return td;
}

}  // namespace astsed
