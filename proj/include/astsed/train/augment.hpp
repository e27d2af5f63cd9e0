#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "astsed/train/examples.hpp"
#include "astsed/util/rng.hpp"

namespace astsed {

struct AugmentConfig {
    double mixup_prob = 0.5;
    double shift_prob = 0.5;
    double mask_prob = 0.5;
    double filter_prob = 0.5;
    double mask_max_fraction = 0.1;
    double filter_db = 6.0;
    std::size_t filter_min_segments = 2;
    std::size_t filter_max_segments = 4;

    template <typename V>
    void visit(V& v) {
        v("mixup_prob", mixup_prob);
        v("shift_prob", shift_prob);
        v("mask_prob", mask_prob);
        v("filter_prob", filter_prob);
        v("mask_max_fraction", mask_max_fraction);
        v("filter_db", filter_db);
        v("filter_min_segments", filter_min_segments);
        v("filter_max_segments", filter_max_segments);
    }

    void validate() const {
        for (double p : {mixup_prob, shift_prob, mask_prob, filter_prob})
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: probabilities must be in [0, 1]");
        if (!(mask_max_fraction >= 0.0 && mask_max_fraction <= 1.0))
            throw ConfigError("augment: mask_max_fraction must be in [0, 1]");
        if (filter_db < 0) throw ConfigError("augment: filter_db must be non-negative");
        if (filter_min_segments < 1 || filter_max_segments < filter_min_segments)
            throw ConfigError("augment: filter segment range must satisfy 1 <= min <= max");
    }

    static AugmentConfig none() { return {0.0, 0.0, 0.0, 0.0}; }
};

/// Beta(0.5, 0.5) draw: sin^2(pi U / 2) for U uniform on [0, 1).
inline double beta_half(std::mt19937_64& rng) {
    const double s = std::sin(std::numbers::pi * uniform01(rng) / 2.0);
    return s * s;
}

/// Convex combination lambda*a + (1-lambda)*b of features and both label sets.
inline TrainExample mixup(const TrainExample& a, const TrainExample& b, double lambda) {
    TrainExample out = a;
    auto mix = [lambda](NdArray<double>& dst, const NdArray<double>& x, const NdArray<double>& y) {
        if (x.shape() != y.shape()) throw DimensionError("mixup: shape " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = lambda * x[i] + (1.0 - lambda) * y[i];
    };
    mix(out.features, a.features, b.features);
    mix(out.frame_labels, a.frame_labels, b.frame_labels);
    mix(out.clip_labels, a.clip_labels, b.clip_labels);
    return out;
}

/// Circular shift by `offset` input frames, features and frame labels alike.
inline void time_shift(TrainExample& ex, std::size_t offset) {
    const std::size_t frames = ex.features.dim(1);
    offset %= frames;
    if (offset == 0) return;
    const NdArray<double> f = ex.features, l = ex.frame_labels;
    for (std::size_t m = 0; m < f.dim(0); ++m)
        for (std::size_t t = 0; t < frames; ++t) ex.features.at(m, (t + offset) % frames) = f.at(m, t);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t k = 0; k < l.dim(1); ++k) ex.frame_labels.at((t + offset) % frames, k) = l.at(t, k);
}

/// Zeroes frames [start, start + width); labels are untouched.
inline void time_mask(TrainExample& ex, std::size_t start, std::size_t width) {
    const std::size_t frames = ex.features.dim(1);
    for (std::size_t m = 0; m < ex.features.dim(0); ++m)
        for (std::size_t t = start; t < std::min(frames, start + width); ++t) ex.features.at(m, t) = 0.0;
}

/// Piecewise-linear gain over mel bins: `knots` gains in dB at evenly
/// ordered random bin positions, interpolated linearly. The dB gain is
/// applied as an additive log-power offset in units of the normalized
/// features.
inline std::vector<double> filter_gain_curve(std::size_t bins, std::size_t segments, double max_db,
                                             std::mt19937_64& rng) {
    std::vector<double> pos{0.0};
    for (std::size_t s = 1; s < segments; ++s) pos.push_back(uniform(rng, 0.0, static_cast<double>(bins - 1)));
    pos.push_back(static_cast<double>(bins - 1));
    std::sort(pos.begin(), pos.end());
    std::vector<double> gain(pos.size());
    for (auto& g : gain) g = uniform(rng, -max_db, max_db);
    std::vector<double> curve(bins);
    for (std::size_t m = 0; m < bins; ++m) {
        const double x = static_cast<double>(m);
        std::size_t seg = 0;
        while (seg + 2 < pos.size() && x > pos[seg + 1]) ++seg;
        const double w = pos[seg + 1] > pos[seg] ? (x - pos[seg]) / (pos[seg + 1] - pos[seg]) : 0.0;
        curve[m] = (1.0 - w) * gain[seg] + w * gain[seg + 1];
    }
    return curve;
}

inline void filter_augment(TrainExample& ex, const std::vector<double>& gain_db) {
    const double to_units = std::log(10.0) / 10.0 * kFeatureStd;
    for (std::size_t m = 0; m < ex.features.dim(0); ++m)
        for (std::size_t t = 0; t < ex.features.dim(1); ++t) ex.features.at(m, t) += gain_db[m] * to_units;
}

/// Augments a batch. Each clip independently: time shift, MixUp with a
/// partner from its own group (drawn among the shifted clips), time mask,
/// FilterAugment, each with its own probability.
inline std::vector<TrainExample> augment_batch(const std::vector<TrainExample>& batch, const AugmentConfig& ac,
                                               std::mt19937_64& rng) {
    std::vector<TrainExample> shifted = batch;
    for (auto& ex : shifted)
        if (uniform01(rng) < ac.shift_prob) time_shift(ex, uniform_index(rng, ex.features.dim(1)));

    std::vector<TrainExample> out = shifted;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(uniform01(rng) < ac.mixup_prob)) continue;
        std::vector<std::size_t> partners;
        for (std::size_t j = 0; j < shifted.size(); ++j)
            if (j != i && shifted[j].group == shifted[i].group) partners.push_back(j);
        if (partners.empty()) continue;
        const auto& b = shifted[partners[uniform_index(rng, partners.size())]];
        out[i] = mixup(shifted[i], b, beta_half(rng));
    }
    for (auto& ex : out) {
        const std::size_t frames = ex.features.dim(1);
        if (uniform01(rng) < ac.mask_prob) {
            const auto max_w = static_cast<std::size_t>(std::floor(ac.mask_max_fraction * static_cast<double>(frames)));
            if (max_w > 0) {
                const std::size_t w = 1 + uniform_index(rng, max_w);
                time_mask(ex, uniform_index(rng, frames - w + 1), w);
            }
        }
        if (uniform01(rng) < ac.filter_prob) {
            const std::size_t segs =
                ac.filter_min_segments + uniform_index(rng, ac.filter_max_segments - ac.filter_min_segments + 1);
            filter_augment(ex, filter_gain_curve(ex.features.dim(0), segs, ac.filter_db, rng));
        }
    }
    return out;
}

}  // namespace astsed
