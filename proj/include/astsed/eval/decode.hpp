#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "astsed/data/events.hpp"
#include "astsed/tensor/ndarray.hpp"

namespace astsed {

struct DecodeConfig {
    double threshold = 0.5;
    std::size_t median_window = 7;
    // optional per-class windows (same order as the vocabulary); empty means uniform
    std::vector<std::size_t> class_windows;
    // > 0: window given as a time length instead, converted to the nearest
    // odd step count at each model's output resolution
    double median_seconds = 0.0;

    template <typename V>
    void visit(V& v) {
        v("threshold", threshold);
        v("median_window", median_window);
        v("median_seconds", median_seconds);
        v("class_windows", class_windows);
    }

    std::size_t window_for(std::size_t k, double seconds_per_step = 0.0) const {
        if (k < class_windows.size()) return class_windows[k];
        if (median_seconds > 0.0 && seconds_per_step > 0.0) {
            const auto half = static_cast<std::size_t>(std::floor(median_seconds / seconds_per_step / 2.0 + 0.5));
            return 2 * half + 1;
        }
        return median_window;
    }

    void validate(std::size_t num_classes = 0) const {
        if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("decode: threshold must be in (0, 1)");
        auto check = [](std::size_t w) {
            if (w == 0 || w % 2 == 0) throw ConfigError("decode: median window must be odd and >= 1");
        };
        check(median_window);
        if (median_seconds < 0.0) throw ConfigError("decode: median_seconds must be non-negative");
        for (auto w : class_windows) check(w);
        if (!class_windows.empty() && num_classes && class_windows.size() != num_classes)
            throw ConfigError("decode: class_windows needs one entry per class");
    }
};

/// Odd-window median of a binary sequence; the ends are padded by
/// repeating the first and last values.
inline std::vector<std::uint8_t> median_filter(const std::vector<std::uint8_t>& x, std::size_t window) {
    if (window == 0 || window % 2 == 0) throw ConfigError("median window must be odd and >= 1");
    const std::size_t n = x.size(), half = window / 2;
    std::vector<std::uint8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t ones = 0;
        for (std::size_t k = 0; k < window; ++k) {
            const long j = static_cast<long>(i) + static_cast<long>(k) - static_cast<long>(half);
            const std::size_t idx = j < 0 ? 0 : std::min(static_cast<std::size_t>(j), n - 1);
            ones += x[idx];
        }
        out[i] = ones > half ? 1 : 0;
    }
    return out;
}

/// Column k of frame_probs thresholded (p >= threshold).
inline std::vector<std::uint8_t> binarize(const NdArray<double>& frame_probs, std::size_t k, double threshold) {
    std::vector<std::uint8_t> out(frame_probs.dim(0));
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = frame_probs.at(t, k) >= threshold ? 1 : 0;
    return out;
}

/// Maximal runs of ones as events [start * spf, (end + 1) * spf).
inline EventList runs_to_events(const std::vector<std::uint8_t>& active, const std::string& label,
                                double seconds_per_step) {
    EventList out;
    std::size_t t = 0;
    while (t < active.size()) {
        if (!active[t]) {
            ++t;
            continue;
        }
        std::size_t end = t;
        while (end + 1 < active.size() && active[end + 1]) ++end;
        out.push_back({label, static_cast<double>(t) * seconds_per_step,
                       static_cast<double>(end + 1) * seconds_per_step, 1.0});
        t = end + 1;
    }
    return out;
}

/// Frame posteriors [L, K] -> events: threshold, median filter, runs.
inline EventList decode_events(const NdArray<double>& frame_probs, const std::vector<std::string>& classes,
                               double seconds_per_step, const DecodeConfig& dc = {}) {
    if (frame_probs.rank() != 2 || frame_probs.dim(1) != classes.size())
        throw DimensionError("decode_events: probabilities " + shape_str(frame_probs.shape()) + " for " +
                             std::to_string(classes.size()) + " classes");
    EventList events;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        auto smoothed = median_filter(binarize(frame_probs, k, dc.threshold), dc.window_for(k, seconds_per_step));
        for (auto& e : runs_to_events(smoothed, classes[k], seconds_per_step)) events.push_back(std::move(e));
    }
    sort_events(events);
    return events;
}

/// PSDS operating points: (i + 1) / (n + 1), i = 0..n-1.
inline std::vector<double> default_thresholds(std::size_t n = 50) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
    return t;
}

}  // namespace astsed
