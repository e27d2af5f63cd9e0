#pragma once

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "astsed/audio/waveform.hpp"
#include "astsed/tensor/ndarray.hpp"

namespace astsed {

struct FrontendConfig {
    double window_seconds = 0.025;
    double hop_seconds = 0.010;
    std::size_t mel_bins = 64;
    double floor_eps = 1e-10;
};

/// Log-mel features [mel_bins, frames].
struct Spectrogram {
    NdArray<double> values;
    double hop_seconds = 0.010;

    std::size_t mel_bins() const { return values.dim(0); }
    std::size_t frames() const { return values.dim(1); }
    double frame_rate() const { return 1.0 / hop_seconds; }
};

inline std::size_t window_samples(const FrontendConfig& cfg, double sample_rate) {
    return static_cast<std::size_t>(std::lround(cfg.window_seconds * sample_rate));
}

inline std::size_t hop_samples(const FrontendConfig& cfg, double sample_rate) {
    return static_cast<std::size_t>(std::lround(cfg.hop_seconds * sample_rate));
}

inline std::size_t fft_size_for(std::size_t window) {
    std::size_t n = 1;
    while (n < window) n <<= 1;
    return n;
}

inline std::size_t frame_count(std::size_t samples, std::size_t window, std::size_t hop) {
    if (samples < window) {
        throw InputError("clip of " + std::to_string(samples) + " samples is shorter than one " +
                         std::to_string(window) + "-sample window");
    }
    return (samples - window) / hop + 1;
}

/// Hann-windowed magnitude spectrogram [fft/2 + 1, frames], no padding.
inline NdArray<double> stft_magnitude(const Waveform& w, const FrontendConfig& cfg = {}) {
    const std::size_t win = window_samples(cfg, w.sample_rate);
    const std::size_t hop = hop_samples(cfg, w.sample_rate);
    const std::size_t frames = frame_count(w.samples.size(), win, hop);
    const std::size_t nfft = fft_size_for(win);
    const std::size_t bins = nfft / 2 + 1;

    std::vector<double> window(win);
    for (std::size_t i = 0; i < win; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));

    Eigen::FFT<double> fft;
    std::vector<double> frame(nfft, 0.0);
    std::vector<std::complex<double>> spectrum;
    NdArray<double> mag(Shape{bins, frames});
    for (std::size_t t = 0; t < frames; ++t) {
        std::fill(frame.begin(), frame.end(), 0.0);
        for (std::size_t i = 0; i < win; ++i) frame[i] = w.samples[t * hop + i] * window[i];
        fft.fwd(spectrum, frame);
        for (std::size_t k = 0; k < bins; ++k) mag.at(k, t) = std::abs(spectrum[k]);
    }
    return mag;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Band edges in Hz: mel_bins + 2 points equally spaced on the mel scale
/// from 0 to Nyquist. Band m spans [edges[m], edges[m + 2]] with its peak at
/// edges[m + 1].
inline std::vector<double> mel_band_edges(std::size_t mel_bins, double sample_rate) {
    std::vector<double> edges(mel_bins + 2);
    const double top = hz_to_mel(sample_rate / 2.0);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(mel_bins + 1));
    return edges;
}

namespace detail {

// Integral of the unit-peak triangle (l, c, r) over [a, b].
inline double triangle_integral(double l, double c, double r, double a, double b) {
    double total = 0.0;
    if (const double x1 = std::max(a, l), x2 = std::min(b, c); x2 > x1)
        total += ((x2 - l) * (x2 - l) - (x1 - l) * (x1 - l)) / (2.0 * (c - l));
    if (const double x1 = std::max(a, c), x2 = std::min(b, r); x2 > x1)
        total += ((r - x1) * (r - x1) - (r - x2) * (r - x2)) / (2.0 * (r - c));
    return total;
}

}  // namespace detail

/// Triangular mel filterbank [mel_bins, fft_bins]. Each weight is the mean
/// of the triangle over the FFT bin's frequency extent, so even bands
/// narrower than one bin receive positive mass.
inline NdArray<double> mel_filterbank(std::size_t mel_bins, std::size_t fft_bins, double sample_rate) {
    if (mel_bins < 2) throw ConfigError("mel filterbank needs at least 2 bands");
    if (mel_bins > fft_bins) {
        throw ConfigError(std::to_string(mel_bins) + " mel bands exceed " + std::to_string(fft_bins) +
                          " frequency bins");
    }
    const auto edges = mel_band_edges(mel_bins, sample_rate);
    const double bin_hz = (sample_rate / 2.0) / static_cast<double>(fft_bins - 1);
    NdArray<double> fb(Shape{mel_bins, fft_bins});
    for (std::size_t m = 0; m < mel_bins; ++m) {
        for (std::size_t k = 0; k < fft_bins; ++k) {
            const double centre = static_cast<double>(k) * bin_hz;
            fb.at(m, k) = detail::triangle_integral(edges[m], edges[m + 1], edges[m + 2],
                                                    centre - bin_hz / 2, centre + bin_hz / 2) / bin_hz;
        }
    }
    return fb;
}

/// ln(melfb . |X|^2 + floor_eps), shape [mel_bins, frames].
inline Spectrogram log_mel(const NdArray<double>& magnitude, double sample_rate, const FrontendConfig& cfg = {}) {
    const std::size_t bins = magnitude.dim(0), frames = magnitude.dim(1);
    const auto fb = mel_filterbank(cfg.mel_bins, bins, sample_rate);
    NdArray<double> power = magnitude;
    for (auto& v : power.values()) v *= v;
    Spectrogram spec{NdArray<double>(Shape{cfg.mel_bins, frames}), cfg.hop_seconds};
    as_matrix(spec.values).noalias() = as_matrix(fb) * as_matrix(power);
    for (auto& v : spec.values.values()) v = std::log(v + cfg.floor_eps);
    return spec;
}

inline constexpr double kFeatureStd = 0.5;

/// Per-clip standardization to mean 0, standard deviation 0.5. A constant
/// spectrogram maps to all zeros (and is reported on stderr).
inline Spectrogram normalize(const Spectrogram& spec) {
    Spectrogram out = spec;
    const auto& v = spec.values;
    double mean = 0.0;
    for (double x : v.values()) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v.values()) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    if (!(sd > 0.0)) {
        std::cerr << "warning: constant spectrogram, normalizing to zeros\n";
        out.values.fill(0.0);
        return out;
    }
    for (auto& x : out.values.values()) x = (x - mean) / sd * kFeatureStd;
    return out;
}

inline Spectrogram compute_features(const Waveform& w, const FrontendConfig& cfg = {}) {
    return normalize(log_mel(stft_magnitude(w, cfg), w.sample_rate, cfg));
}

/// Spectrogram dump: one line per mel band, tab-separated frames.
inline void write_spectrogram_tsv(const std::filesystem::path& path, const Spectrogram& spec) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    char buf[32];
    for (std::size_t m = 0; m < spec.mel_bins(); ++m) {
        for (std::size_t t = 0; t < spec.frames(); ++t) {
            std::snprintf(buf, sizeof(buf), "%.9g", spec.values.at(m, t));
            if (t) os << '\t';
            os << buf;
        }
        os << '\n';
    }
}

}  // namespace astsed
