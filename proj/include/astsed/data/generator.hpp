#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "astsed/audio/waveform.hpp"
#include "astsed/data/events.hpp"
#include "astsed/util/rng.hpp"

namespace astsed {

enum class SignalKind { tone_burst, harmonic, chirp, noise_band, broadband };

inline const char* to_string(SignalKind k) {
    switch (k) {
        case SignalKind::tone_burst: return "tone_burst";
        case SignalKind::harmonic: return "harmonic";
        case SignalKind::chirp: return "chirp";
        case SignalKind::noise_band: return "noise_band";
        case SignalKind::broadband: return "broadband";
    }
    return "?";
}

inline void from_string(std::string_view s, SignalKind& k) {
    for (auto c : {SignalKind::tone_burst, SignalKind::harmonic, SignalKind::chirp, SignalKind::noise_band,
                   SignalKind::broadband}) {
        if (s == to_string(c)) {
            k = c;
            return;
        }
    }
    throw ConfigError("unknown signal kind '" + std::string(s) + "'");
}

/// One synthetic event class. `band_lo`/`band_hi` bound the occupied
/// spectrum in Hz; for harmonic templates the fundamental is drawn from
/// [band_lo, 1.6 band_lo] and partials stop at band_hi.
struct EventTemplate {
    std::string name;
    SignalKind kind = SignalKind::tone_burst;
    double band_lo = 0.0;
    double band_hi = 0.0;
    double dur_lo = 0.1;
    double dur_hi = 0.5;
    double amp_lo = 0.05;
    double amp_hi = 0.15;

    template <typename V>
    void visit(V& v) {
        v("kind", kind);
        v("band_lo", band_lo);
        v("band_hi", band_hi);
        v("dur_lo", dur_lo);
        v("dur_hi", dur_hi);
        v("amp_lo", amp_lo);
        v("amp_hi", amp_hi);
    }

    double mean_duration(double clip_seconds) const { return 0.5 * (dur_lo + std::min(dur_hi, clip_seconds)); }
    double mean_amplitude() const { return 0.5 * (amp_lo + amp_hi); }
};

/// Six classes covering high, low, mid (two) and all-band spectra, with
/// durations given as fractions of the clip so short and long regimes
/// exist at any clip length.
inline std::vector<EventTemplate> default_vocabulary(double clip_seconds = 2.0) {
    const double c = clip_seconds;
    return {
        {"beep_hi", SignalKind::tone_burst, 3800, 4800, 0.06 * c, 0.20 * c, 0.05, 0.15},
        {"hum_lo", SignalKind::harmonic, 100, 520, 0.55 * c, 0.95 * c, 0.05, 0.15},
        {"chirp_mid", SignalKind::chirp, 900, 1500, 0.15 * c, 0.40 * c, 0.05, 0.15},
        {"knock_mid", SignalKind::noise_band, 1800, 2600, 0.05 * c, 0.15 * c, 0.05, 0.15},
        {"hiss_all", SignalKind::broadband, 0, 8000, 0.50 * c, 0.90 * c, 0.03, 0.08},
        {"buzz_all", SignalKind::harmonic, 150, 6000, 0.25 * c, 0.60 * c, 0.04, 0.10},
    };
}

struct ClipOptions {
    double clip_seconds = 2.0;
    double sample_rate = 16000.0;
    std::size_t max_polyphony = 3;
    double snr_db = 30.0;  // noise floor below the mean event amplitude
};

inline void validate_templates(const std::vector<EventTemplate>& templates, const ClipOptions& opt) {
    if (templates.empty()) throw ConfigError("vocabulary is empty");
    const double nyquist = opt.sample_rate / 2.0;
    for (const auto& t : templates) {
        auto fail = [&](const std::string& m) { throw ConfigError("template '" + t.name + "': " + m); };
        if (t.name.empty()) throw ConfigError("template with empty name");
        if (t.kind == SignalKind::broadband) {
            if (t.band_hi > nyquist) fail("band above Nyquist (" + std::to_string(std::lround(nyquist)) + " Hz)");
        } else {
            if (!(t.band_lo > 0.0) || !(t.band_hi > t.band_lo)) fail("band must satisfy 0 < band_lo < band_hi");
            if (t.band_hi >= nyquist) fail("band above Nyquist (" + std::to_string(std::lround(nyquist)) + " Hz)");
        }
        if (!(t.dur_lo > 0.0) || t.dur_hi < t.dur_lo) fail("duration range must be positive and ordered");
        if (t.dur_lo > opt.clip_seconds) fail("minimum duration exceeds the clip length");
        if (!(t.amp_lo > 0.0) || t.amp_hi < t.amp_lo) fail("amplitude range must be positive and ordered");
    }
    if (opt.max_polyphony < 1) throw ConfigError("max_polyphony must be at least 1");
    if (!(opt.clip_seconds > 0.0) || !(opt.sample_rate > 0.0)) throw ConfigError("clip length and sample rate must be positive");
}

namespace gen_detail {

// Unit-RMS source signal of `n` samples.
inline std::vector<double> synthesize(const EventTemplate& t, std::size_t n, double sr, std::mt19937_64& rng) {
    std::vector<double> s(n, 0.0);
    const double two_pi = 2.0 * std::numbers::pi;
    switch (t.kind) {
        case SignalKind::tone_burst: {
            const double f = uniform(rng, t.band_lo, t.band_hi);
            const double phase = uniform(rng, 0.0, two_pi);
            for (std::size_t i = 0; i < n; ++i) s[i] = std::sin(two_pi * f * static_cast<double>(i) / sr + phase);
            break;
        }
        case SignalKind::harmonic: {
            const double f0 = uniform(rng, t.band_lo, std::min(1.6 * t.band_lo, t.band_hi));
            for (int k = 1; k * f0 <= t.band_hi; ++k) {
                const double phase = uniform(rng, 0.0, two_pi);
                for (std::size_t i = 0; i < n; ++i)
                    s[i] += std::sin(two_pi * k * f0 * static_cast<double>(i) / sr + phase) / k;
            }
            break;
        }
        case SignalKind::chirp: {
            const bool up = uniform01(rng) < 0.5;
            const double f0 = up ? t.band_lo : t.band_hi, f1 = up ? t.band_hi : t.band_lo;
            const double d = static_cast<double>(n) / sr;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = static_cast<double>(i) / sr;
                s[i] = std::sin(two_pi * (f0 * x + (f1 - f0) * x * x / (2.0 * d)));
            }
            break;
        }
        case SignalKind::noise_band: {
            for (int k = 0; k < 48; ++k) {
                const double f = uniform(rng, t.band_lo, t.band_hi);
                const double phase = uniform(rng, 0.0, two_pi);
                for (std::size_t i = 0; i < n; ++i) s[i] += std::sin(two_pi * f * static_cast<double>(i) / sr + phase);
            }
            break;
        }
        case SignalKind::broadband:
            for (auto& v : s) v = normal01(rng);
            break;
    }
    double energy = 0.0;
    for (double v : s) energy += v * v;
    const double rms = std::sqrt(energy / static_cast<double>(std::max<std::size_t>(n, 1)));
    if (rms > 0.0)
        for (auto& v : s) v /= rms;
    return s;
}

inline bool overlaps_same_class(const EventList& events, const Event& e) {
    for (const auto& o : events)
        if (o.label == e.label && e.onset < o.offset && o.onset < e.offset) return true;
    return false;
}

}  // namespace gen_detail

/// Draws 1..max_polyphony events, synthesizes them over a white noise floor
/// and returns the waveform with its exact event list. Onsets and offsets
/// are whole milliseconds; events of the same class never overlap.
inline std::pair<Waveform, EventList> generate_clip(const std::vector<EventTemplate>& templates, std::uint64_t seed,
                                                    const ClipOptions& opt = {}) {
    validate_templates(templates, opt);
    std::mt19937_64 rng(seed);
    const auto total = static_cast<std::size_t>(std::lround(opt.clip_seconds * opt.sample_rate));
    Waveform w{std::vector<double>(total, 0.0), opt.sample_rate};

    double mean_amp = 0.0;
    for (const auto& t : templates) mean_amp += t.mean_amplitude();
    mean_amp /= static_cast<double>(templates.size());
    const double noise_rms = mean_amp * std::pow(10.0, -opt.snr_db / 20.0);
    for (auto& v : w.samples) v = noise_rms * normal01(rng);

    EventList events;
    const std::size_t wanted = 1 + uniform_index(rng, opt.max_polyphony);
    for (std::size_t e = 0; e < wanted; ++e) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            const auto& t = templates[uniform_index(rng, templates.size())];
            const double dur = std::max(0.001, round_ms(uniform(rng, t.dur_lo, std::min(t.dur_hi, opt.clip_seconds))));
            Event ev{t.name, round_ms(uniform(rng, 0.0, opt.clip_seconds - dur)), 0.0};
            ev.offset = std::min(round_ms(ev.onset + dur), round_ms(opt.clip_seconds));
            if (!(ev.offset > ev.onset) || gen_detail::overlaps_same_class(events, ev)) continue;

            const auto start = static_cast<std::size_t>(std::lround(ev.onset * opt.sample_rate));
            const auto stop = std::min(total, static_cast<std::size_t>(std::lround(ev.offset * opt.sample_rate)));
            const std::size_t n = stop - start;
            auto sig = gen_detail::synthesize(t, n, opt.sample_rate, rng);
            const double amp = uniform(rng, t.amp_lo, t.amp_hi);
            const std::size_t ramp = std::min<std::size_t>(static_cast<std::size_t>(0.01 * opt.sample_rate), n / 4);
            for (std::size_t i = 0; i < n; ++i) {
                double env = 1.0;
                if (ramp > 0 && i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp);
                if (ramp > 0 && n - 1 - i < ramp)
                    env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n - 1 - i) / ramp));
                w.samples[start + i] += amp * env * sig[i];
            }
            events.push_back(ev);
            break;
        }
    }
    sort_events(events);
    return {std::move(w), std::move(events)};
}

}  // namespace astsed
