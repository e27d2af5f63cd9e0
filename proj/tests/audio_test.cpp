#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>

#include "astsed/audio/features.hpp"

using namespace astsed;

namespace {

Waveform sine(double hz, double seconds, double rate = 16000.0, double amp = 0.5) {
    Waveform w;
    w.sample_rate = rate;
    w.samples.resize(static_cast<std::size_t>(seconds * rate));
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / rate);
    return w;
}

std::size_t argmax_column(const NdArray<double>& a, std::size_t col) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < a.dim(0); ++r)
        if (a.at(r, col) > a.at(best, col)) best = r;
    return best;
}

Spectrogram random_spectrogram(std::mt19937_64& rng) {
    std::normal_distribution<double> d(-3.0, 2.0);
    Spectrogram s{NdArray<double>(Shape{8, 20}), 0.01};
    for (auto& v : s.values.values()) v = d(rng);
    return s;
}

void expect_moments(const Spectrogram& s, double mean, double sd, double tol) {
    double m = 0;
    for (double v : s.values.values()) m += v;
    m /= static_cast<double>(s.values.size());
    double var = 0;
    for (double v : s.values.values()) var += (v - m) * (v - m);
    EXPECT_NEAR(m, mean, tol);
    EXPECT_NEAR(std::sqrt(var / static_cast<double>(s.values.size())), sd, tol);
}

}  // namespace

TEST(Stft, SilenceIsZero) {
    Waveform w{std::vector<double>(16000, 0.0), 16000.0};
    auto mag = stft_magnitude(w);
    for (double v : mag.values()) EXPECT_EQ(v, 0.0);
}

TEST(Stft, FrameCountForTwoSecondClip) {
    auto mag = stft_magnitude(sine(440, 2.0));
    EXPECT_EQ(mag.dim(1), 198u);  // floor((32000 - 400) / 160) + 1
    EXPECT_EQ(mag.dim(0), 257u);  // 512 / 2 + 1
}

TEST(Stft, FrameCountFormulaProperty) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> win_d(1, 64), hop_d(1, 32), extra_d(0, 500);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t win = win_d(rng), hop = hop_d(rng), len = win + extra_d(rng);
        std::size_t brute = 0;
        for (std::size_t start = 0; start + win <= len; start += hop) ++brute;
        EXPECT_EQ(frame_count(len, win, hop), brute);
    }
}

TEST(Stft, SinePeakAtExpectedBin) {
    auto mag = stft_magnitude(sine(1000, 0.5));
    const std::size_t expected = static_cast<std::size_t>(std::lround(1000.0 * 512 / 16000));
    for (std::size_t t = 0; t < mag.dim(1); ++t) EXPECT_EQ(argmax_column(mag, t), expected);
}

TEST(Stft, MatchesDirectDft) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> d;
    Waveform w{std::vector<double>(1200), 16000.0};
    for (auto& s : w.samples) s = d(rng);
    auto mag = stft_magnitude(w);
    const std::size_t t = 3, hop = 160, win = 400, n = 512;
    for (std::size_t k = 0; k < mag.dim(0); k += 17) {
        std::complex<double> acc{0, 0};
        for (std::size_t i = 0; i < win; ++i) {
            const double hann = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / win);
            acc += w.samples[t * hop + i] * hann *
                   std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * i) / n);
        }
        EXPECT_NEAR(mag.at(k, t), std::abs(acc), 1e-9);
    }
}

TEST(Stft, ShortClipIsInputError) {
    Waveform w{std::vector<double>(100, 0.0), 16000.0};
    EXPECT_THROW(stft_magnitude(w), InputError);
}

TEST(LogMel, ZeroMagnitudeIsFloor) {
    FrontendConfig cfg;
    auto spec = log_mel(NdArray<double>(Shape{257, 4}), 16000.0, cfg);
    for (double v : spec.values.values()) EXPECT_DOUBLE_EQ(v, std::log(cfg.floor_eps));
}

TEST(LogMel, FilterbankRowsPositiveAndCoverage) {
    for (std::size_t m : {16u, 64u, 128u}) {
        auto fb = mel_filterbank(m, 257, 16000.0);
        for (std::size_t r = 0; r < m; ++r) {
            double s = 0;
            for (std::size_t k = 0; k < 257; ++k) s += fb.at(r, k);
            EXPECT_GT(s, 0.0) << "band " << r << " of " << m;
        }
        const auto edges = mel_band_edges(m, 16000.0);
        const double bin_hz = 8000.0 / 256;
        for (std::size_t k = 0; k < 257; ++k) {
            const double f = static_cast<double>(k) * bin_hz;
            if (f < edges[1] || f > edges[m]) continue;
            double s = 0;
            for (std::size_t r = 0; r < m; ++r) s += fb.at(r, k);
            EXPECT_GT(s, 0.0) << "bin " << k;
        }
    }
}

TEST(LogMel, SineAtBandCentreLandsInThatBand) {
    FrontendConfig cfg;
    const auto edges = mel_band_edges(cfg.mel_bins, 16000.0);
    for (std::size_t band : {8u, 20u, 35u, 50u}) {
        auto spec = log_mel(stft_magnitude(sine(edges[band + 1], 0.3)), 16000.0, cfg);
        for (std::size_t t = 0; t < spec.frames(); ++t) EXPECT_EQ(argmax_column(spec.values, t), band);
    }
}

TEST(LogMel, MonotoneInPower) {
    auto mag = stft_magnitude(sine(700, 0.2));
    auto louder = mag;
    for (auto& v : louder.values()) v *= std::sqrt(3.0);
    auto a = log_mel(mag, 16000.0), b = log_mel(louder, 16000.0);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_GT(b.values[i], a.values[i]);
}

TEST(LogMel, TooManyBandsIsConfigError) {
    FrontendConfig cfg;
    cfg.mel_bins = 300;
    EXPECT_THROW(log_mel(NdArray<double>(Shape{257, 2}), 16000.0, cfg), ConfigError);
}

TEST(Normalize, MeanZeroStdHalf) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) expect_moments(normalize(random_spectrogram(rng)), 0.0, 0.5, 1e-9);
}

TEST(Normalize, FixedPointIdempotentAndAffineInvariant) {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        auto once = normalize(random_spectrogram(rng));
        auto twice = normalize(once);
        EXPECT_LE(max_abs_diff(once.values, twice.values), 1e-9);

        auto shifted = once;
        for (auto& v : shifted.values.values()) v = 3.7 * v - 12.0;
        EXPECT_LE(max_abs_diff(normalize(shifted).values, once.values), 1e-9);
    }
}

TEST(Normalize, ConstantGivesZeros) {
    Spectrogram s{NdArray<double>(Shape{4, 5}, 2.5), 0.01};
    const auto out = normalize(s);
    for (double v : out.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(Wav, RoundTripWithinQuantization) {
    auto dir = std::filesystem::temp_directory_path() / "astsed_audio_test";
    std::filesystem::create_directories(dir);
    auto w = sine(523.25, 0.1);
    write_wav(dir / "a.wav", w);
    auto back = read_wav(dir / "a.wav");
    ASSERT_EQ(back.samples.size(), w.samples.size());
    EXPECT_EQ(back.sample_rate, 16000.0);
    for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32767);
    // Reading and rewriting a quantized file is lossless.
    write_wav(dir / "b.wav", back);
    EXPECT_EQ(read_wav(dir / "b.wav").samples, back.samples);
}

TEST(Wav, MissingFileIsIoError) {
    EXPECT_THROW(read_wav("/nonexistent/clip.wav"), IoError);
}
