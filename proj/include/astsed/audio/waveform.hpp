#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "astsed/tensor/errors.hpp"

namespace astsed {

struct Waveform {
    std::vector<double> samples;
    double sample_rate = 16000.0;

    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace wav_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace wav_detail

/// Single-channel 16-bit PCM RIFF. Samples are expected in [-1, 1] and are
/// clipped to that range.
inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
    using namespace wav_detail;
    const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::string bytes;
    bytes.reserve(44 + data_bytes);
    bytes += "RIFF";
    put_u32(bytes, 36 + data_bytes);
    bytes += "WAVEfmt ";
    put_u32(bytes, 16);
    put_u16(bytes, 1);  // PCM
    put_u16(bytes, 1);  // mono
    put_u32(bytes, rate);
    put_u32(bytes, rate * 2);
    put_u16(bytes, 2);
    put_u16(bytes, 16);
    bytes += "data";
    put_u32(bytes, data_bytes);
    for (double s : w.samples) {
        const double clipped = std::clamp(s, -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::lround(clipped * 32767.0));
        put_u16(bytes, static_cast<std::uint16_t>(q));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

inline Waveform read_wav(const std::filesystem::path& path) {
    using namespace wav_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
        throw IoError(path.string() + ": not a RIFF/WAVE file");
    }
    Waveform w;
    bool have_fmt = false, have_data = false;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const unsigned char* chunk = buf.data() + pos;
        const std::uint32_t size = get_u32(chunk + 4);
        if (pos + 8 + size > buf.size()) throw IoError(path.string() + ": truncated chunk");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16) throw IoError(path.string() + ": short fmt chunk");
            const auto format = get_u16(chunk + 8);
            const auto channels = get_u16(chunk + 10);
            const auto bits = get_u16(chunk + 22);
            if (format != 1 || channels != 1 || bits != 16) {
                throw IoError(path.string() + ": only mono 16-bit PCM is supported");
            }
            w.sample_rate = get_u32(chunk + 12);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto raw = static_cast<std::int16_t>(get_u16(chunk + 8 + 2 * i));
                w.samples[i] = raw / 32767.0;
            }
            have_data = true;
        }
        pos += 8 + size + (size & 1);
    }
    if (!have_fmt || !have_data) throw IoError(path.string() + ": missing fmt or data chunk");
    if (w.sample_rate <= 0) throw IoError(path.string() + ": invalid sample rate");
    return w;
}

}  // namespace astsed
