#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "astsed/io/kv_config.hpp"
#include "astsed/model/network.hpp"

namespace astsed {

// "ASTSEDCK" | u32 version | u8 param set | u64 config length | config text
// (`model.key = value` lines) | parameter container.

inline constexpr char kCheckpointMagic[8] = {'A', 'S', 'T', 'S', 'E', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T = double>
struct Checkpoint {
    ModelConfig config;
    ParamSet set = ParamSet::sed;
    ParamTree<T> params;
};

inline KeyValues model_config_record(const ModelConfig& cfg) {
    KeyValues kv;
    write_config(kv, "model.", cfg);
    return kv;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParamTree<T>& params,
                     ParamSet set = ParamSet::sed) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    serial::write_le<std::uint32_t>(os, kCheckpointVersion);
    serial::write_le<std::uint8_t>(os, set == ParamSet::sed ? 0 : 1);
    const std::string text = model_config_record(cfg).to_text();
    serial::write_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    save_params(os, params);
    if (!os) throw IoError("failed writing " + path.string());
}

template <typename T = double>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || !std::equal(magic, magic + 8, kCheckpointMagic)) throw IoError(path.string() + ": not a checkpoint");
    try {
        if (serial::read_le<std::uint32_t>(is) != kCheckpointVersion)
            throw IoError(path.string() + ": unsupported checkpoint version");
        Checkpoint<T> ck;
        ck.set = serial::read_le<std::uint8_t>(is) == 0 ? ParamSet::sed : ParamSet::tagging;
        const auto len = serial::read_le<std::uint64_t>(is);
        if (len > (1u << 20)) throw IoError(path.string() + ": corrupt config record");
        std::string text(len, '\0');
        is.read(text.data(), static_cast<std::streamsize>(len));
        if (!is) throw IoError(path.string() + ": truncated config record");
        read_config(KeyValues::parse(text, path.string()), "model.", ck.config);
        ck.params = load_params<T>(is);
        ck.params.require_same_structure(init_params<T>(ck.config, 0, ck.set));
        return ck;
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

/// Throws StructuralError naming the first model field that differs.
inline void require_same_model(const ModelConfig& stored, const ModelConfig& expected,
                               const std::string& what = "checkpoint") {
    const auto a = model_config_record(stored).entries();
    const auto b = model_config_record(expected).entries();
    for (const auto& [key, value] : a) {
        const auto& other = b.at(key);
        if (value != other) {
            throw StructuralError(what + " mismatch: " + key + " is " + value + " in checkpoint but " + other +
                                  " in configuration");
        }
    }
}

/// Loads an SED checkpoint that must match `expected` exactly.
template <typename T = double>
ParamTree<T> load_model_params(const std::filesystem::path& path, const ModelConfig& expected) {
    auto ck = load_checkpoint<T>(path);
    if (ck.set != ParamSet::sed) throw StructuralError(path.string() + " holds a pretraining backbone, not an SED model");
    require_same_model(ck.config, expected);
    return std::move(ck.params);
}

}  // namespace astsed
