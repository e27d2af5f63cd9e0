#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "astsed/data/generator.hpp"
#include "astsed/io/kv_config.hpp"

namespace astsed {

enum class Supervision { strong, weak, none };

struct SplitInfo {
    const char* name;
    Supervision supervision;
    bool real_like;  // noisier recordings
};

/// Splits in generation order. strong_real/strong_synth/weak/unlabeled are
/// the training sources; validation and test are strongly labelled and held out.
inline constexpr std::array<SplitInfo, 6> kSplits{{
    {"strong_real", Supervision::strong, true},
    {"strong_synth", Supervision::strong, false},
    {"weak", Supervision::weak, true},
    {"unlabeled", Supervision::none, true},
    {"validation", Supervision::strong, true},
    {"test", Supervision::strong, true},
}};

struct DatasetManifest {
    std::size_t strong_real = 50;
    std::size_t strong_synth = 50;
    std::size_t weak = 100;
    std::size_t unlabeled = 100;
    std::size_t validation = 100;
    std::size_t test = 200;
    std::uint64_t seed = 7;
    double clip_seconds = 2.0;
    double sample_rate = 16000.0;
    std::size_t max_polyphony = 3;
    double snr_db = 30.0;
    double real_snr_db = 20.0;

    template <typename V>
    void visit(V& v) {
        v("strong_real", strong_real);
        v("strong_synth", strong_synth);
        v("weak", weak);
        v("unlabeled", unlabeled);
        v("validation", validation);
        v("test", test);
        v("seed", seed);
        v("clip_seconds", clip_seconds);
        v("sample_rate", sample_rate);
        v("max_polyphony", max_polyphony);
        v("snr_db", snr_db);
        v("real_snr_db", real_snr_db);
    }

    std::size_t size_of(const std::string& split) const {
        if (split == "strong_real") return strong_real;
        if (split == "strong_synth") return strong_synth;
        if (split == "weak") return weak;
        if (split == "unlabeled") return unlabeled;
        if (split == "validation") return validation;
        if (split == "test") return test;
        throw ConfigError("unknown split '" + split + "'");
    }

    ClipOptions clip_options(bool real_like) const {
        return {clip_seconds, sample_rate, max_polyphony, real_like ? real_snr_db : snr_db};
    }
};

/// Default templates with `template.<name>.<field>` overrides applied.
/// Unknown template names are rejected.
inline std::vector<EventTemplate> vocabulary_from(const KeyValues& kv, double clip_seconds,
                                                  std::set<std::string>* consumed = nullptr) {
    auto templates = default_vocabulary(clip_seconds);
    std::set<std::string> names;
    for (auto& t : templates) {
        read_config(kv, "template." + t.name + ".", t, consumed);
        names.insert(t.name);
    }
    for (const auto& [key, _] : kv.entries()) {
        if (key.rfind("template.", 0) != 0) continue;
        const auto dot = key.find('.', 9);
        const std::string name = key.substr(9, dot == std::string::npos ? std::string::npos : dot - 9);
        if (!names.count(name)) throw ConfigError("unknown template '" + name + "' in " + key);
    }
    return templates;
}

inline std::string clip_filename(const std::string& split, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%05zu.wav", split.c_str(), index);
    return buf;
}

struct ClipRecord {
    std::string split;
    std::string filename;
    std::filesystem::path path;
    Supervision supervision = Supervision::none;
    EventList events;  // ground truth, also for weak/unlabeled clips (hidden)
    std::set<std::string> weak_labels;
};

struct Dataset {
    std::filesystem::path root;
    DatasetManifest manifest;
    std::vector<EventTemplate> templates;
    std::map<std::string, std::vector<ClipRecord>> splits;

    std::vector<std::string> vocabulary() const {
        std::vector<std::string> v;
        for (const auto& t : templates) v.push_back(t.name);
        return v;
    }

    const std::vector<ClipRecord>& split(const std::string& name) const {
        auto it = splits.find(name);
        if (it == splits.end()) throw InputError("dataset has no split '" + name + "'");
        return it->second;
    }
};

inline std::uint64_t clip_seed(std::uint64_t seed, const std::string& split, std::size_t index) {
    return derive_seed(seed, split, index);
}

struct BuildSummary {
    std::size_t clips = 0;
    std::size_t strong_rows = 0;
    std::size_t weak_rows = 0;
    std::size_t unlabeled_rows = 0;
};

/// Writes audio/<split>/*.wav and metadata/*.tsv under `root`, plus the
/// resolved manifest in dataset.cfg. Regeneration is byte-identical.
inline BuildSummary build_dataset(const DatasetManifest& m, const std::vector<EventTemplate>& templates,
                                  const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    validate_templates(templates, m.clip_options(false));
    std::error_code ec;
    fs::create_directories(root / "metadata" / "hidden", ec);
    if (ec) throw IoError("cannot create " + (root / "metadata").string() + ": " + ec.message());

    BuildSummary summary;
    for (const auto& info : kSplits) {
        const std::string split = info.name;
        const std::size_t n = m.size_of(split);
        fs::create_directories(root / "audio" / split, ec);
        if (ec) throw IoError("cannot create " + (root / "audio" / split).string() + ": " + ec.message());
        ClipEvents strong;
        std::map<std::string, std::set<std::string>> weak;
        std::vector<std::string> files;
        for (std::size_t i = 0; i < n; ++i) {
            const auto name = clip_filename(split, i);
            auto [wave, events] = generate_clip(templates, clip_seed(m.seed, split, i), m.clip_options(info.real_like));
            write_wav(root / "audio" / split / name, wave);
            weak[name] = label_set(events);
            strong[name] = std::move(events);
            files.push_back(name);
            ++summary.clips;
        }
        const auto meta = root / "metadata";
        switch (info.supervision) {
            case Supervision::strong:
                write_strong_tsv(meta / (split + ".tsv"), strong);
                for (const auto& [_, ev] : strong) summary.strong_rows += ev.size();
                break;
            case Supervision::weak:
                write_weak_tsv(meta / (split + ".tsv"), weak);
                write_strong_tsv(meta / "hidden" / (split + ".tsv"), strong);
                summary.weak_rows += weak.size();
                break;
            case Supervision::none:
                write_file_list(meta / (split + ".tsv"), files);
                write_strong_tsv(meta / "hidden" / (split + ".tsv"), strong);
                summary.unlabeled_rows += files.size();
                break;
        }
    }

    KeyValues kv;
    write_config(kv, "data.", m);
    for (const auto& t : templates) write_config(kv, "template." + t.name + ".", t);
    auto os = tsv_detail::open_out(root / "dataset.cfg");
    os << kv.to_text();
    return summary;
}

/// Reads a dataset written by build_dataset.
inline Dataset load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::exists(root / "dataset.cfg")) throw InputError("no dataset at " + root.string() + " (missing dataset.cfg)");
    Dataset ds;
    ds.root = root;
    const auto kv = KeyValues::load(root / "dataset.cfg");
    read_config(kv, "data.", ds.manifest);
    ds.templates = vocabulary_from(kv, ds.manifest.clip_seconds);
    const auto meta = root / "metadata";
    for (const auto& info : kSplits) {
        const std::string split = info.name;
        auto& clips = ds.splits[split];
        ClipEvents truth;
        std::map<std::string, std::set<std::string>> weak;
        std::vector<std::string> files;
        if (info.supervision == Supervision::strong) {
            truth = read_strong_tsv(meta / (split + ".tsv"));
        } else {
            truth = read_strong_tsv(meta / "hidden" / (split + ".tsv"));
            if (info.supervision == Supervision::weak) weak = read_weak_tsv(meta / (split + ".tsv"));
            else files = read_file_list(meta / (split + ".tsv"));
        }
        const std::size_t n = ds.manifest.size_of(split);
        for (std::size_t i = 0; i < n; ++i) {
            ClipRecord r;
            r.split = split;
            r.filename = clip_filename(split, i);
            r.path = root / "audio" / split / r.filename;
            r.supervision = info.supervision;
            if (auto it = truth.find(r.filename); it != truth.end()) r.events = it->second;
            r.weak_labels = info.supervision == Supervision::weak ? weak[r.filename] : label_set(r.events);
            if (!fs::exists(r.path)) throw InputError("missing audio file " + r.path.string());
            clips.push_back(std::move(r));
        }
    }
    return ds;
}

}  // namespace astsed
