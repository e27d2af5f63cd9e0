#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "astsed/eval/report.hpp"
#include "astsed/train/mean_teacher.hpp"

namespace astsed {

struct RunSettings {
    std::uint64_t seed = 1;
    std::string dataset = "data";
    std::string out = "out";
    std::string backbone;  // tagging checkpoint to initialize the backbone from
    std::string eval_split = "test";
    std::string val_split = "validation";
    std::size_t threads = 1;
    bool verbose = false;

    template <typename V>
    void visit(V& v) {
        v("seed", seed);
        v("dataset", dataset);
        v("out", out);
        v("backbone", backbone);
        v("eval_split", eval_split);
        v("val_split", val_split);
        v("threads", threads);
        v("verbose", verbose);
    }
};

struct AblationSettings {
    std::vector<std::size_t> ur_list{1, 2, 5, 10};
    bool pretrain = true;

    template <typename V>
    void visit(V& v) {
        v("ur_list", ur_list);
        v("pretrain", pretrain);
    }
};

/// Every setting a subcommand may need, resolved from defaults, a config
/// file, ASTSED_* environment variables and command-line overrides.
struct RunConfig {
    RunSettings run;
    DatasetManifest data;
    std::vector<EventTemplate> templates = default_vocabulary(data.clip_seconds);
    ModelConfig model;
    TrainSchedule train;
    BatchSpec batch;
    AugmentConfig augment;
    EvalSettings eval;
    PretrainOptions pretrain;
    AblationSettings ablate;

    KeyValues to_kv() const {
        KeyValues kv;
        write_config(kv, "run.", run);
        write_config(kv, "data.", data);
        for (const auto& t : templates) write_config(kv, "template." + t.name + ".", t);
        write_config(kv, "model.", model);
        write_config(kv, "train.", train);
        write_config(kv, "batch.", batch);
        write_config(kv, "augment.", augment);
        write_config(kv, "decode.", eval.decode);
        write_config(kv, "match.", eval.match);
        write_config(kv, "psds.", eval.psds);
        kv.set("eval.short_boundary", format_double(eval.short_boundary));
        write_config(kv, "pretrain.", pretrain);
        write_config(kv, "ablate.", ablate);
        return kv;
    }

    /// Unknown keys are configuration errors.
    static RunConfig from_kv(const KeyValues& kv) {
        RunConfig rc;
        std::set<std::string> used;
        read_config(kv, "run.", rc.run, &used);
        read_config(kv, "data.", rc.data, &used);
        rc.templates = vocabulary_from(kv, rc.data.clip_seconds, &used);
        read_config(kv, "model.", rc.model, &used);
        read_config(kv, "train.", rc.train, &used);
        read_config(kv, "batch.", rc.batch, &used);
        read_config(kv, "augment.", rc.augment, &used);
        read_config(kv, "decode.", rc.eval.decode, &used);
        read_config(kv, "match.", rc.eval.match, &used);
        read_config(kv, "psds.", rc.eval.psds, &used);
        if (auto v = kv.get("eval.short_boundary")) {
            KvReader::parse("eval.short_boundary", *v, rc.eval.short_boundary);
            used.insert("eval.short_boundary");
        }
        read_config(kv, "pretrain.", rc.pretrain, &used);
        read_config(kv, "ablate.", rc.ablate, &used);
        for (const auto& [key, _] : kv.entries())
            if (!used.count(key)) throw ConfigError("unknown config key '" + key + "'");
        rc.pretrain.seed = rc.run.seed;
        return rc;
    }

    void validate() const {
        model.validate();
        train.validate();
        batch.validate();
        augment.validate();
        eval.decode.validate(model.num_classes);
        eval.match.validate();
        eval.psds.validate();
        pretrain.validate();
        validate_templates(templates, data.clip_options(false));
        if (eval.short_boundary < 0) throw ConfigError("eval.short_boundary must be non-negative");
        if (run.threads == 0) throw ConfigError("run.threads must be at least 1");
        for (auto u : ablate.ur_list)
            if (u == 0) throw ConfigError("ablate.ur_list entries must be at least 1");
    }

    /// Model geometry must agree with the data it reads.
    void require_model_matches_data(const DatasetManifest& m, std::size_t classes) const {
        FrontendConfig fe = frontend_for(model);
        const auto samples = static_cast<std::size_t>(std::lround(m.clip_seconds * m.sample_rate));
        const std::size_t frames =
            frame_count(samples, window_samples(fe, m.sample_rate), hop_samples(fe, m.sample_rate));
        if (model.input_frames != frames)
            throw ConfigError("model.input_frames is " + std::to_string(model.input_frames) + " but " +
                              format_double(m.clip_seconds) + " s clips give " + std::to_string(frames) + " frames");
        if (model.clip_seconds != m.clip_seconds)
            throw ConfigError("model.clip_seconds is " + format_double(model.clip_seconds) + " but the data has " +
                              format_double(m.clip_seconds) + " s clips");
        if (model.num_classes != classes)
            throw ConfigError("model.num_classes is " + std::to_string(model.num_classes) + " but the vocabulary has " +
                              std::to_string(classes) + " classes");
    }
};

inline std::string env_name(const std::string& key) {
    std::string out = "ASTSED_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

/// Layers: defaults < config file < environment < overrides. Environment
/// variables are looked up for every key that exists after the file layer
/// (defaults included), as ASTSED_<KEY> with dots turned into underscores.
inline RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const KeyValues& overrides,
                                const EnvLookup& env = process_env) {
    KeyValues layered;
    if (file) layered = KeyValues::load(*file);
    // template keys depend on the clip length, so resolve it first
    auto known = RunConfig{}.to_kv();
    known.merge(layered);
    KeyValues env_layer;
    for (const auto& [key, _] : known.entries())
        if (auto v = env(env_name(key))) env_layer.set(key, *v);
    layered.merge(env_layer);
    layered.merge(overrides);
    auto rc = RunConfig::from_kv(layered);
    rc.validate();
    return rc;
}

inline void write_resolved_config(const std::filesystem::path& dir, const RunConfig& rc) {
    std::filesystem::create_directories(dir);
    auto os = tsv_detail::open_out(dir / "resolved.cfg");
    os << rc.to_kv().to_text();
}

}  // namespace astsed
