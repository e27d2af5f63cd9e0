#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "astsed/app/run_config.hpp"
#include "astsed/tensor/grad_check.hpp"
#include "astsed/tensor/grad_suite.hpp"

namespace astsed {

namespace fs = std::filesystem;

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    auto os = tsv_detail::open_out(path);
    os << j.dump(2) << '\n';
}

inline std::string json_number(double v) { return fmt6(v); }

// ---------------------------------------------------------------------------
// gen-data

inline BuildSummary gen_data(const RunConfig& rc, const fs::path& out) {
    auto s = build_dataset(rc.data, rc.templates, out);
    if (rc.run.verbose)
        std::cerr << "wrote " << s.clips << " clips (" << s.strong_rows << " strong events) to " << out << '\n';
    return s;
}

// ---------------------------------------------------------------------------
// Shared loading

struct LoadedData {
    Dataset ds;
    TrainingData td;
    std::vector<EvalClip> val;
    ClipEvents val_refs;
};

inline Dataset open_dataset(const RunConfig& rc) {
    auto ds = load_dataset(rc.run.dataset);
    rc.require_model_matches_data(ds.manifest, ds.templates.size());
    return ds;
}

inline LoadedData load_for_training(const RunConfig& rc, const ModelConfig& model) {
    LoadedData d{open_dataset(rc), {}, {}, {}};
    d.td = load_training_data(d.ds, model);
    d.val = load_split_features(d.ds, rc.run.val_split, model);
    d.val_refs = split_truth(d.ds, rc.run.val_split);
    return d;
}

// ---------------------------------------------------------------------------
// pretrain

inline void write_pretrain_log(const fs::path& path, const PretrainResult& r) {
    auto os = tsv_detail::open_out(path);
    os << "epoch\tloss\n";
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.8f", r.epoch_loss[e]);
        os << e + 1 << '\t' << buf << '\n';
    }
}

inline PretrainResult run_pretrain(const RunConfig& rc, const Dataset& ds, const TrainingData& td,
                                   const fs::path& out) {
    const auto held = labelled_examples(ds, rc.run.val_split, rc.model);
    auto r = pretrain_at(td, held, rc.model, rc.pretrain);
    fs::create_directories(out);
    save_checkpoint(out / "backbone.ckpt", rc.model, r.params, ParamSet::tagging);
    write_pretrain_log(out / "pretrain.tsv", r);
    nlohmann::ordered_json j;
    j["epochs"] = r.epoch_loss.size();
    j["final_loss"] = r.epoch_loss.back();
    j["heldout_macro_f1"] = r.heldout_macro_f1;
    write_json(out / "pretrain_summary.json", j);
    if (rc.run.verbose) std::cerr << "pretraining held-out clip macro F1 " << r.heldout_macro_f1 << '\n';
    return r;
}

inline PretrainResult pretrain_command(const RunConfig& rc) {
    const fs::path out = rc.run.out;
    write_resolved_config(out, rc);
    auto ds = open_dataset(rc);
    const auto td = load_training_data(ds, rc.model);
    return run_pretrain(rc, ds, td, out);
}

/// Backbone leaves from a pretraining checkpoint, checked against the
/// model's backbone geometry.
inline ParamTree<double> load_backbone_checkpoint(const fs::path& path, const ModelConfig& model) {
    auto ck = load_checkpoint<double>(path);
    if (ck.set != ParamSet::tagging) throw StructuralError(path.string() + " is not a pretraining checkpoint");
    for (const char* key : {"mel_bins", "input_frames", "patch_height", "patch_width", "stride_freq", "stride_time",
                            "embed_dim", "pte_depth", "pte_heads", "mlp_ratio"}) {
        const auto a = model_config_record(ck.config).get(std::string("model.") + key);
        const auto b = model_config_record(model).get(std::string("model.") + key);
        if (a != b)
            throw StructuralError("backbone mismatch: model." + std::string(key) + " is " + a.value_or("?") +
                                  " in " + path.string() + " but " + b.value_or("?") + " in configuration");
    }
    return std::move(ck.params);
}

// ---------------------------------------------------------------------------
// train

inline TrainOptions train_options(const RunConfig& rc, const fs::path& out) {
    TrainOptions opt;
    opt.schedule = rc.train;
    opt.batch = rc.batch;
    opt.augment = rc.augment;
    opt.eval = rc.eval;
    opt.seed = rc.run.seed;
    opt.output_dir = out;
    opt.quiet = !rc.run.verbose;
    return opt;
}

inline nlohmann::ordered_json train_summary(const TrainResult& r) {
    nlohmann::ordered_json j;
    j["epochs"] = r.epochs.size();
    j["iterations"] = r.iterations.size();
    j["iterations_per_epoch"] = r.iterations_per_epoch;
    j["max_recombination_error"] = r.max_recombination_error;
    j["teacher_received_gradients"] = r.teacher_received_gradients;
    if (!r.epochs.empty()) {
        const auto& last = r.epochs.back();
        j["val_eb_f1"] = std::isnan(last.val_eb_f1) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(last.val_eb_f1);
        j["val_psds1"] = std::isnan(last.val_psds1) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(last.val_psds1);
    }
    return j;
}

inline TrainResult run_train(const RunConfig& rc, const ModelConfig& model, const LoadedData& d,
                             const ParamTree<double>* backbone, const fs::path& out) {
    std::optional<ParamTree<double>> init;
    if (backbone) init = sed_init_from_backbone(model, rc.run.seed, *backbone);
    auto r = train(d.td, d.val, d.val_refs, model, train_options(rc, out), init ? &*init : nullptr);
    write_json(out / "train_summary.json", train_summary(r));
    return r;
}

inline TrainResult train_command(const RunConfig& rc) {
    const fs::path out = rc.run.out;
    write_resolved_config(out, rc);
    const auto d = load_for_training(rc, rc.model);
    std::optional<ParamTree<double>> backbone;
    if (!rc.run.backbone.empty()) backbone = load_backbone_checkpoint(rc.run.backbone, rc.model);
    return run_train(rc, rc.model, d, backbone ? &*backbone : nullptr, out);
}

// ---------------------------------------------------------------------------
// eval

/// Operating-point events with a score: the mean frame posterior over the
/// event's extent.
inline ClipEvents scored_events(const FrameProbs& probs, const std::vector<std::string>& classes, double spf,
                                const DecodeConfig& dc) {
    ClipEvents out;
    for (const auto& [f, p] : probs) {
        auto events = decode_events(p, classes, spf, dc);
        for (auto& e : events) {
            const auto k = static_cast<std::size_t>(std::find(classes.begin(), classes.end(), e.label) - classes.begin());
            const auto first = static_cast<std::size_t>(std::lround(e.onset / spf));
            const auto last = static_cast<std::size_t>(std::lround(e.offset / spf));
            double s = 0;
            for (std::size_t t = first; t < last; ++t) s += p.at(t, k);
            e.score = last > first ? s / static_cast<double>(last - first) : 0.0;
        }
        out[f] = std::move(events);
    }
    return out;
}

inline void write_eval_outputs(const fs::path& out, const EvalReport& r) {
    fs::create_directories(out);
    write_metrics_tsv(out / "metrics.tsv", r);
    write_short_long_tsv(out / "short_long.tsv", r.short_long);
    write_json(out / "summary.json", to_json(r));
}

inline EvalReport evaluate_params(const RunConfig& rc, const ModelConfig& model, const ParamTree<double>& params,
                                  const Dataset& ds, const std::vector<EvalClip>& clips, const fs::path& out) {
    const auto classes = ds.vocabulary();
    const auto refs = split_truth(ds, rc.run.eval_split);
    const auto probs = predict_frames(model, params, clips);
    auto report = evaluate_posteriors(probs, refs, model, classes, rc.eval);
    if (!out.empty()) {
        write_eval_outputs(out, report);
        write_strong_tsv(out / "predictions.tsv", scored_events(probs, classes, model.seconds_per_step(), rc.eval.decode),
                         true);
    }
    return report;
}

inline EvalReport eval_checkpoint_command(const RunConfig& rc, const fs::path& checkpoint) {
    const fs::path out = rc.run.out;
    write_resolved_config(out, rc);
    auto ds = open_dataset(rc);
    const auto params = load_model_params<double>(checkpoint, rc.model);
    const auto clips = load_split_features(ds, rc.run.eval_split, rc.model);
    return evaluate_params(rc, rc.model, params, ds, clips, out);
}

/// Scores a prediction TSV (with a score column) against reference events.
/// `refs_tsv` overrides the dataset split; clip count is then taken from
/// the union of files named in either table.
inline EvalReport eval_predictions_command(const RunConfig& rc, const fs::path& predictions,
                                           const std::optional<fs::path>& refs_tsv) {
    const fs::path out = rc.run.out;
    write_resolved_config(out, rc);
    const auto scored = read_strong_tsv(predictions);
    ClipEvents refs;
    std::vector<std::string> classes;
    std::size_t clips = 0;
    double clip_seconds = rc.data.clip_seconds;
    if (refs_tsv) {
        refs = read_strong_tsv(*refs_tsv);
        std::set<std::string> files, labels;
        for (const auto& [f, ev] : refs) {
            files.insert(f);
            for (const auto& e : ev) labels.insert(e.label);
        }
        for (const auto& [f, _] : scored) files.insert(f);
        clips = files.size();
        for (const auto& t : rc.templates) labels.insert(t.name);
        classes.assign(labels.begin(), labels.end());
    } else {
        auto ds = load_dataset(rc.run.dataset);
        refs = split_truth(ds, rc.run.eval_split);
        classes = ds.vocabulary();
        clips = ds.split(rc.run.eval_split).size();
        clip_seconds = ds.manifest.clip_seconds;
    }
    const auto sweep = sweep_by_score(scored, default_thresholds(rc.eval.psds.thresholds));
    ClipEvents operating;
    for (const auto& [f, ev] : scored) {
        auto& dst = operating[f];
        for (const auto& e : ev)
            if (e.score >= rc.eval.decode.threshold) dst.push_back(e);
    }
    auto report = evaluate(refs, operating, sweep, classes, clips, clip_seconds, rc.eval);
    write_eval_outputs(out, report);
    return report;
}

// ---------------------------------------------------------------------------
// analyze-bands

inline BandHistogram analyze_bands_command(const RunConfig& rc, const fs::path& checkpoint) {
    const fs::path out = rc.run.out;
    write_resolved_config(out, rc);
    auto ds = open_dataset(rc);
    const auto ck = load_checkpoint<double>(checkpoint);
    if (ck.set != ParamSet::sed) throw StructuralError(checkpoint.string() + " is not an SED checkpoint");
    require_same_model(ck.config, rc.model);
    const auto clips = load_split_features(ds, rc.run.eval_split, rc.model);
    auto h = band_activation_analysis(rc.model, ck.params, clips, split_truth(ds, rc.run.eval_split), ds.vocabulary(),
                                      rc.eval.decode, rc.eval.match);
    write_band_csv(out / "bands.csv", h);
    return h;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
    std::string name;
    EncoderKind encoder;
    std::size_t ur;
    std::optional<EvalReport> report;
    std::string error;
};

inline std::vector<AblationRow> ablation_rows(const RunConfig& rc) {
    const std::size_t lgd = rc.model.upsample_ratio;
    std::vector<AblationRow> rows{
        {"baseline", EncoderKind::mean_pool, 1, {}, {}},
        {"+fte", EncoderKind::fte, 1, {}, {}},
        {"+lgd", EncoderKind::mean_pool, lgd, {}, {}},
        {"fte+lgd", EncoderKind::fte, lgd, {}, {}},
    };
    for (auto u : rc.ablate.ur_list) rows.push_back({"ur=" + std::to_string(u), EncoderKind::fte, u, {}, {}});
    return rows;
}

inline void write_ablation_tsv(const fs::path& path, const std::vector<AblationRow>& rows) {
    auto os = tsv_detail::open_out(path);
    os << "row\tencoder\tur\teb_f1\tpsds1\tmedian_onset_error\tstatus\n";
    for (const auto& r : rows) {
        os << r.name << '\t' << to_string(r.encoder) << '\t' << r.ur << '\t';
        if (r.report) {
            const auto& e = r.report->eb;
            os << fmt6(e.f1()) << '\t' << fmt6(r.report->psds.score) << '\t'
               << (e.onset_errors.empty() ? "NA" : fmt6(median(e.onset_errors))) << "\tok\n";
        } else {
            std::string msg = r.error;
            std::replace(msg.begin(), msg.end(), '\t', ' ');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            os << "NA\tNA\tNA\tfailed: " << msg << '\n';
        }
    }
}

/// Trains and scores each component combination and UR setting once per
/// distinct (encoder, UR), sharing data, seed and (optionally) one
/// pretrained backbone.
inline std::vector<AblationRow> ablate_command(const RunConfig& rc) {
    const fs::path out = rc.run.out;
    write_resolved_config(out, rc);
    auto d = load_for_training(rc, rc.model);
    const auto test = load_split_features(d.ds, rc.run.eval_split, rc.model);

    std::optional<ParamTree<double>> backbone;
    if (!rc.run.backbone.empty()) backbone = load_backbone_checkpoint(rc.run.backbone, rc.model);
    else if (rc.ablate.pretrain) backbone = run_pretrain(rc, d.ds, d.td, out / "pretrain").params;

    auto rows = ablation_rows(rc);
    std::map<std::pair<EncoderKind, std::size_t>, std::pair<std::optional<EvalReport>, std::string>> cache;
    for (auto& row : rows) {
        const auto key = std::make_pair(row.encoder, row.ur);
        if (!cache.count(key)) {
            ModelConfig m = rc.model;
            m.encoder = row.encoder;
            m.upsample_ratio = row.ur;
            const fs::path dir = out / "runs" / (std::string(to_string(row.encoder)) + "_ur" + std::to_string(row.ur));
            try {
                const auto r = run_train(rc, m, d, backbone ? &*backbone : nullptr, dir);
                cache[key] = {evaluate_params(rc, m, r.student, d.ds, test, dir / "eval"), {}};
            } catch (const std::exception& e) {
                cache[key] = {std::nullopt, e.what()};
            }
            if (rc.run.verbose) std::cerr << "ablation " << dir.filename().string() << " done\n";
        }
        row.report = cache[key].first;
        row.error = cache[key].second;
    }
    write_ablation_tsv(out / "ablation.tsv", rows);
    return rows;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOutcome {
    std::vector<SuiteResult> primitives;
    GradCheckReport model;
    bool ok = true;
};

/// Primitive suite (tolerance 1e-4) and the mean-teacher batch loss of a
/// toy model (tolerance 5e-3).
inline GradcheckOutcome gradcheck_command(std::uint64_t seed, std::ostream& log) {
    GradcheckOutcome g;
    g.primitives = primitive_grad_suite(seed);
    for (const auto& r : g.primitives) {
        const bool pass = r.max_rel_error <= 1e-4;
        g.ok = g.ok && pass;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-22s %.3e %s\n", r.name.c_str(), r.max_rel_error, pass ? "ok" : "FAIL");
        log << buf;
    }

    ModelConfig cfg;
    cfg.mel_bins = 26;
    cfg.input_frames = 98;
    cfg.clip_seconds = 1.0;
    cfg.embed_dim = 8;
    cfg.pte_depth = 1;
    cfg.pte_heads = 2;
    cfg.fte_depth = 1;
    cfg.fte_heads = 2;
    cfg.mlp_ratio = 2;
    cfg.num_classes = 3;
    cfg.upsample_ratio = 2;
    auto rng = make_rng(seed, "gradcheck");
    std::vector<TrainExample> batch;
    for (std::size_t g2 = 0; g2 < 3; ++g2) {
        TrainExample ex;
        ex.filename = "clip" + std::to_string(g2);
        ex.features = NdArray<double>(Shape{cfg.mel_bins, cfg.input_frames});
        for (auto& v : ex.features.values()) v = 0.5 * normal01(rng);
        ex.frame_labels = NdArray<double>(Shape{cfg.input_frames, cfg.num_classes});
        for (auto& v : ex.frame_labels.values()) v = uniform01(rng) < 0.3 ? 1.0 : 0.0;
        ex.clip_labels = NdArray<double>(Shape{cfg.num_classes});
        for (auto& v : ex.clip_labels.values()) v = uniform01(rng) < 0.5 ? 1.0 : 0.0;
        ex.group = g2;
        ex.has_clip_labels = g2 < 2;
        ex.has_frame_labels = g2 == 0;
        batch.push_back(std::move(ex));
    }
    const auto student = init_params<double>(cfg, derive_seed(seed, "student"));
    const auto teacher = init_params<double>(cfg, derive_seed(seed, "teacher"));
    const FrontendConfig fe;
    const ParamBinding<double> tp(teacher, false);
    std::vector<Predictions<double>> t_pred;
    for (const auto& ex : batch) t_pred.push_back(forward(Spectrogram{ex.features, fe.hop_seconds}, cfg, tp));
    auto fn = [&](const ParamBinding<double>& p) {
        std::vector<Predictions<double>> s_pred;
        for (const auto& ex : batch) s_pred.push_back(forward(Spectrogram{ex.features, fe.hop_seconds}, cfg, p));
        return total_loss(s_pred, t_pred, batch, cfg.clip_seconds, fe, 0.5).total;
    };
    g.model = grad_check<double>(fn, student, 1e-5, 10, derive_seed(seed, "coords"));
    const bool pass = g.model.max_rel_error <= 5e-3;
    g.ok = g.ok && pass;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-22s %.3e %s (10 coordinates, worst %s[%zu])\n", "model_total_loss",
                  g.model.max_rel_error, pass ? "ok" : "FAIL", g.model.worst_path.c_str(), g.model.worst_index);
    log << buf;
    return g;
}

}  // namespace astsed
