#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "astsed/eval/band_analysis.hpp"
#include "astsed/eval/decode.hpp"
#include "astsed/eval/metrics.hpp"

namespace astsed {

struct EvalSettings {
    DecodeConfig decode;
    MatchConfig match;
    PsdsConfig psds;
    double short_boundary = 0.0;  // 0: a fifth of the clip length
};

struct EvalReport {
    std::vector<std::string> classes;
    EbF1Result eb;
    PsdsResult psds;
    ShortLongReport short_long;
    std::size_t clips = 0;
    double total_seconds = 0.0;
};

/// Estimates with score >= t, for every t in the sweep.
inline std::vector<ClipEvents> sweep_by_score(const ClipEvents& scored, const std::vector<double>& thresholds) {
    std::vector<ClipEvents> out;
    for (double t : thresholds) {
        ClipEvents kept;
        for (const auto& [f, events] : scored) {
            auto& dst = kept[f];
            for (const auto& e : events)
                if (e.score >= t) dst.push_back(e);
        }
        out.push_back(std::move(kept));
    }
    return out;
}

/// `estimates` are the operating-point detections for EB-F1 and the short
/// and long partitions; `sweep` holds one estimate set per PSDS threshold.
inline EvalReport evaluate(const ClipEvents& refs, const ClipEvents& estimates, const std::vector<ClipEvents>& sweep,
                           const std::vector<std::string>& classes, std::size_t clips, double clip_seconds,
                           const EvalSettings& s) {
    EvalReport r;
    r.classes = classes;
    r.clips = clips;
    r.total_seconds = static_cast<double>(clips) * clip_seconds;
    r.eb = eb_f1(refs, estimates, classes, s.match);
    r.psds = psds(sweep, refs, classes, r.total_seconds, s.psds);
    const double boundary = s.short_boundary > 0 ? s.short_boundary : 0.2 * clip_seconds;
    r.short_long = short_long_report(refs, estimates, classes, boundary, s.match);
    return r;
}

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

/// Long-format TSV: scope, metric, value.
inline void write_metrics_tsv(const std::filesystem::path& path, const EvalReport& r) {
    auto os = tsv_detail::open_out(path);
    os << "scope\tmetric\tvalue\n";
    auto row = [&](const std::string& scope, const std::string& metric, const std::string& v) {
        os << scope << '\t' << metric << '\t' << v << '\n';
    };
    row("all", "eb_precision", fmt6(r.eb.precision()));
    row("all", "eb_recall", fmt6(r.eb.recall()));
    row("all", "eb_f1", fmt6(r.eb.f1()));
    row("all", "eb_macro_f1", fmt6(r.eb.macro_f1()));
    row("all", "psds1", fmt6(r.psds.score));
    row("all", "median_onset_error", r.eb.onset_errors.empty() ? "NA" : fmt6(median(r.eb.onset_errors)));
    for (const auto& c : r.classes) {
        const auto& cc = r.eb.per_class.at(c);
        row(c, "tp", std::to_string(cc.tp));
        row(c, "fp", std::to_string(cc.fp));
        row(c, "fn", std::to_string(cc.fn));
        row(c, "eb_f1", fmt6(cc.f1()));
    }
    auto part = [&](const std::string& name, const PartitionScore& p) {
        row(name, "eb_f1", p.result ? fmt6(p.result->f1()) : "NA");
        row(name, "eb_macro_f1", p.result ? fmt6(p.result->macro_f1()) : "NA");
        row(name, "classes", std::to_string(p.classes.size()));
    };
    part("short", r.short_long.short_events);
    part("long", r.short_long.long_events);
}

inline void write_short_long_tsv(const std::filesystem::path& path, const ShortLongReport& r) {
    auto os = tsv_detail::open_out(path);
    os << "partition\tclasses\teb_f1\teb_macro_f1\n";
    auto line = [&](const std::string& name, const PartitionScore& p) {
        std::string names;
        for (const auto& c : p.classes) names += (names.empty() ? "" : ",") + c;
        os << name << '\t' << (names.empty() ? "-" : names) << '\t' << (p.result ? fmt6(p.result->f1()) : "NA") << '\t'
           << (p.result ? fmt6(p.result->macro_f1()) : "NA") << '\n';
    };
    line("short", r.short_events);
    line("long", r.long_events);
    std::string all;
    for (const auto& [c, _] : r.class_mean_duration) all += (all.empty() ? "" : ",") + c;
    os << "all\t" << (all.empty() ? "-" : all) << '\t' << fmt6(r.all.f1()) << '\t' << fmt6(r.all.macro_f1()) << '\n';
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["clips"] = r.clips;
    j["eb_f1"] = r.eb.f1();
    j["eb_precision"] = r.eb.precision();
    j["eb_recall"] = r.eb.recall();
    j["eb_macro_f1"] = r.eb.macro_f1();
    j["psds1"] = r.psds.score;
    if (!r.eb.onset_errors.empty()) j["median_onset_error"] = median(r.eb.onset_errors);
    else j["median_onset_error"] = nullptr;
    auto& pc = j["per_class"];
    pc = nlohmann::ordered_json::object();
    for (const auto& c : r.classes) {
        const auto& cc = r.eb.per_class.at(c);
        pc[c] = {{"tp", cc.tp}, {"fp", cc.fp}, {"fn", cc.fn}, {"f1", cc.f1()}};
    }
    auto part = [](const PartitionScore& p) {
        nlohmann::ordered_json o;
        o["classes"] = p.classes;
        if (p.result) o["eb_f1"] = p.result->f1();
        else o["eb_f1"] = nullptr;
        return o;
    };
    j["short"] = part(r.short_long.short_events);
    j["long"] = part(r.short_long.long_events);
    j["short_boundary"] = r.short_long.boundary;
    return j;
}

/// Band histogram as CSV: one row per class, one column per frequency row.
inline void write_band_csv(const std::filesystem::path& path, const BandHistogram& h) {
    auto os = tsv_detail::open_out(path);
    os << "class";
    for (std::size_t f = 0; f < h.rows; ++f) os << ",row" << f;
    os << '\n';
    for (std::size_t k = 0; k < h.classes.size(); ++k) {
        os << h.classes[k];
        for (double v : h.normalized[k]) os << ',' << fmt6(v);
        os << '\n';
    }
}

}  // namespace astsed
