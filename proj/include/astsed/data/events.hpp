#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "astsed/tensor/errors.hpp"

namespace astsed {

struct Event {
    std::string label;
    double onset = 0.0;
    double offset = 0.0;
    double score = 1.0;  // only meaningful for predictions

    double duration() const { return offset - onset; }
    friend bool operator==(const Event& a, const Event& b) {
        return a.label == b.label && a.onset == b.onset && a.offset == b.offset;
    }
};

using EventList = std::vector<Event>;

/// Events per clip, keyed by filename.
using ClipEvents = std::map<std::string, EventList>;

inline void sort_events(EventList& events) {
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.onset != b.onset) return a.onset < b.onset;
        if (a.offset != b.offset) return a.offset < b.offset;
        return a.label < b.label;
    });
}

inline std::set<std::string> label_set(const EventList& events) {
    std::set<std::string> s;
    for (const auto& e : events) s.insert(e.label);
    return s;
}

inline double round_ms(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

inline std::string format_seconds(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", s);
    return buf;
}

namespace tsv_detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, '\t')) out.push_back(cell);
    if (!line.empty() && line.back() == '\t') out.emplace_back();
    return out;
}

inline double parse_number(const std::string& s, const std::filesystem::path& path, int lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": invalid number '" + s + "'");
    }
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    return is;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace tsv_detail

/// Strong labels: `filename onset offset event_label [score]`, tab separated,
/// header row. Clips without events get one row with empty fields.
inline void write_strong_tsv(const std::filesystem::path& path, const ClipEvents& clips, bool with_score = false) {
    auto os = tsv_detail::open_out(path);
    os << "filename\tonset\toffset\tevent_label" << (with_score ? "\tscore" : "") << '\n';
    for (const auto& [file, events] : clips) {
        if (events.empty()) os << file << "\t\t\t" << (with_score ? "\t" : "") << '\n';
        for (const auto& e : events) {
            os << file << '\t' << format_seconds(e.onset) << '\t' << format_seconds(e.offset) << '\t' << e.label;
            if (with_score) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", e.score);
                os << '\t' << buf;
            }
            os << '\n';
        }
    }
    if (!os) throw IoError("failed writing " + path.string());
}

/// Reads strong labels or predictions. A missing score column means score 1.
/// Filenames with only an empty row are kept with no events.
inline ClipEvents read_strong_tsv(const std::filesystem::path& path) {
    auto is = tsv_detail::open_in(path);
    ClipEvents clips;
    std::string line;
    int lineno = 0;
    int score_col = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = tsv_detail::split_tabs(line);
        if (lineno == 1 && !cells.empty() && cells[0] == "filename") {
            if (cells.size() < 4 || cells[1] != "onset" || cells[2] != "offset" || cells[3] != "event_label")
                throw InputError(path.string() + ": unexpected header");
            for (std::size_t i = 4; i < cells.size(); ++i)
                if (cells[i] == "score") score_col = static_cast<int>(i);
            continue;
        }
        if (cells.empty()) continue;
        auto& list = clips[cells[0]];
        if (cells.size() < 4 || cells[1].empty()) continue;
        Event e;
        e.onset = tsv_detail::parse_number(cells[1], path, lineno);
        e.offset = tsv_detail::parse_number(cells[2], path, lineno);
        e.label = cells[3];
        if (score_col >= 0 && static_cast<std::size_t>(score_col) < cells.size() && !cells[score_col].empty())
            e.score = tsv_detail::parse_number(cells[score_col], path, lineno);
        if (!(e.offset > e.onset) || e.onset < 0)
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": offset must exceed onset >= 0");
        if (e.label.empty()) throw InputError(path.string() + ":" + std::to_string(lineno) + ": empty event label");
        list.push_back(std::move(e));
    }
    for (auto& [_, events] : clips) sort_events(events);
    return clips;
}

/// Weak labels: `filename event_labels` with comma-joined sorted classes.
inline void write_weak_tsv(const std::filesystem::path& path, const std::map<std::string, std::set<std::string>>& clips) {
    auto os = tsv_detail::open_out(path);
    os << "filename\tevent_labels\n";
    for (const auto& [file, labels] : clips) {
        os << file << '\t';
        bool first = true;
        for (const auto& l : labels) {
            os << (first ? "" : ",") << l;
            first = false;
        }
        os << '\n';
    }
    if (!os) throw IoError("failed writing " + path.string());
}

inline std::map<std::string, std::set<std::string>> read_weak_tsv(const std::filesystem::path& path) {
    auto is = tsv_detail::open_in(path);
    std::map<std::string, std::set<std::string>> clips;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (lineno == 1 && line.rfind("filename", 0) == 0)) continue;
        auto cells = tsv_detail::split_tabs(line);
        auto& labels = clips[cells[0]];
        if (cells.size() < 2) continue;
        std::stringstream ss(cells[1]);
        std::string l;
        while (std::getline(ss, l, ','))
            if (!l.empty()) labels.insert(l);
    }
    return clips;
}

/// One filename per line with a `filename` header.
inline void write_file_list(const std::filesystem::path& path, const std::vector<std::string>& files) {
    auto os = tsv_detail::open_out(path);
    os << "filename\n";
    for (const auto& f : files) os << f << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

inline std::vector<std::string> read_file_list(const std::filesystem::path& path) {
    auto is = tsv_detail::open_in(path);
    std::vector<std::string> files;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first && line == "filename") {
            first = false;
            continue;
        }
        first = false;
        if (!line.empty()) files.push_back(line);
    }
    return files;
}

}  // namespace astsed
