#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "astsed/data/events.hpp"

namespace astsed {

// ---------------------------------------------------------------------------
// Event-based F1

struct MatchConfig {
    double onset_collar = 0.2;
    double offset_collar = 0.2;
    double offset_collar_rate = 0.2;  // of the reference duration

    template <typename V>
    void visit(V& v) {
        v("onset_collar", onset_collar);
        v("offset_collar", offset_collar);
        v("offset_collar_rate", offset_collar_rate);
    }

    void validate() const {
        if (!(onset_collar > 0) || !(offset_collar > 0) || offset_collar_rate < 0)
            throw ConfigError("match: collars must be positive");
    }

    bool matches(const Event& ref, const Event& est) const {
        const double off = std::max(offset_collar, offset_collar_rate * ref.duration());
        // a hair of slack so collars exactly at the boundary survive rounding
        constexpr double slack = 1e-9;
        return std::abs(ref.onset - est.onset) <= onset_collar + slack &&
               std::abs(ref.offset - est.offset) <= off + slack;
    }
};

/// Maximum bipartite matching (augmenting paths). adj[i] lists the right
/// vertices left vertex i may take. Returns match_of_left (-1 if unmatched).
inline std::vector<int> max_bipartite_matching(const std::vector<std::vector<int>>& adj, std::size_t right) {
    std::vector<int> left_of(right, -1), right_of(adj.size(), -1);
    std::vector<char> seen;
    std::function<bool(int)> augment = [&](int u) {
        for (int v : adj[u]) {
            if (seen[v]) continue;
            seen[v] = 1;
            if (left_of[v] < 0 || augment(left_of[v])) {
                left_of[v] = u;
                right_of[u] = v;
                return true;
            }
        }
        return false;
    };
    for (std::size_t u = 0; u < adj.size(); ++u) {
        seen.assign(right, 0);
        augment(static_cast<int>(u));
    }
    return right_of;
}

struct ClassCounts {
    std::size_t tp = 0, fp = 0, fn = 0;

    double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
    double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
    double f1() const {
        const std::size_t d = 2 * tp + fp + fn;
        return d ? 2.0 * static_cast<double>(tp) / static_cast<double>(d) : 0.0;
    }
    std::size_t references() const { return tp + fn; }
};

struct EbF1Result {
    ClassCounts overall;                       // micro counts
    std::map<std::string, ClassCounts> per_class;
    std::vector<double> onset_errors;          // |onset difference| of matched pairs
    std::size_t unknown_estimates = 0;

    double precision() const { return overall.precision(); }
    double recall() const { return overall.recall(); }
    double f1() const { return overall.f1(); }

    /// Mean class F1 over classes that have reference events.
    double macro_f1() const {
        double s = 0;
        std::size_t n = 0;
        for (const auto& [_, c] : per_class)
            if (c.references()) {
                s += c.f1();
                ++n;
            }
        return n ? s / static_cast<double>(n) : 0.0;
    }
};

/// Event-based P/R/F1. Within every (clip, class), estimates are matched
/// one-to-one to references by maximum cardinality matching under the
/// onset/offset collars. Estimates of classes outside `classes` are false
/// positives.
inline EbF1Result eb_f1(const ClipEvents& refs, const ClipEvents& ests, const std::vector<std::string>& classes,
                        const MatchConfig& mc = {}) {
    EbF1Result res;
    const std::set<std::string> known(classes.begin(), classes.end());
    for (const auto& c : classes) res.per_class[c];
    std::set<std::string> clips;
    for (const auto& [f, _] : refs) clips.insert(f);
    for (const auto& [f, _] : ests) clips.insert(f);
    static const EventList none;
    for (const auto& clip : clips) {
        const auto rit = refs.find(clip);
        const auto eit = ests.find(clip);
        const EventList& r = rit == refs.end() ? none : rit->second;
        const EventList& e = eit == ests.end() ? none : eit->second;
        for (const auto& ev : e) {
            if (!known.count(ev.label)) {
                ++res.unknown_estimates;
                ++res.overall.fp;
            }
        }
        for (const auto& c : classes) {
            std::vector<const Event*> rc, ec;
            for (const auto& ev : r)
                if (ev.label == c) rc.push_back(&ev);
            for (const auto& ev : e)
                if (ev.label == c) ec.push_back(&ev);
            std::vector<std::vector<int>> adj(rc.size());
            for (std::size_t i = 0; i < rc.size(); ++i)
                for (std::size_t j = 0; j < ec.size(); ++j)
                    if (mc.matches(*rc[i], *ec[j])) adj[i].push_back(static_cast<int>(j));
            const auto match = max_bipartite_matching(adj, ec.size());
            std::size_t tp = 0;
            for (std::size_t i = 0; i < rc.size(); ++i) {
                if (match[i] < 0) continue;
                ++tp;
                res.onset_errors.push_back(std::abs(rc[i]->onset - ec[match[i]]->onset));
            }
            auto& cc = res.per_class[c];
            cc.tp += tp;
            cc.fn += rc.size() - tp;
            cc.fp += ec.size() - tp;
        }
    }
    for (const auto& [_, cc] : res.per_class) {
        res.overall.tp += cc.tp;
        res.overall.fn += cc.fn;
        res.overall.fp += cc.fp;
    }
    if (res.unknown_estimates)
        std::cerr << "warning: " << res.unknown_estimates << " estimated events have unknown classes\n";
    return res;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// PSDS

struct PsdsConfig {
    double dtc = 0.7;
    double gtc = 0.7;
    double alpha_st = 1.0;
    double efpr_max = 100.0;  // false positives per hour
    std::size_t thresholds = 50;

    template <typename V>
    void visit(V& v) {
        v("dtc", dtc);
        v("gtc", gtc);
        v("alpha_st", alpha_st);
        v("efpr_max", efpr_max);
        v("thresholds", thresholds);
    }

    void validate() const {
        if (!(dtc > 0 && dtc <= 1) || !(gtc > 0 && gtc <= 1)) throw ConfigError("psds: dtc and gtc must be in (0, 1]");
        if (!(efpr_max > 0)) throw ConfigError("psds: efpr_max must be positive");
        if (thresholds == 0) throw ConfigError("psds: empty threshold sweep");
        if (alpha_st < 0) throw ConfigError("psds: alpha_st must be non-negative");
    }
};

namespace psds_detail {

using Interval = std::pair<double, double>;

inline std::vector<Interval> merge(std::vector<Interval> v) {
    std::sort(v.begin(), v.end());
    std::vector<Interval> out;
    for (const auto& iv : v) {
        if (!out.empty() && iv.first <= out.back().second) out.back().second = std::max(out.back().second, iv.second);
        else out.push_back(iv);
    }
    return out;
}

inline double overlap(const Interval& a, const std::vector<Interval>& merged) {
    double s = 0;
    for (const auto& b : merged) s += std::max(0.0, std::min(a.second, b.second) - std::max(a.first, b.first));
    return s;
}

}  // namespace psds_detail

/// One operating point: per-class TPR and false-positive counts.
struct PsdsPoint {
    std::map<std::string, double> tpr;
    std::map<std::string, std::size_t> false_positives;
};

/// Intersection-based validation of one estimate set: a detection is a true
/// detection when at least dtc of it overlaps references of its class; a
/// reference is detected when at least gtc of it is covered by true
/// detections.
inline PsdsPoint psds_operating_point(const ClipEvents& refs, const ClipEvents& ests,
                                      const std::vector<std::string>& classes, const PsdsConfig& pc) {
    using namespace psds_detail;
    PsdsPoint pt;
    std::map<std::string, std::size_t> gt_total, gt_hit;
    for (const auto& c : classes) {
        gt_total[c] = 0;
        gt_hit[c] = 0;
        pt.false_positives[c] = 0;
    }
    std::set<std::string> clips;
    for (const auto& [f, _] : refs) clips.insert(f);
    for (const auto& [f, _] : ests) clips.insert(f);
    static const EventList none;
    for (const auto& clip : clips) {
        const auto rit = refs.find(clip);
        const auto eit = ests.find(clip);
        const EventList& r = rit == refs.end() ? none : rit->second;
        const EventList& e = eit == ests.end() ? none : eit->second;
        for (const auto& c : classes) {
            std::vector<Interval> gt, accepted;
            for (const auto& ev : r)
                if (ev.label == c) gt.emplace_back(ev.onset, ev.offset);
            const auto gt_merged = merge(gt);
            for (const auto& ev : e) {
                if (ev.label != c) continue;
                const Interval d{ev.onset, ev.offset};
                const double len = d.second - d.first;
                if (len > 0 && overlap(d, gt_merged) >= pc.dtc * len - 1e-12) accepted.push_back(d);
                else ++pt.false_positives[c];
            }
            const auto acc_merged = merge(accepted);
            gt_total[c] += gt.size();
            for (const auto& g : gt)
                if (overlap(g, acc_merged) >= pc.gtc * (g.second - g.first) - 1e-12) ++gt_hit[c];
        }
    }
    for (const auto& c : classes)
        if (gt_total[c]) pt.tpr[c] = static_cast<double>(gt_hit[c]) / static_cast<double>(gt_total[c]);
    return pt;
}

struct PsdsResult {
    double score = 0.0;
    std::vector<double> efpr;            // curve abscissae (per hour)
    std::vector<double> effective_tpr;   // mean - alpha_st * std at each abscissa
};

/// PSDS over a threshold sweep: per class, TPR as a step function of eFPR
/// (best TPR reached at or below each eFPR); the across-class mean minus
/// alpha_st times the population standard deviation, clamped at 0, is
/// integrated up to efpr_max and normalized. Classes without references
/// are excluded.
inline PsdsResult psds(const std::vector<ClipEvents>& per_threshold, const ClipEvents& refs,
                       const std::vector<std::string>& classes, double total_seconds, const PsdsConfig& pc = {}) {
    if (per_threshold.empty()) throw ConfigError("psds: empty threshold sweep");
    if (!(total_seconds > 0)) throw ConfigError("psds: total duration must be positive");
    const double hours = total_seconds / 3600.0;
    std::vector<PsdsPoint> points;
    for (const auto& ests : per_threshold) points.push_back(psds_operating_point(refs, ests, classes, pc));

    std::vector<std::string> active;
    for (const auto& c : classes)
        if (points.front().tpr.count(c)) active.push_back(c);
    PsdsResult res;
    if (active.empty()) return res;

    // per-class ROC points (efpr, tpr)
    std::map<std::string, std::vector<std::pair<double, double>>> roc;
    std::set<double> xs{0.0};
    for (const auto& c : active) {
        for (const auto& p : points) {
            const double x = static_cast<double>(p.false_positives.at(c)) / hours;
            roc[c].emplace_back(x, p.tpr.at(c));
            if (x < pc.efpr_max) xs.insert(x);
        }
        std::sort(roc[c].begin(), roc[c].end());
    }
    auto tpr_at = [&](const std::string& c, double x) {
        double best = 0.0;
        for (const auto& [ex, ty] : roc[c]) {
            if (ex > x) break;
            best = std::max(best, ty);
        }
        return best;
    };
    std::vector<double> grid(xs.begin(), xs.end());
    double area = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double mean = 0;
        std::vector<double> v;
        for (const auto& c : active) v.push_back(tpr_at(c, grid[i]));
        for (double t : v) mean += t;
        mean /= static_cast<double>(v.size());
        double var = 0;
        for (double t : v) var += (t - mean) * (t - mean);
        const double sd = std::sqrt(var / static_cast<double>(v.size()));
        const double eff = std::max(0.0, mean - pc.alpha_st * sd);
        res.efpr.push_back(grid[i]);
        res.effective_tpr.push_back(eff);
        const double next = i + 1 < grid.size() ? grid[i + 1] : pc.efpr_max;
        area += eff * (next - grid[i]);
    }
    res.score = area / pc.efpr_max;
    return res;
}

// ---------------------------------------------------------------------------
// Short / long event partition

struct PartitionScore {
    std::vector<std::string> classes;
    std::optional<EbF1Result> result;  // empty partition: not available
};

struct ShortLongReport {
    double boundary = 0.0;
    std::map<std::string, double> class_mean_duration;
    PartitionScore short_events, long_events;
    EbF1Result all;
};

inline ClipEvents restrict_classes(const ClipEvents& clips, const std::set<std::string>& keep) {
    ClipEvents out;
    for (const auto& [f, events] : clips) {
        auto& dst = out[f];
        for (const auto& e : events)
            if (keep.count(e.label)) dst.push_back(e);
    }
    return out;
}

/// Splits classes by the mean duration of their reference events
/// (short: mean < boundary) and scores each partition separately.
inline ShortLongReport short_long_report(const ClipEvents& refs, const ClipEvents& ests,
                                         const std::vector<std::string>& classes, double boundary,
                                         const MatchConfig& mc = {}) {
    ShortLongReport rep;
    rep.boundary = boundary;
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& [_, events] : refs)
        for (const auto& e : events) {
            acc[e.label].first += e.duration();
            ++acc[e.label].second;
        }
    std::set<std::string> short_set, long_set;
    for (const auto& c : classes) {
        auto it = acc.find(c);
        if (it == acc.end() || it->second.second == 0) continue;
        const double mean = it->second.first / static_cast<double>(it->second.second);
        rep.class_mean_duration[c] = mean;
        (mean < boundary ? short_set : long_set).insert(c);
    }
    rep.all = eb_f1(refs, ests, classes, mc);
    auto score = [&](const std::set<std::string>& keep, PartitionScore& out) {
        out.classes.assign(keep.begin(), keep.end());
        if (keep.empty()) return;
        out.result = eb_f1(restrict_classes(refs, keep), restrict_classes(ests, keep), out.classes, mc);
    };
    score(short_set, rep.short_events);
    score(long_set, rep.long_events);
    return rep;
}

}  // namespace astsed
