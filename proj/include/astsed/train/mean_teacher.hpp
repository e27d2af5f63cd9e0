#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "astsed/model/checkpoint.hpp"
#include "astsed/train/augment.hpp"
#include "astsed/train/optim.hpp"

namespace astsed {

/// Clips drawn per source for every optimizer step.
struct BatchSpec {
    std::size_t strong_real = 2;
    std::size_t strong_synth = 2;
    std::size_t weak = 4;
    std::size_t unlabeled = 4;

    template <typename V>
    void visit(V& v) {
        v("strong_real", strong_real);
        v("strong_synth", strong_synth);
        v("weak", weak);
        v("unlabeled", unlabeled);
    }

    std::size_t total() const { return strong_real + strong_synth + weak + unlabeled; }

    std::size_t count(const std::string& source) const {
        if (source == "strong_real") return strong_real;
        if (source == "strong_synth") return strong_synth;
        if (source == "weak") return weak;
        if (source == "unlabeled") return unlabeled;
        throw ConfigError("unknown training source '" + source + "'");
    }

    void validate() const {
        if (total() == 0) throw ConfigError("batch: at least one clip per batch is required");
    }

    /// Splits a batch size in the 1:1:2:2 ratio (size must be a multiple of 6).
    static BatchSpec from_total(std::size_t n) {
        if (n == 0 || n % 6) throw ConfigError("batch: size " + std::to_string(n) + " is not a multiple of 6");
        return {n / 6, n / 6, n / 3, n / 3};
    }
};

struct LossBreakdown {
    double L_c = 0, L_f = 0, L_MT_c = 0, L_MT_f = 0, alpha = 0, L_total = 0;

    double recombined() const { return 0.5 * L_c + L_f + alpha * (L_MT_c + L_MT_f); }
};

struct BatchLoss {
    Var<double> total;
    LossBreakdown parts;
};

/// Loss of one batch. L_c: clip BCE over clips with clip labels; L_f: frame
/// BCE over strongly labelled clips; L_MT_c, L_MT_f: MSE between student and
/// teacher probabilities over all clips. Each term is a mean over its clips
/// and L_total = 0.5 L_c + L_f + alpha (L_MT_c + L_MT_f).
inline BatchLoss total_loss(const std::vector<Predictions<double>>& student,
                            const std::vector<Predictions<double>>& teacher, const std::vector<TrainExample>& batch,
                            double clip_seconds, const FrontendConfig& fe, double alpha) {
    if (student.size() != batch.size() || teacher.size() != batch.size())
        throw InputError("loss: " + std::to_string(student.size()) + " student and " + std::to_string(teacher.size()) +
                         " teacher predictions for " + std::to_string(batch.size()) + " clips");
    std::size_t n_c = 0, n_f = 0;
    for (const auto& ex : batch) {
        n_c += ex.has_clip_labels;
        n_f += ex.has_frame_labels;
    }
    const double n_all = static_cast<double>(batch.size());
    LossBreakdown parts;
    parts.alpha = alpha;
    Var<double> total;
    auto accumulate = [&](const Var<double>& term) { total = total.valid() ? add(total, term) : term; };
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& ex = batch[i];
        const auto& s = student[i];
        const auto& t = teacher[i];
        if (t.frame_probs.requires_grad() || t.clip_probs.requires_grad())
            throw InputError("loss: teacher predictions must not track gradients");
        if (s.clip_probs.shape() != ex.clip_labels.shape() || t.clip_probs.shape() != s.clip_probs.shape() ||
            t.frame_probs.shape() != s.frame_probs.shape())
            throw InputError("loss: prediction shapes do not match labels for " + ex.filename);
        if (ex.has_clip_labels) {
            auto lc = bce(s.clip_probs, ex.clip_labels);
            parts.L_c += lc.item();
            accumulate(scale(lc, 0.5 / static_cast<double>(n_c)));
        }
        if (ex.has_frame_labels) {
            const auto target = resample_labels(ex.frame_labels, s.frame_probs.dim(0), clip_seconds, fe);
            if (target.shape() != s.frame_probs.shape())
                throw InputError("loss: frame labels " + shape_str(target.shape()) + " vs predictions " +
                                 shape_str(s.frame_probs.shape()));
            auto lf = bce(s.frame_probs, target);
            parts.L_f += lf.item();
            accumulate(scale(lf, 1.0 / static_cast<double>(n_f)));
        }
        auto mc = mse(s.clip_probs, t.clip_probs.value());
        auto mf = mse(s.frame_probs, t.frame_probs.value());
        parts.L_MT_c += mc.item();
        parts.L_MT_f += mf.item();
        accumulate(scale(add(mc, mf), alpha / n_all));
    }
    if (n_c) parts.L_c /= static_cast<double>(n_c);
    if (n_f) parts.L_f /= static_cast<double>(n_f);
    parts.L_MT_c /= n_all;
    parts.L_MT_f /= n_all;
    parts.L_total = total.valid() ? total.item() : 0.0;
    return {total, parts};
}

inline std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
    return p;
}

/// Draws each source without replacement, reshuffling when it runs out.
class BatchSampler {
 public:
    BatchSampler(const TrainingData& td, const BatchSpec& spec, std::uint64_t seed)
        : td_(td), spec_(spec), rng_(make_rng(seed, "batches")) {
        for (const std::string s : kTrainSources) {
            const std::size_t want = spec.count(s), have = td.sources.at(s).size();
            if (want > 0 && have == 0) throw InputError("training source '" + s + "' is empty but the batch asks for " +
                                                        std::to_string(want) + " clips");
            if (want > 0)
                per_epoch_ = std::max(per_epoch_, (have + want - 1) / want);
            order_[s] = permutation(have, rng_);
            cursor_[s] = 0;
        }
    }

    std::size_t iterations_per_epoch() const { return per_epoch_; }

    std::vector<TrainExample> next() {
        std::vector<TrainExample> batch;
        for (const std::string s : kTrainSources) {
            const auto& pool = td_.sources.at(s);
            for (std::size_t i = 0; i < spec_.count(s); ++i) {
                if (cursor_[s] == pool.size()) {
                    order_[s] = permutation(pool.size(), rng_);
                    cursor_[s] = 0;
                }
                batch.push_back(pool[order_[s][cursor_[s]++]]);
            }
        }
        return batch;
    }

 private:
    const TrainingData& td_;
    BatchSpec spec_;
    std::mt19937_64 rng_;
    std::size_t per_epoch_ = 0;
    std::map<std::string, std::vector<std::size_t>> order_;
    std::map<std::string, std::size_t> cursor_;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double L_c = 0, L_f = 0, L_MT_c = 0, L_MT_f = 0, alpha = 0;
    double lr_backbone = 0, lr_new = 0;
    double val_eb_f1 = std::numeric_limits<double>::quiet_NaN();
    double val_psds1 = std::numeric_limits<double>::quiet_NaN();
};

inline void write_metrics_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
    auto os = tsv_detail::open_out(path);
    os << "epoch\tL_c\tL_f\tL_MT_c\tL_MT_f\talpha\tlr_backbone\tlr_new\tval_eb_f1\tval_psds1\n";
    auto num = [](double v, const char* f) {
        if (std::isnan(v)) return std::string("NA");
        char buf[64];
        std::snprintf(buf, sizeof(buf), f, v);
        return std::string(buf);
    };
    for (const auto& e : log) {
        os << e.epoch << '\t' << num(e.L_c, "%.8f") << '\t' << num(e.L_f, "%.8f") << '\t' << num(e.L_MT_c, "%.8f")
           << '\t' << num(e.L_MT_f, "%.8f") << '\t' << num(e.alpha, "%.8f") << '\t' << num(e.lr_backbone, "%.6e")
           << '\t' << num(e.lr_new, "%.6e") << '\t' << num(e.val_eb_f1, "%.6f") << '\t' << num(e.val_psds1, "%.6f")
           << '\n';
    }
}

struct TrainOptions {
    TrainSchedule schedule;
    BatchSpec batch;
    AugmentConfig augment;
    EvalSettings eval;
    std::uint64_t seed = 1;
    std::filesystem::path output_dir;  // empty: nothing written
    bool quiet = true;
};

struct TrainResult {
    ParamTree<double> student, teacher;
    std::vector<EpochLog> epochs;
    std::vector<LossBreakdown> iterations;
    double max_recombination_error = 0.0;  // |L_total - recombined| over all iterations
    bool teacher_received_gradients = false;
    std::size_t iterations_per_epoch = 0;
};

/// Mean-teacher fine-tuning. `init` (optional) supplies the starting
/// student parameters, e.g. a fresh initialization with a pretrained
/// backbone loaded; otherwise parameters are drawn from the seed.
inline TrainResult train(const TrainingData& td, const std::vector<EvalClip>& val_clips, const ClipEvents& val_refs,
                         const ModelConfig& cfg, const TrainOptions& opt, const ParamTree<double>* init = nullptr) {
    cfg.validate();
    opt.schedule.validate();
    opt.batch.validate();
    opt.augment.validate();
    opt.eval.decode.validate(cfg.num_classes);
    opt.eval.psds.validate();
    const auto& sch = opt.schedule;
    const auto fe = frontend_for(cfg);

    TrainResult res;
    res.student = init ? *init : init_params<double>(cfg, derive_seed(opt.seed, "init"));
    res.student.require_same_structure(init_params<double>(cfg, 0));
    res.teacher = res.student;

    BatchSampler sampler(td, opt.batch, opt.seed);
    res.iterations_per_epoch = sampler.iterations_per_epoch();
    const std::size_t total_iters = sch.epochs * res.iterations_per_epoch;
    const auto rampup = static_cast<std::size_t>(std::llround(sch.rampup_fraction * static_cast<double>(total_iters)));
    auto aug_rng = make_rng(opt.seed, "augment");
    auto drop_rng = make_rng(opt.seed, "dropout");
    AdamW adam(sch);
    if (!opt.output_dir.empty()) std::filesystem::create_directories(opt.output_dir);

    std::size_t it = 0;
    for (std::size_t e = 0; e < sch.epochs; ++e) {
        EpochLog log;
        log.epoch = e + 1;
        log.lr_backbone = sch.lr_backbone * sch.lr_factor(e);
        log.lr_new = sch.lr_new * sch.lr_factor(e);
        for (std::size_t b = 0; b < res.iterations_per_epoch; ++b, ++it) {
            const auto batch = augment_batch(sampler.next(), opt.augment, aug_rng);
            const double alpha = alpha_ramp(it, rampup, sch.alpha_max);
            const ParamBinding<double> sp(res.student, true), tp(res.teacher, false);
            ForwardOptions fo;
            fo.dropout_rng = cfg.dropout > 0 ? &drop_rng : nullptr;
            std::vector<Predictions<double>> s_pred, t_pred;
            for (const auto& ex : batch) {
                const Spectrogram spec{ex.features, fe.hop_seconds};
                s_pred.push_back(forward(spec, cfg, sp, fo));
                t_pred.push_back(forward(spec, cfg, tp));
            }
            auto loss = total_loss(s_pred, t_pred, batch, cfg.clip_seconds, fe, alpha);
            if (!std::isfinite(loss.parts.L_total))
                throw NumericalError("non-finite loss at epoch " + std::to_string(e + 1) + ", batch " +
                                     std::to_string(b) + " (iteration " + std::to_string(it) + ", first clip " +
                                     batch.front().filename + ")");
            backward(loss.total);
            sp.collect_grads(res.student);
            tp.collect_grads(res.teacher);
            if (res.teacher.has_gradients()) res.teacher_received_gradients = true;
            adam.step(res.student, log.lr_backbone, log.lr_new);
            ema_update(res.teacher, res.student, sch.ema_beta);

            res.max_recombination_error =
                std::max(res.max_recombination_error, std::abs(loss.parts.L_total - loss.parts.recombined()));
            res.iterations.push_back(loss.parts);
            log.L_c += loss.parts.L_c;
            log.L_f += loss.parts.L_f;
            log.L_MT_c += loss.parts.L_MT_c;
            log.L_MT_f += loss.parts.L_MT_f;
            log.alpha += alpha;
        }
        const double n = static_cast<double>(res.iterations_per_epoch);
        log.L_c /= n;
        log.L_f /= n;
        log.L_MT_c /= n;
        log.L_MT_f /= n;
        log.alpha /= n;
        if (!val_clips.empty()) {
            const auto rep = evaluate_posteriors(predict_frames(cfg, res.student, val_clips), val_refs, cfg, td.classes,
                                                 opt.eval);
            log.val_eb_f1 = rep.eb.f1();
            log.val_psds1 = rep.psds.score;
        }
        res.epochs.push_back(log);
        if (!opt.quiet)
            std::fprintf(stderr, "epoch %zu: L_c %.4f L_f %.4f L_MT %.5f alpha %.3f val EB-F1 %.4f PSDS1 %.4f\n",
                         log.epoch, log.L_c, log.L_f, log.L_MT_c + log.L_MT_f, log.alpha, log.val_eb_f1,
                         log.val_psds1);
        if (!opt.output_dir.empty()) write_metrics_log(opt.output_dir / "metrics.tsv", res.epochs);
    }
    if (!opt.output_dir.empty()) {
        save_checkpoint(opt.output_dir / "student.ckpt", cfg, res.student, ParamSet::sed);
        save_checkpoint(opt.output_dir / "teacher.ckpt", cfg, res.teacher, ParamSet::sed);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Clip-tagging pretraining of the backbone

struct PretrainOptions {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    AugmentConfig augment = AugmentConfig::none();
    std::uint64_t seed = 1;

    template <typename V>
    void visit(V& v) {
        v("epochs", epochs);
        v("batch_size", batch_size);
        v("lr", lr);
        v("weight_decay", weight_decay);
    }

    void validate() const {
        if (epochs == 0 || batch_size == 0) throw ConfigError("pretrain: epochs and batch_size must be positive");
        if (!(lr > 0) || weight_decay < 0) throw ConfigError("pretrain: invalid learning rate or weight decay");
    }
};

struct PretrainResult {
    ParamTree<double> params;  // tagging set: backbone plus clip head
    std::vector<double> epoch_loss;
    double heldout_macro_f1 = std::numeric_limits<double>::quiet_NaN();
};

/// Macro F1 over classes present in `labels`, predictions thresholded.
inline double clip_macro_f1(const std::vector<NdArray<double>>& probs, const std::vector<NdArray<double>>& labels,
                            double threshold = 0.5) {
    if (probs.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t k = labels.front().size();
    double total = 0;
    std::size_t classes = 0;
    for (std::size_t c = 0; c < k; ++c) {
        ClassCounts cc;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const bool pred = probs[i][c] >= threshold, truth = labels[i][c] >= 0.5;
            cc.tp += pred && truth;
            cc.fp += pred && !truth;
            cc.fn += !pred && truth;
        }
        if (cc.references() == 0) continue;
        total += cc.f1();
        ++classes;
    }
    return classes ? total / static_cast<double>(classes) : std::numeric_limits<double>::quiet_NaN();
}

/// Trains patch embedding, patch encoder and a clip head on clip labels of
/// every clip that has them. `heldout` (features with clip labels) is
/// scored after the last epoch.
inline PretrainResult pretrain_at(const TrainingData& td, const std::vector<TrainExample>& heldout,
                                  const ModelConfig& cfg, const PretrainOptions& opt) {
    cfg.validate();
    opt.validate();
    opt.augment.validate();
    std::vector<const TrainExample*> pool;
    for (const std::string s : kTrainSources)
        for (const auto& ex : td.sources.at(s))
            if (ex.has_clip_labels) pool.push_back(&ex);
    if (pool.empty()) throw InputError("pretraining needs clips with clip labels");

    PretrainResult res;
    res.params = init_params<double>(cfg, derive_seed(opt.seed, "pretrain-init"), ParamSet::tagging);
    TrainSchedule sch;
    sch.weight_decay = opt.weight_decay;
    AdamW adam(sch);
    auto order_rng = make_rng(opt.seed, "pretrain-batches");
    auto aug_rng = make_rng(opt.seed, "pretrain-augment");
    const auto fe = frontend_for(cfg);
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        const auto order = permutation(pool.size(), order_rng);
        double epoch_loss = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            std::vector<TrainExample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + opt.batch_size); ++i)
                batch.push_back(*pool[order[i]]);
            batch = augment_batch(batch, opt.augment, aug_rng);
            const ParamBinding<double> p(res.params, true);
            Var<double> total;
            for (const auto& ex : batch) {
                auto probs = tagging_forward(Spectrogram{ex.features, fe.hop_seconds}, cfg, p);
                auto l = scale(bce(probs, ex.clip_labels), 1.0 / static_cast<double>(batch.size()));
                total = total.valid() ? add(total, l) : l;
            }
            if (!std::isfinite(total.item()))
                throw NumericalError("non-finite pretraining loss at epoch " + std::to_string(e + 1) + ", batch " +
                                     std::to_string(batches));
            backward(total);
            p.collect_grads(res.params);
            adam.step(res.params, opt.lr, opt.lr);
            epoch_loss += total.item();
            ++batches;
        }
        res.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    }
    if (!heldout.empty()) {
        const ParamBinding<double> p(res.params, false);
        std::vector<NdArray<double>> probs, labels;
        for (const auto& ex : heldout) {
            probs.push_back(tagging_forward(Spectrogram{ex.features, fe.hop_seconds}, cfg, p).value());
            labels.push_back(ex.clip_labels);
        }
        res.heldout_macro_f1 = clip_macro_f1(probs, labels);
    }
    return res;
}

/// Held-out clips with clip labels taken from their strong annotations.
inline std::vector<TrainExample> labelled_examples(const Dataset& ds, const std::string& split, const ModelConfig& cfg) {
    const auto classes = ds.vocabulary();
    auto clips = load_split_features(ds, split, cfg);
    const auto& records = ds.split(split);
    std::vector<TrainExample> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        TrainExample ex;
        ex.filename = clips[i].filename;
        ex.features = std::move(clips[i].features.values);
        ex.clip_labels = clip_label_vector(label_set(records[i].events), classes);
        ex.frame_labels = rasterize_frames(records[i].events, classes, cfg.input_frames, frontend_for(cfg));
        ex.has_clip_labels = ex.has_frame_labels = true;
        out.push_back(std::move(ex));
    }
    return out;
}

/// Fresh SED parameters with the backbone copied from a tagging checkpoint.
inline ParamTree<double> sed_init_from_backbone(const ModelConfig& cfg, std::uint64_t seed,
                                                const ParamTree<double>& backbone) {
    auto p = init_params<double>(cfg, derive_seed(seed, "init"));
    load_backbone(p, backbone);
    return p;
}

}  // namespace astsed
