#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "astsed/app/workflow.hpp"

namespace fs = std::filesystem;
using namespace astsed;

namespace {

struct CommonFlags {
    std::optional<std::string> config;
    std::vector<std::string> sets;
    std::optional<std::string> out, dataset, encoder, backbone, ur_list;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> ur, threads;
    bool verbose = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "key = value config file");
    sub->add_option("--set", f.sets, "override, key=value (repeatable)");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "run seed (gen-data: corpus seed)");
    sub->add_option("--dataset", f.dataset, "dataset directory");
    sub->add_option("--encoder", f.encoder, "mean_pool or fte");
    sub->add_option("--ur", f.ur, "up-sampling ratio");
    sub->add_option("--ur-list", f.ur_list, "ablation UR sweep, comma separated");
    sub->add_option("--backbone", f.backbone, "pretraining checkpoint to start from");
    sub->add_option("--threads", f.threads, "worker cap");
    sub->add_flag("-v,--verbose", f.verbose, "progress on stderr");
}

RunConfig resolve(const CommonFlags& f, const std::string& command) {
    KeyValues over;
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        over.set(kv_detail::trim(s.substr(0, eq)), kv_detail::trim(s.substr(eq + 1)));
    }
    if (f.out) over.set("run.out", *f.out);
    if (f.seed) over.set(command == "gen-data" ? "data.seed" : "run.seed", std::to_string(*f.seed));
    if (f.dataset) over.set("run.dataset", *f.dataset);
    if (f.encoder) over.set("model.encoder", *f.encoder);
    if (f.ur) over.set("model.upsample_ratio", std::to_string(*f.ur));
    if (f.ur_list) over.set("ablate.ur_list", *f.ur_list);
    if (f.backbone) over.set("run.backbone", *f.backbone);
    if (f.threads) over.set("run.threads", std::to_string(*f.threads));
    if (f.verbose) over.set("run.verbose", "true");
    std::optional<fs::path> file;
    if (f.config) file = *f.config;
    return resolve_config(file, over);
}

void print_report(const EvalReport& r) {
    std::printf("eb_f1\t%s\npsds1\t%s\n", fmt6(r.eb.f1()).c_str(), fmt6(r.psds.score).c_str());
}

int run(int argc, char** argv) {
    CLI::App app{"Sound event detection with a frequency-wise transformer encoder and local GRU decoder"};
    app.require_subcommand(1);

    CommonFlags f;
    std::string checkpoint, predictions, refs, wav, features_out;

    auto* gen = app.add_subcommand("gen-data", "synthesize the seeded corpus into --out");
    auto* pre = app.add_subcommand("pretrain", "clip-tagging pretraining of the backbone");
    auto* trn = app.add_subcommand("train", "mean-teacher training");
    auto* evl = app.add_subcommand("eval", "score a checkpoint or a prediction table");
    auto* abl = app.add_subcommand("ablate", "component and up-sampling ablation table");
    auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    auto* bnd = app.add_subcommand("analyze-bands", "per-band activation histogram of a mean-pool checkpoint");
    auto* fea = app.add_subcommand("features", "log-mel features of one wav file as TSV");
    for (auto* s : {gen, pre, trn, evl, abl, grd, bnd, fea}) add_common(s, f);

    auto* ck_opt = evl->add_option("--checkpoint", checkpoint, "SED checkpoint");
    auto* pr_opt = evl->add_option("--predictions", predictions, "prediction TSV with a score column");
    evl->add_option("--refs", refs, "reference TSV (default: the dataset's eval split)")->needs(pr_opt);
    ck_opt->excludes(pr_opt);
    bnd->add_option("--checkpoint", checkpoint, "SED checkpoint with the mean_pool encoder")->required();
    fea->add_option("wav", wav, "input wav")->required();
    fea->add_option("--tsv", features_out, "output TSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const RunConfig rc = resolve(f, name);

    if (name == "gen-data") {
        const auto s = gen_data(rc, rc.run.out);
        std::printf("clips\t%zu\nstrong_events\t%zu\n", s.clips, s.strong_rows);
    } else if (name == "pretrain") {
        const auto r = pretrain_command(rc);
        std::printf("final_loss\t%s\nheldout_macro_f1\t%s\n", fmt6(r.epoch_loss.back()).c_str(),
                    fmt6(r.heldout_macro_f1).c_str());
    } else if (name == "train") {
        const auto r = train_command(rc);
        if (!r.epochs.empty())
            std::printf("val_eb_f1\t%s\nval_psds1\t%s\n", fmt6(r.epochs.back().val_eb_f1).c_str(),
                        fmt6(r.epochs.back().val_psds1).c_str());
    } else if (name == "eval") {
        if (!checkpoint.empty()) {
            print_report(eval_checkpoint_command(rc, checkpoint));
        } else if (!predictions.empty()) {
            std::optional<fs::path> r;
            if (!refs.empty()) r = refs;
            print_report(eval_predictions_command(rc, predictions, r));
        } else {
            throw ConfigError("eval needs --checkpoint or --predictions");
        }
    } else if (name == "ablate") {
        const auto rows = ablate_command(rc);
        std::ifstream table(fs::path(rc.run.out) / "ablation.tsv");
        std::cout << table.rdbuf();
        for (const auto& r : rows)
            if (!r.report) return 1;
    } else if (name == "gradcheck") {
        write_resolved_config(rc.run.out, rc);
        const auto g = gradcheck_command(rc.run.seed, std::cout);
        if (!g.ok) {
            std::cerr << "gradient check failed\n";
            return 4;
        }
    } else if (name == "analyze-bands") {
        const auto h = analyze_bands_command(rc, checkpoint);
        for (std::size_t k = 0; k < h.classes.size(); ++k) std::printf("%s\trow %zu\n", h.classes[k].c_str(), h.argmax(k));
    } else if (name == "features") {
        const auto spec = compute_features(read_wav(wav), frontend_for(rc.model));
        if (features_out.empty()) {
            for (std::size_t m = 0; m < spec.mel_bins(); ++m) {
                for (std::size_t t = 0; t < spec.frames(); ++t)
                    std::printf(t ? "\t%.6f" : "%.6f", spec.values.at(m, t));
                std::printf("\n");
            }
        } else {
            write_spectrogram_tsv(features_out, spec);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const StructuralError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const InputError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 4;
    } catch (const EvaluationError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
