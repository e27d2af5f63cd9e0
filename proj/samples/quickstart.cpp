// Smallest end-to-end run: synthesize a few clips, train a small model for
// a couple of epochs, then print the detections for the first test clip.

#include <cstdio>
#include <filesystem>

#include "astsed/app/workflow.hpp"

using namespace astsed;

int main(int argc, char** argv) {
    const std::filesystem::path root = argc > 1 ? argv[1] : "quickstart_out";
    try {
        KeyValues kv;
        for (const char* split : {"strong_real", "strong_synth", "weak", "unlabeled", "validation", "test"})
            kv.set(std::string("data.") + split, "12");
        kv.set("data.clip_seconds", "1");
        kv.set("model.input_frames", "98");
        kv.set("model.clip_seconds", "1");
        kv.set("model.embed_dim", "16");
        kv.set("model.pte_depth", "1");
        kv.set("model.fte_depth", "1");
        kv.set("train.epochs", "2");
        kv.set("train.constant_lr_epochs", "1");
        kv.set("train.lr_backbone", "1e-3");
        kv.set("train.lr_new", "1e-3");
        kv.set("run.dataset", (root / "data").string());
        kv.set("run.out", (root / "run").string());
        const auto rc = resolve_config(std::nullopt, kv);

        gen_data(rc, rc.run.dataset);
        const auto trained = train_command(rc);
        const auto ds = open_dataset(rc);
        const auto clips = load_split_features(ds, "test", rc.model);
        const auto probs = predict_frames(rc.model, trained.student, {clips.front()});
        const auto events = decode_all(probs, ds.vocabulary(), rc.model.seconds_per_step(), rc.eval.decode);

        std::printf("%s\n  reference:\n", clips.front().filename.c_str());
        for (const auto& e : ds.split("test").front().events)
            std::printf("    %-10s %.3f  %.3f\n", e.label.c_str(), e.onset, e.offset);
        std::printf("  detected:\n");
        for (const auto& [_, list] : events)
            for (const auto& e : list) std::printf("    %-10s %.3f  %.3f\n", e.label.c_str(), e.onset, e.offset);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "quickstart: %s\n", e.what());
        return 1;
    }
    return 0;
}
