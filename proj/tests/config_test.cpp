#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "astsed/app/workflow.hpp"

namespace fs = std::filesystem;
using namespace astsed;

namespace {

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("astsed_cfg_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

EnvLookup env_of(std::map<std::string, std::string> vars) {
    return [vars](const std::string& k) -> std::optional<std::string> {
        auto it = vars.find(k);
        if (it == vars.end()) return std::nullopt;
        return it->second;
    };
}

const EnvLookup no_env = env_of({});

}  // namespace

TEST(Config, DefaultsValidate) {
    const auto rc = resolve_config(std::nullopt, {}, no_env);
    EXPECT_EQ(rc.model.encoder, EncoderKind::fte);
    EXPECT_EQ(rc.templates.size(), rc.model.num_classes);
    EXPECT_EQ(rc.run.threads, 1u);
}

TEST(Config, LayeringFileEnvOverride) {
    const auto dir = temp_dir("layers");
    {
        std::ofstream os(dir / "a.cfg");
        os << "train.epochs = 3\ntrain.constant_lr_epochs = 2\nmodel.upsample_ratio = 2\nrun.seed = 5\n";
    }
    KeyValues over;
    over.set("model.upsample_ratio", "5");
    const auto rc = resolve_config(dir / "a.cfg", over, env_of({{"ASTSED_TRAIN_EPOCHS", "4"},
                                                                 {"ASTSED_MODEL_UPSAMPLE_RATIO", "7"},
                                                                 {"ASTSED_BATCH_WEAK", "6"}}));
    EXPECT_EQ(rc.train.epochs, 4u);          // env beats file
    EXPECT_EQ(rc.model.upsample_ratio, 5u);  // flag beats env
    EXPECT_EQ(rc.batch.weak, 6u);            // env on a default-only key
    EXPECT_EQ(rc.run.seed, 5u);
    EXPECT_EQ(rc.pretrain.seed, 5u);
}

TEST(Config, EnvName) {
    EXPECT_EQ(env_name("model.upsample_ratio"), "ASTSED_MODEL_UPSAMPLE_RATIO");
    EXPECT_EQ(env_name("template.beep_hi.band_lo"), "ASTSED_TEMPLATE_BEEP_HI_BAND_LO");
}

TEST(Config, UnknownKeyRejected) {
    KeyValues over;
    over.set("model.upsampling", "3");
    try {
        resolve_config(std::nullopt, over, no_env);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("model.upsampling"), std::string::npos);
    }
}

TEST(Config, InvalidValuesRejectedBeforeWork) {
    for (auto [k, v] : std::vector<std::pair<std::string, std::string>>{{"model.embed_dim", "30"},
                                                                         {"train.epochs", "0"},
                                                                         {"batch.strong_real", "-1"},
                                                                         {"run.threads", "0"},
                                                                         {"ablate.ur_list", "1,0"},
                                                                         {"decode.threshold", "1.5"}}) {
        KeyValues over;
        over.set(k, v);
        EXPECT_THROW(resolve_config(std::nullopt, over, no_env), ConfigError) << k << " = " << v;
    }
}

TEST(Config, ResolvedEchoRoundTrips) {
    const auto dir = temp_dir("echo");
    KeyValues over;
    over.set("model.encoder", "mean_pool");
    over.set("data.clip_seconds", "1");
    over.set("template.hum_lo.band_hi", "600");
    over.set("ablate.ur_list", "1,3");
    const auto rc = resolve_config(std::nullopt, over, no_env);
    write_resolved_config(dir, rc);
    const auto again = resolve_config(dir / "resolved.cfg", {}, no_env);
    EXPECT_EQ(again.to_kv().to_text(), rc.to_kv().to_text());
    EXPECT_EQ(again.model.encoder, EncoderKind::mean_pool);
    EXPECT_EQ(again.ablate.ur_list, (std::vector<std::size_t>{1, 3}));
}

TEST(Config, ModelMustMatchData) {
    const auto rc = resolve_config(std::nullopt, {}, no_env);
    DatasetManifest m = rc.data;
    EXPECT_NO_THROW(rc.require_model_matches_data(m, rc.templates.size()));
    m.clip_seconds = 1.0;
    EXPECT_THROW(rc.require_model_matches_data(m, rc.templates.size()), ConfigError);
    EXPECT_THROW(rc.require_model_matches_data(rc.data, rc.templates.size() + 1), ConfigError);
}

TEST(Ablation, RowSetFollowsUrList) {
    auto rc = resolve_config(std::nullopt, {}, no_env);
    auto rows = ablation_rows(rc);
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0].encoder, EncoderKind::mean_pool);
    EXPECT_EQ(rows[0].ur, 1u);
    EXPECT_EQ(rows[1].encoder, EncoderKind::fte);
    EXPECT_EQ(rows[2].ur, rc.model.upsample_ratio);
    EXPECT_EQ(rows[7].ur, 10u);
    rc.ablate.ur_list = {1};
    EXPECT_EQ(ablation_rows(rc).size(), 5u);
}

TEST(Ablation, FailedRowsStillWritten) {
    const auto dir = temp_dir("ablate_tsv");
    auto rc = resolve_config(std::nullopt, {}, no_env);
    auto rows = ablation_rows(rc);
    rows[0].report = EvalReport{};
    rows[1].error = "non-finite loss\tat epoch 1";
    write_ablation_tsv(dir / "a.tsv", rows);
    std::ifstream is(dir / "a.tsv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(is, line)) lines.push_back(line);
    ASSERT_EQ(lines.size(), 9u);
    EXPECT_NE(lines[1].find("\tok"), std::string::npos);
    EXPECT_NE(lines[2].find("failed: non-finite loss at epoch 1"), std::string::npos);
}

TEST(Workflow, GroundTruthAsPredictionsScoresPerfectly) {
    const auto dir = temp_dir("oracle");
    ClipEvents truth;
    truth["a.wav"] = {{"beep_hi", 0.2, 0.6, 1.0}, {"hum_lo", 0.0, 1.5, 1.0}};
    truth["b.wav"] = {{"knock_mid", 1.0, 1.3, 1.0}};
    truth["c.wav"] = {};
    write_strong_tsv(dir / "truth.tsv", truth);
    KeyValues over;
    over.set("run.out", (dir / "out").string());
    const auto rc = resolve_config(std::nullopt, over, no_env);
    const auto r = eval_predictions_command(rc, dir / "truth.tsv", dir / "truth.tsv");
    EXPECT_DOUBLE_EQ(r.eb.f1(), 1.0);
    EXPECT_NEAR(r.psds.score, 1.0, 1e-9);
    EXPECT_EQ(r.clips, 3u);
    EXPECT_TRUE(fs::exists(dir / "out" / "metrics.tsv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "short_long.tsv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "resolved.cfg"));
}

TEST(Workflow, GradcheckPasses) {
    std::ostringstream log;
    const auto g = gradcheck_command(3, log);
    EXPECT_TRUE(g.ok) << log.str();
    EXPECT_LE(g.model.max_rel_error, 5e-3);
}
