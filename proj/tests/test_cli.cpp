#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crossconst/evaluation.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    static fs::path dir;
    // small enough to run the whole pipeline in a few seconds
    static constexpr const char* kSmall =
        " --set num_train=150 --set num_valid=20 --set num_test=10 --set num_merges=40"
        " --set d_model=16 --set num_heads=2 --set d_ff=32 --set max_steps=6 --set valid_interval=3"
        " --set warmup_steps=3 --set max_tokens=256 --set beam_size=2";

    static Outcome run(const std::string& args) {
        const auto o = dir / "stdout.txt", e = dir / "stderr.txt";
        const std::string cmd = std::string("\"") + CROSSCONST_CLI + "\" " + args + " > \"" + o.string() + "\" 2> \"" +
                                e.string() + "\"";
        const int status = std::system(cmd.c_str());
        Outcome r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(o);
        r.err = slurp(e);
        return r;
    }

    static void SetUpTestSuite() {
        dir = fs::temp_directory_path() / ("crossconst_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        const std::string d = " --out \"" + dir.string() + "\"";
        ASSERT_EQ(run("make-corpus" + d + kSmall).code, 0);
        ASSERT_EQ(run("train-bpe" + d + kSmall).code, 0);
        const auto pre = run("pretrain" + d + kSmall);
        ASSERT_EQ(pre.code, 0) << pre.err;
    }

    static void TearDownTestSuite() { fs::remove_all(dir); }

    static std::string out_flag() { return " --out \"" + dir.string() + "\""; }
    static std::string ckpt(const std::string& name) { return " --checkpoint \"" + (dir / name).string() + "\""; }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, PipelineWritesItsFiles) {
    for (const char* f : {"corpus.tsv", "splits.cfg", "merges.txt", "vocab.txt", "pretrain.log", "pretrain.ckpt"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto log = slurp(dir / "pretrain.log");
    EXPECT_NE(log.find("# command = pretrain"), std::string::npos);
    EXPECT_NE(log.find("# d_model = 16"), std::string::npos);
    EXPECT_NE(log.find("step\tlr\ttrain_ce\ttrain_kl\tvalid_ce"), std::string::npos);
}

TEST_F(Cli, FinetuneWithoutInitIsAUsageError) {
    const auto r = run("finetune" + out_flag() + kSmall);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("pretrain"), std::string::npos);
}

TEST_F(Cli, FinetuneFromPretrainSucceeds) {
    const auto sub = dir / "ft";
    const auto r = run("finetune --data \"" + dir.string() + "\" --out \"" + sub.string() + "\" --init-checkpoint \"" +
                       (dir / "pretrain.ckpt").string() + "\"" + kSmall);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(sub / "finetune.ckpt"));
    EXPECT_NE(slurp(sub / "finetune.log").find("# alpha = 0.25"), std::string::npos);
}

TEST_F(Cli, UnknownSettingAndBadValuesAreConfigErrors) {
    EXPECT_EQ(run("make-corpus" + out_flag() + " --set warp_factor=9").code, 1);
    EXPECT_EQ(run("make-corpus" + out_flag() + " --set num_languages=2").code, 1);
    EXPECT_EQ(run("pretrain" + out_flag() + " --set num_heads=3").code, 1);
    EXPECT_EQ(run("pretrain" + out_flag() + " --preset enormous").code, 1);
    EXPECT_EQ(run("no-such-command").code, 1);
}

TEST_F(Cli, ConfigFileLayersUnderSetFlags) {
    const auto cfg = dir / "run.cfg";
    {
        std::ofstream os(cfg);
        os << "# comment\nalpha = 0.5\nbeam_size = 3\n";
    }
    const auto r = run("verify-theory --seeds 1" + out_flag() + " --preset highres --config \"" + cfg.string() +
                       "\" --set beam_size=4");
    EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, MissingDataIsADataError) {
    const auto r = run("train-bpe --out \"" + (dir / "empty").string() + "\"");
    EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, VerifyTheoryWritesTsv) {
    const auto sub = dir / "theory";
    const auto r = run("verify-theory --seeds 5 --out \"" + sub.string() + "\"");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("5/5 worlds pass"), std::string::npos);
    std::ifstream is(sub / "theory.tsv");
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 6);
}

TEST_F(Cli, EvaluateWritesReport) {
    const auto r = run("evaluate --limit 4" + out_flag() + ckpt("pretrain.ckpt") + kSmall);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_EQ(j["num_sentences"], 4);
    EXPECT_EQ(j["directions"].size(), 6u);
    EXPECT_TRUE(j.contains("zero_shot_average"));
    EXPECT_TRUE(j.contains("supervised_average"));
    EXPECT_FALSE(j.contains("pivot_average"));
}

TEST_F(Cli, TranslateAndPivotTranslate) {
    auto r = run("translate --src L1 --tgt L2" + out_flag() + ckpt("pretrain.ckpt") + kSmall);
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream is(dir / "translations.tsv");
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 4);
        ++rows;
    }
    EXPECT_EQ(rows, 10);
    r = run("pivot-translate --src L1 --tgt L2 --pivot L0" + out_flag() + ckpt("pretrain.ckpt") + kSmall);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "pivot_translations.tsv"));
    EXPECT_EQ(run("translate --src L9 --tgt L2" + out_flag() + ckpt("pretrain.ckpt")).code, 1);
}

TEST_F(Cli, ExportAndSimsearch) {
    auto r = run("export-reprs" + out_flag() + ckpt("pretrain.ckpt") + kSmall);
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream is(dir / "reprs.jsonl");
    const auto dump = crossconst::read_dump(is);
    EXPECT_EQ(dump.size(), 30u);
    r = run("simsearch --dump \"" + (dir / "reprs.jsonl").string() + "\" --src L1 --tgt L2");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("L1\tL2\t"), std::string::npos);
}

TEST_F(Cli, CorruptCheckpointIsADataError) {
    {
        std::ofstream os(dir / "bad.ckpt");
        os << "garbage";
    }
    EXPECT_EQ(run("evaluate" + out_flag() + ckpt("bad.ckpt") + kSmall).code, 2);
}

TEST_F(Cli, RerunIsByteIdentical) {
    const auto again = dir / "again";
    const std::string d = " --out \"" + again.string() + "\"";
    ASSERT_EQ(run("make-corpus" + d + kSmall).code, 0);
    ASSERT_EQ(run("train-bpe" + d + kSmall).code, 0);
    ASSERT_EQ(run("pretrain" + d + kSmall).code, 0);
    for (const char* f : {"corpus.tsv", "splits.cfg", "merges.txt", "vocab.txt", "pretrain.ckpt", "pretrain.log"})
        EXPECT_EQ(slurp(again / f), slurp(dir / f)) << f;
    ASSERT_EQ(run("make-corpus" + d + kSmall + " --seed 9").code, 0);
    EXPECT_NE(slurp(again / "corpus.tsv"), slurp(dir / "corpus.tsv"));
}

TEST_F(Cli, EvaluateWithPivotHasDirectAndPivotRows) {
    const auto r = run("evaluate --pivot --limit 3" + out_flag() + ckpt("pretrain.ckpt") + kSmall);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_EQ(j["directions"].size(), 8u);
    EXPECT_TRUE(j.contains("pivot_average"));
}

TEST_F(Cli, HundredTheoryWorldsPass) { EXPECT_EQ(run("verify-theory --seeds 100" + out_flag()).code, 0); }

TEST_F(Cli, ThreadCountDoesNotChangeTranslations) {
    ASSERT_EQ(run("translate --src L0 --tgt L1 --threads 1" + out_flag() + ckpt("pretrain.ckpt") + kSmall).code, 0);
    const auto one = slurp(dir / "translations.tsv");
    ASSERT_EQ(run("translate --src L0 --tgt L1 --threads 3" + out_flag() + ckpt("pretrain.ckpt") + kSmall).code, 0);
    EXPECT_EQ(slurp(dir / "translations.tsv"), one);
}
