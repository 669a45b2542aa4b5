#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mlstm/mlstm.hpp"

using namespace mlstm;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = fs::temp_directory_path() / ("mlstm_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int run(const std::string& args) {
    const std::string cmd = std::string(MLSTM_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

AppConfig config(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

const char* kSmallConfig =
    "# small synthetic run\n"
    "use_ref_volume = true\n"
    "synth.subjects = 60\n"
    "epochs = 20\n"
    "validation_every = 10\n";

}  // namespace

TEST(Config, DefaultsMatchTrainingDefaults) {
    const auto c = config("");
    EXPECT_EQ(c.train.hyper.learning_rate, 0.1);
    EXPECT_EQ(c.train.hyper.momentum, 0.9);
    EXPECT_EQ(c.train.hyper.weight_decay, 0.0001);
    EXPECT_EQ(c.train.epochs, 1000);
    EXPECT_EQ(c.strategy, MissingStrategy::masked);
    EXPECT_EQ(c.preprocess.visits.size(), 11u);
}

TEST(Config, ParsesEveryKind) {
    const auto c = config(
        "biomarkers = a, b\nlabels = CN,AD\nlabel_merge = MCI-to-AD:AD\nvisits = 0,2,4\n"
        "outlier.a = -1,5 # trailing comment\nlearning_rate = 0.05\nmissing_strategy = forward\n"
        "impute_targets = false\nsynth.thresholds = 0.5\nsplit_seed = 9\nlda_ridge = 0.001\n");
    EXPECT_EQ(c.biomarkers, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(c.preprocess.labels.classes, (std::vector<std::string>{"CN", "AD"}));
    EXPECT_EQ(c.preprocess.labels.merge.at("MCI-to-AD"), "AD");
    EXPECT_EQ(c.preprocess.visits, (std::vector<int>{0, 2, 4}));
    EXPECT_EQ(c.preprocess.outlier_ranges.at("a"), (std::pair<double, double>{-1.0, 5.0}));
    EXPECT_EQ(c.train.hyper.learning_rate, 0.05);
    EXPECT_EQ(c.strategy, MissingStrategy::forward);
    EXPECT_FALSE(c.impute.impute_targets);
    EXPECT_EQ(c.preprocess.split_seed, 9u);
    EXPECT_EQ(*c.lda_ridge, 0.001);
}

TEST(Config, Errors) {
    EXPECT_THROW(config("learning_rte = 0.1\n"), ConfigError);
    EXPECT_THROW(config("epochs = many\n"), ConfigError);
    EXPECT_THROW(config("synth.missing_rate = 1.0\n"), ConfigError);
    EXPECT_THROW(config("momentum = 1.5\n"), ConfigError);
    EXPECT_THROW(config("just text\n"), ConfigError);
}

TEST(Pipeline, PreparedDirectoryRoundTrip) {
    TempDir dir("roundtrip");
    const auto cfg = config(kSmallConfig);
    const auto prepared = prepare(synthesize(cfg.synth), cfg);
    save_prepared((dir / "prep").string(), prepared, cfg);
    const auto loaded = load_prepared((dir / "prep").string());
    const auto direct = window_prepared(prepared, 11, cfg.preprocess.labels);
    for (Split s : {Split::train, Split::val, Split::test}) {
        const auto& a = loaded.batch(s);
        const auto& b = direct.batch(s);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t j = 0; j < static_cast<std::size_t>(a.size()); ++j) {
            EXPECT_EQ(a[j].subject_id(), b[j].subject_id());
            EXPECT_TRUE((a[j].inputs().array() == b[j].inputs().array()).all());
            EXPECT_TRUE((a[j].targets().array() == b[j].targets().array()).all());
            EXPECT_TRUE(a[j].input_mask() == b[j].input_mask());
            EXPECT_TRUE(a[j].target_mask() == b[j].target_mask());
            EXPECT_EQ(a[j].labels(), b[j].labels());
        }
    }
}

TEST(Pipeline, ZeroNetworkOnMidpointTargetsHasZeroMae) {
    // visit 0 spans [0, 10]; every later visit sits at the midpoint 5, which
    // scales to 0, exactly what a zero-parameter network predicts
    CohortTable t;
    t.biomarkers = {"a", "b"};
    for (int s = 0; s < 40; ++s)
        for (int v = 0; v < 4; ++v) {
            const double first = s % 2 == 0 ? 0.0 : 10.0;
            t.rows.push_back({"S" + std::to_string(s), v, std::nullopt, {v == 0 ? first : 5.0, v == 0 ? 10.0 - first : 5.0}, {}});
        }
    AppConfig cfg;
    cfg.preprocess.visits = {0, 1, 2, 3};
    const auto data = window_prepared(prepare(t, cfg), 4, cfg.preprocess.labels);
    const auto report = evaluate(LstmParameters::zeros(2, 2), data, MissingStrategy::masked, Split::test);
    for (const auto& v : report.mae) EXPECT_EQ(*v, 0.0);
    EXPECT_FALSE(report.multiclass_auc.has_value());
}

TEST(Cli, SynthIsDeterministicAndValidated) {
    TempDir dir("synth");
    spit(dir / "cfg.txt", kSmallConfig);
    ASSERT_EQ(run("synth --config " + (dir / "cfg.txt").string() + " --out " + (dir / "a.csv").string()), 0);
    ASSERT_EQ(run("synth --config " + (dir / "cfg.txt").string() + " --out " + (dir / "b.csv").string()), 0);
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
    ASSERT_EQ(run("synth --config " + (dir / "cfg.txt").string() + " --seed 2 --out " + (dir / "c.csv").string()), 0);
    EXPECT_NE(slurp(dir / "a.csv"), slurp(dir / "c.csv"));

    spit(dir / "bad.txt", "synth.missing_rate = 1.0\n");
    EXPECT_EQ(run("synth --config " + (dir / "bad.txt").string() + " --out " + (dir / "d.csv").string()), 2);
}

TEST(Cli, PrepareTrainEvaluate) {
    TempDir dir("flow");
    const auto cfg = (dir / "cfg.txt").string();
    spit(cfg, kSmallConfig);
    const auto raw = (dir / "raw.csv").string();
    const auto prep = (dir / "prep").string();
    ASSERT_EQ(run("synth --config " + cfg + " --out " + raw), 0);
    ASSERT_EQ(run("prepare --config " + cfg + " --in " + raw + " --out " + prep), 0);

    // split subject sets are pairwise disjoint
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const char* s : {"train", "val", "test"}) {
        const auto t = load_csv(prep + "/" + s + ".csv");
        for (const auto& id : t.subjects()) {
            seen.insert(id);
            ++total;
        }
    }
    EXPECT_EQ(seen.size(), total);

    // --epochs 0 gives the initialization
    ASSERT_EQ(run("train --config " + cfg + " --data " + prep + " --epochs 0 --out " + (dir / "m0").string()), 0);
    const auto init = load_checkpoint((dir / "m0" / "checkpoint.txt").string());
    const auto expect = init_parameters(6, 6, 1, 0.05);
    for_each_array([](std::string_view, const auto& a, const auto& b) { EXPECT_TRUE((a.array() == b.array()).all()); },
                   init.params, expect);

    // same seed and strategy twice: identical artifacts
    for (const char* m : {"m1", "m2"})
        ASSERT_EQ(run("train --config " + cfg + " --data " + prep + " --missing-strategy mean --quiet --out " +
                      (dir / m).string()),
                  0);
    EXPECT_EQ(slurp(dir / "m1" / "checkpoint.txt"), slurp(dir / "m2" / "checkpoint.txt"));
    EXPECT_EQ(slurp(dir / "m1" / "history.csv"), slurp(dir / "m2" / "history.csv"));
    EXPECT_NE(slurp(dir / "m1" / "checkpoint.txt").find("strategy mean"), std::string::npos);

    const auto eval = [&](const std::string& out) {
        return run("evaluate --config " + cfg + " --data " + prep + " --checkpoint " +
                   (dir / "m1" / "checkpoint.txt").string() + " --split test --out " + (dir / out).string());
    };
    ASSERT_EQ(eval("r1.csv"), 0);
    ASSERT_EQ(eval("r2.csv"), 0);
    const auto report = slurp(dir / "r1.csv");
    EXPECT_EQ(report, slurp(dir / "r2.csv"));
    std::istringstream lines(report);
    std::string line;
    int mae_rows = 0, auc_rows = 0;
    while (std::getline(lines, line)) {
        mae_rows += line.starts_with("mae,");
        auc_rows += line.starts_with("auc,");
    }
    EXPECT_EQ(mae_rows, 6);
    EXPECT_EQ(auc_rows, 4);  // three pairs plus the multi-class row
    EXPECT_NE(report.find("auc,CN vs MCI vs AD,"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    TempDir dir("codes");
    spit(dir / "broken.csv", "subject_id,visit,label,a\nS1,0,CN,oops\n");
    EXPECT_EQ(run("prepare --in " + (dir / "broken.csv").string() + " --out " + (dir / "p").string()), 3);
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run("gradcheck"), 0);
    EXPECT_EQ(run("gradcheck --tol 1e-15"), 5);
}
