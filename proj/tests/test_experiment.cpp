#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "brl/experiment.hpp"

using namespace brl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() { return fs::temp_directory_path() / ("brl_test_" + std::to_string(::getpid())); }

class ScratchCleanup : public ::testing::Environment {
public:
    void TearDown() override { fs::remove_all(scratch_root()); }
};

const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

fs::path scratch(const std::string& name) {
    const auto dir = scratch_root() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ExperimentConfig small_config(const fs::path& out) {
    ExperimentConfig c;
    c.env = "grid4";
    c.pairs = 60;
    c.clip_length = 10;
    c.seeds = {0, 1, 2};
    c.rm_epochs = 50;
    c.output_dir = out.string();
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t line_count(const fs::path& p) {
    const auto text = slurp(p);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

int cli(const std::string& args) {
    const std::string cmd = std::string(BRL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Hash, Fnv1aReferenceVectors) {
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Hash, ConfigHashCoversOnlyNumericInputs) {
    ExperimentConfig a;
    const auto h = config_hash(a);
    EXPECT_EQ(h.size(), 16u);
    EXPECT_EQ(config_hash(a), h);
    ExperimentConfig b = a;
    b.name = "other";
    b.seeds = {7};
    b.output_dir = "/elsewhere";
    b.jobs = 8;
    b.save_artifacts = false;
    EXPECT_EQ(config_hash(b), h);
    b.pairs = 501;
    EXPECT_NE(config_hash(b), h);
    ExperimentConfig c = a;
    c.slip = 0.2;
    EXPECT_NE(config_hash(c), h);
}

TEST(Config, Validation) {
    ExperimentConfig c;
    EXPECT_NO_THROW(c.validate());
    c.methods = {"brl", "dpo"};
    EXPECT_THROW(c.validate(), ParameterError);
    c = {};
    c.overlap_multiplier = 1;
    EXPECT_THROW(c.validate(), ParameterError);
    c = {};
    c.overlap_multiplier = 4;
    c.overlap_fraction = 0.2;
    c.labels_per_pair = 3;
    EXPECT_THROW(c.validate(), ParameterError);
    c = {};
    c.env = "maze9";
    EXPECT_THROW(make_environment(c), ParameterError);
    c.env = "garnet50x3";
    EXPECT_EQ(make_environment(c).action_count(), 3u);
    c.env = "grid3x4";
    EXPECT_EQ(make_environment(c).state_count(), 12u);
}

TEST(Summary, ScoreTextFormat) {
    SummaryRow s;
    s.score_mean = 75.931;
    s.score_std = 3.638;
    EXPECT_EQ(s.score_text(), "75.93 ± 3.64");
}

TEST(Summary, SampleStandardDeviation) {
    std::vector<ResultRow> rows;
    for (double v : {1.0, 2.0, 3.0, 4.0}) {
        ResultRow r;
        r.method = "brl";
        r.learner = "pessimistic_fqi";
        r.normalized_score = v;
        r.reward_gap = 2.0;
        rows.push_back(r);
    }
    ResultRow bad = rows[0];
    bad.error = "fit: boom";
    rows.push_back(bad);
    const auto s = summarize(rows);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].runs, 5u);
    EXPECT_EQ(s[0].failed, 1u);
    EXPECT_DOUBLE_EQ(s[0].score_mean, 2.5);
    EXPECT_NEAR(s[0].score_std, std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_EQ(s[0].gap_std, 0.0);
}

TEST(Summary, CsvQuotesErrors) {
    ResultRow r;
    r.experiment = "x";
    r.method = "brl";
    r.learner = "pessimistic_fqi";
    r.error = "label: a, b";
    const auto line = result_csv_line(r);
    EXPECT_NE(line.find("\"label: a, b\""), std::string::npos) << line;
    const std::string header = kResultsHeader;
    EXPECT_EQ(std::count(header.begin(), header.end(), ','), 10);
}

TEST(Experiment, RowsFilesAndArtifacts) {
    const auto out = scratch("rows");
    const auto cfg = small_config(out);
    const auto res = run_experiment(cfg);
    ASSERT_EQ(res.rows.size(), 9u);
    for (const auto& r : res.rows) {
        EXPECT_TRUE(r.ok()) << r.error;
        EXPECT_EQ(r.dataset_size, 60u);
        EXPECT_EQ(r.config_hash, config_hash(cfg));
        EXPECT_EQ(std::isnan(r.reward_gap), r.method == "oracle");
    }
    EXPECT_EQ(line_count(out / "results.csv"), 10u);
    EXPECT_EQ(line_count(out / "timings.csv"), 10u);
    EXPECT_EQ(line_count(out / "summary.csv"), 4u);
    EXPECT_TRUE(fs::exists(out / "config.json"));
    EXPECT_TRUE(fs::exists(out / "artifacts" / "dataset_seed2.jsonl"));
    EXPECT_TRUE(fs::exists(out / "artifacts" / "labels_brl_seed0.jsonl"));
    EXPECT_TRUE(fs::exists(out / "artifacts" / "policy_rm_pessimistic_fqi_seed1.json"));
    EXPECT_EQ(load_dataset((out / "artifacts" / "dataset_seed1.jsonl").string()),
              generate_for_seed(cfg, make_environment(cfg), make_behavior(make_environment(cfg), cfg.behavior), 1));
}

TEST(Experiment, ByteReproducibleAcrossRunsAndJobCounts) {
    const auto a = scratch("rep_a"), b = scratch("rep_b");
    auto cfg = small_config(a);
    run_experiment(cfg);
    cfg.output_dir = b.string();
    cfg.jobs = 3;
    run_experiment(cfg);
    for (const char* f : {"results.csv", "summary.csv", "artifacts/dataset_seed0.jsonl",
                          "artifacts/labels_rm_seed2.jsonl", "artifacts/policy_brl_pessimistic_fqi_seed1.json"})
        EXPECT_EQ(file_hash(a / f), file_hash(b / f)) << f;
}

TEST(Experiment, FailedRunIsRecorded) {
    const auto out = scratch("fail");
    auto cfg = small_config(out);
    cfg.labels_per_pair = 3;
    cfg.methods = {"oracle", "brl", "multilabel"};
    const auto res = run_experiment(cfg);
    for (const auto& r : res.rows) {
        if (r.method == "brl") {
            EXPECT_EQ(r.error.rfind("label: ", 0), 0u) << r.error;
            EXPECT_TRUE(std::isnan(r.normalized_score));
        } else {
            EXPECT_TRUE(r.ok()) << r.error;
        }
    }
    const auto s = summarize(res.rows);
    EXPECT_EQ(s[1].method, "brl");
    EXPECT_EQ(s[1].failed, 3u);
    EXPECT_EQ(s[1].score_text(), "");
}

TEST(Experiment, DataFailureRecordedForEveryMethod) {
    auto cfg = small_config(scratch("datafail"));
    cfg.overlap_fraction = 0.5;
    cfg.overlap_multiplier = 4;
    cfg.pairs = 10;
    const auto res = run_experiment(cfg, {1.0}, false);
    ASSERT_EQ(res.rows.size(), 9u);
    for (const auto& r : res.rows) EXPECT_EQ(r.error.rfind("data: ", 0), 0u) << r.error;
}

TEST(Experiment, FullFractionReproducesRun) {
    auto cfg = small_config(scratch("frac"));
    const auto plain = run_experiment(cfg, {1.0}, false);
    const auto ladder = run_experiment(cfg, {0.5, 1.0}, false);
    std::vector<std::string> a, b;
    for (const auto& r : plain.rows) a.push_back(result_csv_line(r));
    for (const auto& r : ladder.rows)
        if (r.fraction == 1.0) b.push_back(result_csv_line(r));
    EXPECT_EQ(a, b);
    for (const auto& r : ladder.rows)
        if (r.fraction == 0.5) EXPECT_EQ(r.dataset_size, 30u);
}

TEST(Experiment, PreferenceLearnerRowsOnlyForPairMethods) {
    auto cfg = small_config(scratch("pb"));
    cfg.methods = {"oracle", "brl", "rm"};
    cfg.learners = {"pessimistic_fqi", "preference_bellman"};
    cfg.seeds = {0};
    cfg.pb_iterations = 20;
    const auto res = run_experiment(cfg, {1.0}, false);
    std::size_t pb = 0;
    for (const auto& r : res.rows)
        if (r.learner == "preference_bellman") {
            ++pb;
            EXPECT_NE(r.method, "rm");
            EXPECT_TRUE(r.ok()) << r.error;
        }
    EXPECT_EQ(pb, 2u);
}

TEST(Experiment, MoreDataHelpsBinaryLabels) {
    ExperimentConfig cfg;
    cfg.methods = {"brl"};
    cfg.jobs = 5;
    cfg.output_dir = scratch("ladder").string();
    const auto res = run_experiment(cfg, {0.1, 1.0}, false);
    EXPECT_GE(mean_score(res.rows, "brl", "pessimistic_fqi", 1.0),
              mean_score(res.rows, "brl", "pessimistic_fqi", 0.1));
}

TEST(Experiment, OverlapStatistics) {
    const Mdp mdp = make_garnet(20000, 4, 3, 0);
    const auto ds =
        generate_overlap_dataset(mdp, make_behavior(mdp, "random"), 200, 0.2, 4, 20, LinkFunction::make_sigmoid(), 0);
    const auto s = overlap_stats(ds);
    EXPECT_EQ(s.pairs, 200u);
    EXPECT_EQ(s.reused_clips, 40u);
    EXPECT_EQ(s.pairs_with_reused_clip, 160u);
    EXPECT_EQ(s.clips, 40u + 160u + 2u * 40u);
}

TEST(Cli, BadFlagFails) { EXPECT_NE(cli("run --no-such-flag"), 0); }

TEST(Cli, UnknownMethodFails) {
    EXPECT_EQ(cli("run --methods brl,dpo --out " + scratch("cli_bad").string()), 1);
}

TEST(Cli, HelpSucceeds) { EXPECT_EQ(cli("--help"), 0); }

TEST(Cli, VerifySucceeds) {
    const auto out = scratch("cli_verify");
    EXPECT_EQ(cli("verify --instances 10 --output-dir " + out.string()), 0);
    EXPECT_TRUE(fs::exists(out / "verify_report.json"));
    const auto report = nlohmann::json::parse(slurp(out / "verify_report.json"));
    EXPECT_TRUE(report.at("all_as_expected").get<bool>());
}

TEST(Cli, VerifyWithNegativeControlsSucceeds) {
    EXPECT_EQ(cli("verify --instances 10 --negative-controls --output-dir " + scratch("cli_ctrl").string()), 0);
}

TEST(Cli, GenDataWritesHeaderAndPairs) {
    const auto out = scratch("cli_gen");
    const auto path = out / "d.jsonl";
    ASSERT_EQ(cli("gen-data --env grid5 --pairs 500 --seed 3 --out " + path.string()), 0);
    EXPECT_EQ(line_count(path), 501u);
    const auto again = out / "e.jsonl";
    ASSERT_EQ(cli("gen-data --env grid5 --pairs 500 --seed 3 --out " + again.string()), 0);
    EXPECT_EQ(slurp(path), slurp(again));
}

TEST(Cli, ConfigFileWithFlagOverride) {
    const auto out = scratch("cli_cfg");
    std::ofstream(out / "exp.toml") << "env = \"grid4\"\npairs = 40\nclip_length = 10\nseeds = [0]\n"
                                       "methods = [\"brl\"]\n";
    ASSERT_EQ(cli("run --config " + (out / "exp.toml").string() + " --pairs 25 --no-artifacts --out " +
                  (out / "res").string()),
              0);
    const auto text = slurp(out / "res" / "results.csv");
    EXPECT_NE(text.find(",brl,pessimistic_fqi,0,1.0000,25,"), std::string::npos) << text;
}
