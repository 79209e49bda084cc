#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "commands.hpp"
#include "mutan/checkpoint.hpp"
#include "mutan/synthdata.hpp"
#include "test_support.hpp"

namespace mutan::cli {
namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> tsv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, '\t')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(Cli, Table1Preset) {
    const auto r = invoke({"params", "--table1"});
    ASSERT_EQ(r.code, exit_ok);
    const auto rows = tsv(r.out);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"model", "params", "millions", "published_millions", "status"}));
    EXPECT_EQ(rows[1], (std::vector<std::string>{"Concat", "8896000", "8.9", "8.9", "match"}));
    EXPECT_EQ(rows[2], (std::vector<std::string>{"MCB", "32000000", "32.0", "32.0", "match"}));
    EXPECT_EQ(rows[3], (std::vector<std::string>{"MLB", "7737600", "7.7", "7.7", "match"}));
    EXPECT_EQ(rows[4], (std::vector<std::string>{"MUTAN_noR", "5127680", "5.1", "4.9", "mismatch"}));
    EXPECT_EQ(rows[5][0], "MUTAN");
    EXPECT_EQ(rows[5][2], "4.9");
    EXPECT_NE(r.err.find("# command=params"), std::string::npos);
}

TEST(Cli, SingleSchemeCount) {
    const auto r = invoke({"params", "--scheme", "mutan", "--dq", "8", "--dv", "8", "--answers", "4", "--t", "3",
                           "--rank", "2"});
    ASSERT_EQ(r.code, exit_ok);
    EXPECT_EQ(tsv(r.out).at(1).at(1), std::to_string(param_count(mutan_config(8, 8, 4, 3, 2))));
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(invoke({}).code, exit_usage);
    EXPECT_EQ(invoke({"params", "--unknown"}).code, exit_usage);
    EXPECT_EQ(invoke({"params", "-t", "3"}).code, exit_usage);
    EXPECT_EQ(invoke({"params", "--scheme", "nope"}).code, exit_usage);
    EXPECT_EQ(invoke({"check", "--suite", "nope"}).code, exit_usage);
    EXPECT_EQ(invoke({"check", "--threads", "0"}).code, exit_usage);
    EXPECT_EQ(invoke({"bogus"}).code, exit_usage);
    EXPECT_EQ(invoke({"params", "--help"}).code, exit_ok);
}

TEST(Cli, MissingFilesAreIoErrors) {
    mutan::testing::TempDir dir;
    EXPECT_EQ(invoke({"train", "--task", (dir / "absent").string()}).code, exit_io);
    EXPECT_EQ(invoke({"ablate", "--checkpoint", (dir / "a").string(), "--task", (dir / "b").string()}).code, exit_io);
}

TEST(Cli, CheckSuitesPassOnCleanBuild) {
    for (const char* suite : {"equiv", "grad", "sketch", "ablate-linearity"}) {
        const auto r = invoke({"check", "--suite", suite, "--threads", "3"});
        EXPECT_EQ(r.code, exit_ok) << suite << "\n" << r.out;
        const auto rows = tsv(r.out);
        ASSERT_GT(rows.size(), 1u);
        for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i].back(), "pass");
    }
}

TEST(Cli, EquivCoversSixSchemesThreeSeeds) {
    const auto rows = tsv(invoke({"check", "--suite", "equiv"}).out);
    EXPECT_EQ(rows.size(), 1u + 6u * 3u);
}

TEST(Cli, InjectedFaultFailsGradSuite) {
    const auto r = invoke({"check", "--suite", "grad", "--inject-fault"});
    EXPECT_EQ(r.code, exit_tolerance);
    EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, ThreadCountDoesNotChangeReport) {
    EXPECT_EQ(invoke({"check", "--suite", "grad", "--threads", "1"}).out,
              invoke({"check", "--suite", "grad", "--threads", "4"}).out);
}

TEST(Cli, SeedFromEnvironment) {
    ::setenv("MUTAN_SEED", "99", 1);
    const auto r = invoke({"check", "--suite", "sketch"});
    ::setenv("MUTAN_SEED", "oops", 1);
    const auto bad = invoke({"check", "--suite", "sketch"});
    ::unsetenv("MUTAN_SEED");
    EXPECT_NE(r.err.find("# seed=99"), std::string::npos);
    EXPECT_EQ(tsv(r.out).at(1).at(2), "99");
    EXPECT_EQ(bad.code, exit_usage);
    EXPECT_NE(invoke({"check", "--suite", "sketch", "--seed", "5"}).err.find("# seed=5"), std::string::npos);
}

class CliWorkflow : public ::testing::Test {
protected:
    mutan::testing::TempDir dir;

    std::string gen(const std::string& name, std::vector<std::string> extra = {}) {
        std::map<std::string, std::string> flags{{"--seed", "7"}, {"--examples", "400"}, {"--val-examples", "100"}};
        for (std::size_t i = 0; i + 1 < extra.size(); i += 2) flags[extra[i]] = extra[i + 1];
        std::vector<std::string> args{"gen", "--out", (dir / name).string()};
        for (const auto& [k, v] : flags) args.insert(args.end(), {k, v});
        const auto r = invoke(args);
        EXPECT_EQ(r.code, exit_ok) << r.err;
        return (dir / name).string();
    }
};

TEST_F(CliWorkflow, GenVerifyAndDeterminism) {
    const auto r = invoke({"gen", "--out", (dir / "a").string(), "--seed", "3", "--verify"});
    ASSERT_EQ(r.code, exit_ok);
    const auto rows = tsv(r.out);
    EXPECT_EQ(rows.at(3), (std::vector<std::string>{"round_trip", "1", "pass"}));
    EXPECT_EQ(rows.at(4), (std::vector<std::string>{"oracle_vqa_accuracy", "1", "pass"}));
    invoke({"gen", "--out", (dir / "b").string(), "--seed", "3"});
    EXPECT_EQ(slurp(dir / "a.blob"), slurp(dir / "b.blob"));
    EXPECT_EQ(read_dataset(dir / "a"), read_dataset(dir / "b"));
    EXPECT_EQ(invoke({"gen", "--out", (dir / "c").string(), "--answers", "0"}).code, exit_usage);
}

TEST_F(CliWorkflow, TrainIsDeterministicAndReachesTarget) {
    const auto task = gen("task", {"--examples", "2000", "--val-examples", "500", "--answers", "4"});
    std::vector<std::string> args{"train", "--task", task, "--t", "3", "--rank", "2", "--epochs", "20", "--lr", "1e-2",
                                  "--batch", "32", "--no-timing", "--min-val-acc", "0.9"};
    auto a = args, b = args;
    a.insert(a.end(), {"--out", (dir / "m1").string()});
    b.insert(b.end(), {"--out", (dir / "m2").string()});
    const auto r1 = invoke(a), r2 = invoke(b);
    EXPECT_EQ(r1.code, exit_ok) << r1.err;
    EXPECT_EQ(r1.out, r2.out);
    EXPECT_EQ(tsv(r1.out).at(0), (std::vector<std::string>{"epoch", "train_loss", "train_acc", "val_acc", "wall_ms"}));
    EXPECT_EQ(tsv(r1.out).size(), 22u);
    EXPECT_EQ(load_checkpoint(dir / "m1").params(), load_checkpoint(dir / "m2").params());
}

TEST_F(CliWorkflow, ZeroEpochCheckpointEqualsInit) {
    const auto task = gen("task");
    const auto r = invoke({"train", "--task", task, "--epochs", "0", "--seed", "4", "--out", (dir / "m").string()});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    const VqaModel init{FusionOperator(mutan_config(8, 8, 4, 3, 2, 4))};
    EXPECT_EQ(load_checkpoint(dir / "m").params(), init.params());
}

TEST_F(CliWorkflow, MinValAccuracyBreachIsToleranceFailure) {
    const auto task = gen("task");
    EXPECT_EQ(invoke({"train", "--task", task, "--epochs", "1", "--min-val-acc", "1.01", "--out",
                      (dir / "m").string()})
                  .code,
              exit_tolerance);
}

TEST_F(CliWorkflow, AblateRowsAndConsistency) {
    const auto task = gen("task");
    invoke({"train", "--task", task, "--rank", "3", "--epochs", "2", "--lr", "1e-2", "--out", (dir / "m3").string()});
    const auto r = invoke({"ablate", "--checkpoint", (dir / "m3").string(), "--task", task});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    EXPECT_EQ(tsv(r.out).size(), 4u);
    EXPECT_NE(r.err.find("rank_sum_status=pass"), std::string::npos);

    invoke({"train", "--task", task, "--rank", "1", "--epochs", "2", "--lr", "1e-2", "--out", (dir / "m1").string()});
    const auto one = tsv(invoke({"ablate", "--checkpoint", (dir / "m1").string(), "--task", task}).out);
    ASSERT_EQ(one.size(), 2u);
    EXPECT_EQ(one[1][1], one[1][2]);

    invoke({"train", "--task", task, "--scheme", "MLB", "--epochs", "1", "--out", (dir / "mlb").string()});
    EXPECT_EQ(invoke({"ablate", "--checkpoint", (dir / "mlb").string(), "--task", task}).code, exit_usage);
}

TEST_F(CliWorkflow, AblateExportsAttentionMaps) {
    const auto task = gen("att", {"--regions", "3"});
    invoke({"train", "--task", task, "--glimpses", "2", "--epochs", "1", "--out", (dir / "m").string()});
    const auto maps = dir / "maps";
    const auto r = invoke({"ablate", "--checkpoint", (dir / "m").string(), "--task", task, "--out-dir",
                           maps.string(), "--maps", "2"});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    for (const char* f : {"attention_e0_full.csv", "attention_e0_r1.csv", "attention_e1_r2.csv"})
        EXPECT_TRUE(std::filesystem::exists(maps / f)) << f;
    const auto rows = tsv(slurp(maps / "attention_e0_r1.csv"));
    EXPECT_EQ(rows.size(), 2u);  // glimpses
    EXPECT_EQ(invoke({"train", "--task", task, "--glimpses", "0", "--out", (dir / "x").string()}).code, exit_usage);
}

TEST_F(CliWorkflow, SweepParamColumnMatchesParams) {
    const auto task = gen("task");
    const auto r = invoke({"sweep", "--vary", "t", "--range", "2:4:2", "--task", task, "--epochs", "1", "--threads",
                           "2"});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    const auto rows = tsv(r.out);
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"series", "setting", "params", "val_acc"}));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const std::string scheme = rows[i][0] == "learned_core" ? "TuckerFusion" : "MLB";
        const auto p = invoke({"params", "--scheme", scheme, "--dq", "8", "--dv", "8", "--answers", "4", "--t",
                               rows[i][1]});
        EXPECT_EQ(tsv(p.out).at(1).at(1), rows[i][2]) << scheme << " t=" << rows[i][1];
    }
    const auto to = tsv(invoke({"sweep", "--vary", "to", "--range", "2:8:2", "--t", "6", "--task", task, "--epochs",
                                "1"})
                            .out);
    ASSERT_EQ(to.size(), 1u + 4u * 3u);
    EXPECT_EQ(invoke({"sweep", "--vary", "t", "--range", "4:2:1", "--task", task}).code, exit_usage);
    EXPECT_EQ(invoke({"sweep", "--vary", "t", "--range", "2:4:0", "--task", task}).code, exit_usage);
    EXPECT_EQ(invoke({"sweep", "--vary", "x", "--range", "2:4:1", "--task", task}).code, exit_usage);
}

}  // namespace
}  // namespace mutan::cli
