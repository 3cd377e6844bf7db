#include "cli.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace poolnas::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
    int code;
    std::string out, err;
};

Result invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t lines(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

class CliDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               (std::string("poolnas_cli_") +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override {
        ::unsetenv(kOutputEnv);
        fs::remove_all(dir_);
    }

    fs::path write_config(const std::string& text) {
        const auto p = dir_ / "cfg.json";
        std::ofstream(p) << text;
        return p;
    }

    fs::path dir_;
};

TEST(Cli, EnumerateDefaultSpaceCount) {
    const auto r = invoke({"enumerate", "--count"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "36\n");
}

TEST(Cli, EnumerateListsEveryConfigOnce) {
    const auto r = invoke({"enumerate", "--total-blocks", "6", "--num_poolings", "2",
                           "--input-size", "16"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(lines(r.out), 10u);
    EXPECT_EQ(r.out.substr(0, 8), "[4,1,1]\n");
}

TEST_F(CliDir, FlagsOverrideConfigFile) {
    const auto cfg = write_config(R"({"total_blocks": 6, "num_poolings": 2, "input_size": 16})");
    EXPECT_EQ(invoke({"enumerate", "--config", cfg.string(), "--count"}).out, "10\n");
    EXPECT_EQ(invoke({"enumerate", "--config", cfg.string(), "--total_blocks", "7", "--count"}).out,
              "15\n");
}

TEST_F(CliDir, BadValuesNameTheFlag) {
    const auto r = invoke({"enumerate", "--total-blocks", "six", "--count"});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("total_blocks"), std::string::npos) << r.err;
    const auto bad = invoke({"enumerate", "--num_poolings", "0", "--count"});
    EXPECT_NE(bad.code, 0);
    EXPECT_NE(bad.err.find("num_poolings"), std::string::npos) << bad.err;
}

TEST(Cli, UnknownSubcommandFails) {
    EXPECT_NE(invoke({"frobnicate"}).code, 0);
    EXPECT_NE(invoke({}).code, 0);
}

TEST_F(CliDir, EnvironmentSetsDefaultOutput) {
    const auto target = dir_ / "from_env";
    ::setenv(kOutputEnv, target.c_str(), 1);
    const auto r = invoke({"search", "--iterations", "300", "--seed", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(target / "report.json"));
    EXPECT_TRUE(fs::exists(target / "records.jsonl"));

    // An explicit flag beats the environment, and so does a config file.
    const auto flag = dir_ / "from_flag";
    ASSERT_EQ(invoke({"search", "--iterations", "300", "--output", flag.string()}).code, 0);
    EXPECT_TRUE(fs::exists(flag / "report.json"));
    const auto file = dir_ / "from_file";
    const auto cfg = write_config(R"({"iterations": 300, "output": ")" + file.string() + R"("})");
    ASSERT_EQ(invoke({"search", "--config", cfg.string()}).code, 0);
    EXPECT_TRUE(fs::exists(file / "report.json"));
}

TEST_F(CliDir, RankReproducesStoredReport) {
    for (const std::string method : {"balanced", "spos", "mcts"}) {
        const auto out = dir_ / method;
        const std::string m = method == "balanced" ? "4" : "1";
        ASSERT_EQ(invoke({"search", "--method", method, "--num-models", m, "--iterations", "800",
                          "--output", out.string()})
                      .code,
                  0);
        const auto r = invoke({"rank", "--results", out.string()});
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_EQ(r.out, slurp(out / "report.json")) << method;
    }
}

TEST_F(CliDir, CorrelateAveragesRuns) {
    const auto a = dir_ / "a", b = dir_ / "b";
    ASSERT_EQ(invoke({"search", "--iterations", "400", "--seed", "1", "--output", a.string()}).code, 0);
    ASSERT_EQ(invoke({"search", "--iterations", "400", "--seed", "2", "--output", b.string()}).code, 0);
    const auto r = invoke({"correlate", "--results", a.string(), b.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(r.out), 4u);
    EXPECT_NE(r.out.find("mean\t"), std::string::npos);
}

TEST(Cli, GradcheckDefaultNetworkPasses) {
    const auto r = invoke({"gradcheck", "--coordinates", "60"});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, GradcheckRejectsLargeNetworks) {
    const auto r = invoke({"gradcheck", "--channels", "64,64,64"});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("10000"), std::string::npos) << r.err;
}

TEST(Cli, MissingResultsDirectoryIsReported) {
    const auto r = invoke({"rank", "--results", "/nonexistent/run"});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("/nonexistent/run"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace poolnas::cli
