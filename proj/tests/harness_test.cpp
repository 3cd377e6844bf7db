#include "poolnas/error.hpp"
#include "poolnas/experiment.hpp"
#include "poolnas/harness.hpp"
#include "poolnas/records.hpp"
#include "poolnas/rng.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace poolnas {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               (std::string("poolnas_harness_") +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    fs::path dir_;
};

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAreValid) { EXPECT_NO_THROW(ExperimentConfig{}.validate()); }

TEST(Config, JsonRoundTrip) {
    ExperimentConfig cfg;
    cfg.method = Method::mcts_warmup;
    cfg.num_models = 1;
    cfg.channels = {8, 8, 8, 8, 16, 16, 16, 32, 32, 32};
    cfg.seed = 0xdeadbeefcafeULL;
    cfg.lambda = 0.125;
    cfg.output = "out/x";
    EXPECT_EQ(ExperimentConfig::from_json(cfg.to_json()), cfg);
    EXPECT_EQ(cfg.to_json()["method"], "mcts-warmup");
}

TEST(Config, UnknownKeysAreRejected) {
    EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json{{"iterationz", 5}}), ValidationError);
    EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::array()), ValidationError);
}

TEST(Config, AbsentKeysKeepBase) {
    ExperimentConfig base;
    base.iterations = 123;
    const auto cfg = ExperimentConfig::from_json(nlohmann::json{{"seed", 9}}, base);
    EXPECT_EQ(cfg.iterations, 123);
    EXPECT_EQ(cfg.seed, 9u);
}

TEST(Config, ValidationNamesField) {
    auto expect_field = [](ExperimentConfig cfg, const std::string& field) {
        try {
            cfg.validate();
            ADD_FAILURE() << "expected ValidationError for " << field;
        } catch (const ValidationError& e) {
            EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
        }
    };
    ExperimentConfig c;
    c.beta = 1.5;
    expect_field(c, "beta");
    c = {};
    c.method = Method::spos;
    expect_field(c, "num_models");
    c = {};
    c.batch_size = 4;
    expect_field(c, "batch_size");
    c = {};
    c.channels = {8, 8};
    expect_field(c, "channels");
    c = {};
    c.iterations = 0;
    expect_field(c, "iterations");
}

TEST_F(TempDir, ConfigFileLoads) {
    const auto path = dir_ / "c.json";
    std::ofstream(path) << R"({"method": "bse", "num_models": 1, "seed": 4})";
    const auto cfg = load_experiment_config(path.string());
    EXPECT_EQ(cfg.method, Method::bse);
    EXPECT_EQ(cfg.seed, 4u);
    std::ofstream(dir_ / "bad.json") << "{\"seed\": ";
    EXPECT_THROW(load_experiment_config((dir_ / "bad.json").string()), ParseError);
}

// ---------------------------------------------------------------- records

std::vector<RunRecord> random_records(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<RunRecord> out;
    const auto configs = enumerate_configs(resnet20_space());
    for (std::size_t i = 0; i < n; ++i) {
        RunRecord r;
        r.step = static_cast<std::int64_t>(i);
        r.config = configs[rng.uniform_index(configs.size())].to_string();
        r.model = static_cast<int>(rng.uniform_index(4));
        r.accuracy = rng.uniform();
        if (i % 2) r.tau = rng.uniform() * 1e-3;
        if (i % 3) r.loss = 1.0 / (1.0 + rng.uniform());
        if (i % 5) r.entropy = rng.uniform();
        r.wall_clock = rng.uniform() * 100.0;
        out.push_back(r);
    }
    return out;
}

TEST_F(TempDir, ThousandRecordsRoundTrip) {
    const auto records = random_records(1000, 1);
    write_records(records, dir_ / "r.jsonl");
    EXPECT_EQ(read_records(dir_ / "r.jsonl"), records);
}

TEST_F(TempDir, CorruptLineReportsLineNumber) {
    write_records(random_records(50, 2), dir_ / "r.jsonl");
    std::string text = slurp(dir_ / "r.jsonl");
    std::size_t pos = 0;
    for (int line = 1; line < 37; ++line) pos = text.find('\n', pos) + 1;
    text.insert(pos, "{not json");
    std::ofstream(dir_ / "r.jsonl", std::ios::binary) << text;
    try {
        read_records(dir_ / "r.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.position(), 37u);
    }
}

TEST_F(TempDir, StepsMustIncrease) {
    auto records = random_records(3, 3);
    records[2].step = 1;
    write_records(records, dir_ / "r.jsonl");
    EXPECT_THROW(read_records(dir_ / "r.jsonl"), ValidationError);
}

TEST_F(TempDir, ResultsRoundTripAndStayApart) {
    const auto a = random_records(20, 4), b = random_records(30, 5);
    const nlohmann::json ra = {{"x", 1}}, rb = {{"y", 2.5}};
    persist_results(a, ra, dir_ / "a");
    persist_results(b, rb, dir_ / "b");
    const auto la = load_results(dir_ / "a"), lb = load_results(dir_ / "b");
    EXPECT_EQ(la.records, a);
    EXPECT_EQ(la.report, ra);
    EXPECT_EQ(lb.records, b);
    EXPECT_EQ(lb.report, rb);
}

TEST_F(TempDir, MissingResultsNamePath) {
    try {
        load_results(dir_ / "nowhere");
        FAIL() << "expected an error";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("nowhere"), std::string::npos) << e.what();
    }
}

// ---------------------------------------------------------------- runs

ExperimentConfig surrogate_config(Method method, int models, std::int64_t iterations) {
    ExperimentConfig cfg;
    cfg.method = method;
    cfg.num_models = models;
    cfg.iterations = iterations;
    cfg.seed = 11;
    return cfg;
}

TEST_F(TempDir, ReportsAreByteIdenticalAcrossRuns) {
    auto cfg = surrogate_config(Method::balanced, 4, 4000);
    cfg.output = (dir_ / "one").string();
    run_search(cfg);
    cfg.output = (dir_ / "two").string();
    run_search(cfg);
    const auto one = slurp(dir_ / "one" / "report.json");
    EXPECT_FALSE(one.empty());
    EXPECT_EQ(one, slurp(dir_ / "two" / "report.json"));
    const auto stored = load_results(dir_ / "one");
    EXPECT_EQ(stored.records.size(), 4000u);
}

TEST(Runs, NoiseFreeBruteforceFollowsTableOrder) {
    auto cfg = surrogate_config(Method::bruteforce, 1, 36 * 50);
    cfg.lambda = 0.0;
    cfg.sigma = 0.0;
    const auto table = load_table_for(cfg);
    const auto outcome = run_search(cfg);
    const auto configs = enumerate_configs(cfg.space());
    std::vector<std::size_t> order(configs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return table.at(a).mean_centi_pct > table.at(b).mean_centi_pct;
    });
    const auto& ranking = outcome.report["ranking_full"];
    ASSERT_EQ(ranking.size(), configs.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        EXPECT_EQ(table.at(PoolingConfig::parse(ranking[i]["config"].get<std::string>()))
                      .mean_centi_pct,
                  table.at(order[i]).mean_centi_pct)
            << "rank " << i + 1;
    EXPECT_EQ(outcome.report["top_k"][0], "[7,1,2]");
    EXPECT_DOUBLE_EQ(outcome.report["kendall_tau"]["full"].get<double>(), 1.0);
}

TEST(Runs, EveryRecordedConfigIsValid) {
    const SearchSpace space = resnet20_space();
    for (Method m : {Method::balanced, Method::spos, Method::bse, Method::mcts,
                     Method::mcts_warmup, Method::bruteforce}) {
        const int models = m == Method::balanced ? 2 : 1;
        const auto outcome = run_search(surrogate_config(m, models, 720));
        ASSERT_FALSE(outcome.records.empty()) << to_string(m);
        for (const auto& r : outcome.records)
            EXPECT_TRUE(validate_config(PoolingConfig::parse(r.config), space).empty())
                << to_string(m) << " " << r.config;
        EXPECT_TRUE(outcome.report.contains("kendall_tau")) << to_string(m);
    }
}

TEST(Runs, BalancedEntropyFallsOverTrailingSegment) {
    // Smoothing: the trailing 20 % of records split into four equal blocks.
    const auto outcome = run_search(surrogate_config(Method::balanced, 4, 20000));
    const auto& records = outcome.records;
    const std::size_t start = records.size() * 4 / 5, block = (records.size() - start) / 4;
    std::vector<double> means;
    for (std::size_t b = 0; b < 4; ++b) {
        double sum = 0.0;
        for (std::size_t i = start + b * block; i < start + (b + 1) * block; ++i) {
            ASSERT_TRUE(records[i].entropy.has_value());
            sum += *records[i].entropy;
        }
        means.push_back(sum / static_cast<double>(block));
    }
    for (std::size_t b = 1; b < means.size(); ++b) EXPECT_LE(means[b], means[b - 1]) << b;
    EXPECT_LT(means.back(), means.front());
    EXPECT_FALSE(outcome.report["entropy_trajectory"].empty());
}

TEST(Report, UnvisitedConfigsRankLast) {
    const SearchSpace space = resnet20_space();
    const auto configs = enumerate_configs(space);
    std::vector<RunRecord> records;
    for (std::size_t c = 1; c < configs.size(); ++c)
        records.push_back({static_cast<std::int64_t>(c), configs[c].to_string(), 0, 0.1,
                           std::nullopt, std::nullopt, std::nullopt, 0.0});
    RankInputs in(space);
    const auto report = rank_and_report(records, in);
    const auto& ranking = report["ranking_proxy"];
    ASSERT_EQ(ranking.size(), configs.size());
    EXPECT_EQ(ranking.back()["config"], configs[0].to_string());
    EXPECT_TRUE(ranking.back().value("unvisited", false));
    for (std::size_t i = 0; i + 1 < ranking.size(); ++i)
        EXPECT_FALSE(ranking[i].contains("unvisited"));
    EXPECT_FALSE(report.contains("kendall_tau"));
}

TEST(Report, TableAddsKendallTau) {
    const SearchSpace space = resnet20_space();
    const auto configs = enumerate_configs(space);
    ExperimentConfig cfg;
    const auto table = load_table_for(cfg);
    std::vector<RunRecord> records;
    for (std::size_t c = 0; c < configs.size(); ++c)
        records.push_back({static_cast<std::int64_t>(c), configs[c].to_string(), 0,
                           table.at(c).mean(), std::nullopt, std::nullopt, std::nullopt, 0.0});
    RankInputs in(space);
    in.beta = 0.0;
    const auto report = rank_and_report(records, in, &table);
    EXPECT_DOUBLE_EQ(report["kendall_tau"]["proxy"].get<double>(), 1.0);
    EXPECT_EQ(report["true_best"], "[7,1,2]");
    EXPECT_EQ(report["ranking_proxy"][0]["config"], "[7,1,2]");
}

class FailingEvaluator : public Evaluator {
public:
    std::size_t num_configs() const override { return 36; }
    std::size_t num_models() const override { return 1; }
    StepOutcome train_step(std::size_t c, std::size_t m) override {
        if (++calls_ > 5) throw EvaluationError("backend exploded", c, m);
        return {0.5, std::nullopt};
    }
    double validate(std::size_t, std::size_t) override { return 0.5; }

private:
    int calls_ = 0;
};

TEST(Runs, FailureAbortsWithStepAfterFlushingRecords) {
    auto cfg = surrogate_config(Method::spos, 1, 100);
    std::vector<RunRecord> sunk;
    try {
        run_search_with(
            cfg, [](std::size_t, std::uint64_t) { return std::make_unique<FailingEvaluator>(); },
            nullptr, [&](const RunRecord& r) { sunk.push_back(r); });
        FAIL() << "expected RunAborted";
    } catch (const RunAborted& e) {
        EXPECT_EQ(e.step(), 5);
        EXPECT_NE(std::string(e.what()).find("backend exploded"), std::string::npos);
    }
    ASSERT_EQ(sunk.size(), 5u);
    EXPECT_EQ(sunk.back().step, 4);
}

TEST(Runs, DataDirectoryFollowsEnvironment) {
    const std::string built = data_dir();
    EXPECT_TRUE(fs::exists(fs::path(built) / "resnet20_cifar10.tsv"));
    ::setenv("POOLNAS_DATA_DIR", "/tmp/elsewhere", 1);
    EXPECT_EQ(data_dir(), "/tmp/elsewhere");
    ::unsetenv("POOLNAS_DATA_DIR");
    EXPECT_EQ(data_dir(), built);
}

}  // namespace
}  // namespace poolnas
