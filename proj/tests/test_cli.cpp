// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "modmerge/checkpoint.hpp"
#include "modmerge/commands.hpp"

using namespace modmerge;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kTiny = R"({
  "seed": 3,
  "query": {"lighting": "good", "viewpoint": "medium", "occupancy": "low",
            "location": "indoor", "motion": "static"},
  "paths": {"base": "base.ckpt", "inventory": "modules", "data": "data", "output": "out"},
  "bootstrap": {"lr": 0.1, "iterations": 30},
  "training": {"iterations": 8},
  "data": {"length": 2},
  "eval": {"length": 3, "scenarios": 2}
})";

class TinyRun : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = fs::temp_directory_path() / "modmerge_cli_test";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        config_ = parse_run_config(kTiny, dir_);
        cmd::init_base(config_);
        cmd::gen_data(config_);
        cmd::train_all(config_);
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }

    static inline fs::path dir_;
    static inline RunConfig config_;
};

}  // namespace

TEST(RunConfig, DefaultsAndPaths)
{
    const RunConfig c = parse_run_config(kTiny, "/tmp/x");
    EXPECT_EQ(c.experiment.seed, 3u);
    EXPECT_EQ(c.paths.base, fs::path("/tmp/x/base.ckpt"));
    EXPECT_EQ(c.experiment.training.iterations, 8u);
    EXPECT_EQ(c.experiment.training.lora_lr, default_experiment().training.lora_lr);
    EXPECT_EQ(c.effective_rho(Strategy::Weighted), 0.8);
    EXPECT_EQ(c.effective_rho(Strategy::Mean), 1.0);
}

TEST(RunConfig, RejectsUnknownKeysAtEveryLevel)
{
    EXPECT_THROW(parse_run_config(R"({"sed": 1})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"paths": {"bse": "x"}})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"training": {"lr": 1}})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"eval": {"lenght": 1}})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"schema": [{"name": "a", "values": ["x"], "extra": 1}]})", "."), ConfigError);
}

TEST(RunConfig, RejectsBadValues)
{
    EXPECT_THROW(parse_run_config("{", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"seed": -1})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"rho": 0})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"strategy": "max"})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"query": {"lighting": "dim"}})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"training": {"accumulation": 0}})", "."), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"training": {"iterations": "many"}})", "."), ConfigError);
    EXPECT_THROW(load_run_config("/nonexistent/run.json"), DataError);
}

TEST(RunConfig, QueryOverrides)
{
    auto q = apply_query_overrides({{"a", "x"}}, {"a=y", "b=z"});
    EXPECT_EQ(q.at("a"), "y");
    EXPECT_EQ(q.at("b"), "z");
    EXPECT_THROW(apply_query_overrides({}, {"novalue="}), ConfigError);
}

TEST(Commands, ExitCodes)
{
    std::ostringstream out, err;
    EXPECT_EQ(cmd::run_guarded([]() -> cmd::Result { throw ConfigError("c"); }, out, err), 2);
    EXPECT_EQ(cmd::run_guarded([]() -> cmd::Result { throw DataError("d"); }, out, err), 3);
    EXPECT_EQ(cmd::run_guarded([]() -> cmd::Result { throw CheckpointError(CheckpointError::Kind::Io, "x"); }, out,
                               err),
              3);
    EXPECT_EQ(cmd::run_guarded([]() -> cmd::Result { throw NumericError("n"); }, out, err), 4);
    EXPECT_EQ(cmd::run_guarded([] { return cmd::Result{{"ok", true}}; }, out, err), 0);
    EXPECT_NE(err.str().find("error: d"), std::string::npos);
}

TEST(Commands, RouteExample)
{
    const RunConfig c = parse_run_config("{}", ".");
    const auto r = cmd::route(c,
                              {{"lighting", "good"}, {"viewpoint", "high"}, {"occupancy", "medium"},
                               {"location", "indoor"}, {"motion", "static"}},
                              0.8);
    EXPECT_EQ(r["occupancy"]["medium"].get<double>(), 0.8);
    EXPECT_NEAR(r["occupancy"]["low"].get<double>(), 0.1, 1e-15);
    EXPECT_NEAR(r["occupancy"]["high"].get<double>(), 0.1, 1e-15);
    EXPECT_THROW(cmd::route(c, {{"lighting", "good"}}, 0.8), ConfigError);
}

TEST(Commands, MissingInputsAreDataErrors)
{
    RunConfig c = parse_run_config(R"({"paths": {"base": "/nonexistent/b.ckpt", "data": "/nonexistent/d",
                                                  "inventory": "/nonexistent/m", "output": "/tmp/o"}})",
                                   ".");
    EXPECT_THROW(cmd::train_all(c), DataError);
    EXPECT_THROW(cmd::inspect("/nonexistent/x.ckpt"), DataError);
    c.paths.base.clear();
    EXPECT_THROW(cmd::train_all(c), ConfigError);
}

TEST_F(TinyRun, MergeIsBitIdempotentAndTraceable)
{
    const auto r1 = cmd::merge(config_, config_.query, Strategy::Weighted, 0.8, dir_ / "m1.ckpt");
    const auto r2 = cmd::merge(config_, config_.query, Strategy::Weighted, 0.8, dir_ / "m2.ckpt");
    EXPECT_EQ(read_file(dir_ / "m1.ckpt"), read_file(dir_ / "m2.ckpt"));
    EXPECT_EQ(read_file(dir_ / "m1.ckpt.manifest.json"), read_file(dir_ / "m2.ckpt.manifest.json"));
    EXPECT_NE(r1["digest"], r1["base_digest"]);

    const auto manifest = nlohmann::json::parse(read_file(dir_ / "m1.ckpt.manifest.json"));
    EXPECT_EQ(manifest["strategy"], "weighted");
    EXPECT_EQ(manifest["rho"], 0.8);
    EXPECT_EQ(manifest["inputs"]["modules"].size(), 12u);  // soft routing touches every module
    EXPECT_EQ(manifest["inputs"]["base"], r1["base_digest"]);
    EXPECT_NEAR(manifest["module_weights"]["occupancy.low"].get<double>(), 0.8 / 5.0, 1e-15);

    EXPECT_THROW(cmd::merge(config_, config_.query, Strategy::Mean, 0.8, dir_ / "m3.ckpt"), ConfigError);
}

TEST_F(TinyRun, MergeWithIdentityModulesKeepsBaseDigest)
{
    RunConfig c = config_;
    c.paths.inventory = dir_ / "identity";
    const ToyNetwork net(c.experiment.spec, load_checkpoint(c.paths.base));
    fresh_inventory(net, c.schema, c.experiment.training).save(c.paths.inventory);
    const auto r = cmd::merge(c, c.query, Strategy::Mean, 1.0, dir_ / "same.ckpt");
    EXPECT_EQ(r["digest"], r["base_digest"]);
    EXPECT_EQ(cmd::inspect(dir_ / "same.ckpt")["digest"], r["base_digest"]);
}

TEST_F(TinyRun, InspectListsTensors)
{
    const auto r = cmd::inspect(config_.paths.base);
    EXPECT_EQ(r["tensors"], 6u);
    EXPECT_EQ(r["entries"][0]["name"], "conv1.bias");
    EXPECT_EQ(r["entries"][0]["shape"], nlohmann::json::array({8}));
}

TEST_F(TinyRun, EvalTableIsDeterministic)
{
    std::ostringstream t1, t2;
    const auto r = cmd::eval(config_, std::nullopt, cmd::ScenarioSet::All, t1);
    cmd::eval(config_, std::nullopt, cmd::ScenarioSet::All, t2);
    EXPECT_EQ(t1.str(), t2.str());
    EXPECT_TRUE(r["all"].contains("domain_expert"));
    EXPECT_EQ(r["scenarios"], 4u);
    EXPECT_NE(t1.str().find("domain_expert"), std::string::npos);

    std::ostringstream t3;
    cmd::eval(config_, config_.paths.base, cmd::ScenarioSet::HeldOut, t3);
    EXPECT_NE(t3.str().find("checkpoint"), std::string::npos);
    EXPECT_EQ(t3.str().find("in_domain"), std::string::npos);
}

TEST_F(TinyRun, TrainModuleWritesOnlyItsFile)
{
    RunConfig c = config_;
    c.paths.inventory = dir_ / "single";
    const auto r = cmd::train_module(c, "motion", "moving");
    EXPECT_EQ(r["backward_passes"], 8u);
    EXPECT_TRUE(fs::exists(c.paths.inventory / "motion.moving.ckpt"));
    EXPECT_EQ(std::distance(fs::directory_iterator(c.paths.inventory), fs::directory_iterator()), 1);
    EXPECT_THROW(cmd::train_module(c, "motion", "flying"), ConfigError);
}

TEST_F(TinyRun, PipelineMatchesInMemoryExperiment)
{
    ExperimentConfig x = config_.experiment;
    const ExperimentResult r = run_experiment(x);
    EXPECT_TRUE(bitwise_equal(r.theta0, load_checkpoint(config_.paths.base)));
    const ModuleInventory inv = ModuleInventory::load(config_.schema, config_.paths.inventory);
    for (const auto& key : config_.schema.module_keys()) EXPECT_EQ(inv.at(key), r.inventory.at(key)) << key.str();
    std::ostringstream table, mem;
    cmd::eval(config_, std::nullopt, cmd::ScenarioSet::All, table);
    write_results_table(mem, r.rows);
    EXPECT_EQ(table.str(), mem.str());
}

TEST_F(TinyRun, GradcheckPassesAndFailsLoudly)
{
    EXPECT_LT(cmd::gradcheck(config_, 5, 1e-6, 1e-5)["max_rel_error"].get<double>(), 1e-5);
    EXPECT_THROW(cmd::gradcheck(config_, 5, 1e-1, 1e-12), NumericError);
}
