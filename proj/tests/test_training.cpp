// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include <json.hpp>

#include "modmerge/training.hpp"
#include "oracles.hpp"

using namespace modmerge;

namespace {

ToyNetSpec small_spec()
{
    ToyNetSpec s;
    s.input_size = 6;
    s.conv_channels = 3;
    s.hidden = 6;
    return s;
}

// Patched samples tagged with a two-attribute schema; the target depends on
// the tags so every module has something to learn.
Dataset tagged_dataset(const AttributeSchema& schema, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    Dataset d;
    std::size_t seq = 0;
    for (const auto& a : schema.attributes()[0].values)
        for (const auto& b : schema.attributes()[1].values) {
            for (int rep = 0; rep < 3; ++rep) {
                Sample s;
                s.inputs = oracle::random_tensor(gen, {6, 3, 6, 6});
                s.targets = Tensor::filled({6, 4}, a == schema.attributes()[0].values[0] ? 0.5 : -0.5);
                s.weights = Tensor::filled({6, 4}, 1.0);
                s.tags = {{schema.attributes()[0].name, a}, {schema.attributes()[1].name, b}};
                s.sequence = seq++;
                d.samples.push_back(std::move(s));
            }
        }
    return d;
}

AttributeSchema schema2() { return AttributeSchema({{"light", {"day", "night"}}, {"crowd", {"low", "mid", "high"}}}); }

TrainingConfig fast_config(std::size_t iterations)
{
    TrainingConfig c;
    c.lora_lr = 0.05;
    c.ssf_lr = 0.01;
    c.iterations = iterations;
    c.accumulation = 2;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(Sgd, DecoupledDecayFormula)
{
    Tensor p = Tensor::vector({1.0, -2.0});
    sgd_step(p, Tensor::vector({0.5, 0.25}), 0.1, 0.2);
    EXPECT_DOUBLE_EQ(p[0], 1.0 * (1 - 0.02) - 0.05);
    EXPECT_DOUBLE_EQ(p[1], -2.0 * (1 - 0.02) - 0.025);
    EXPECT_THROW(sgd_step(p, Tensor({3}), 0.1, 0.0), ShapeError);
    EXPECT_THROW(sgd_step(p, Tensor::vector({1e308, 0.0}), -1e10, 0.0), NumericError);
}

TEST(Sgd, ClippingBoundsTheStep)
{
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 1));
    ModuleAdapters m = net.fresh_module(2, 2);
    const ModuleAdapters before = m;
    AdapterGradients g = AdapterGradients::zeros_like(m);
    g.lora.at("fc1").b[0] = 30.0;
    g.lora.at("fc1").b[1] = 40.0;  // global norm 50
    TrainingConfig c;
    c.lora_lr = 1.0;
    c.lora_weight_decay = 0.0;
    c.max_grad_norm = 5.0;
    apply_adapter_step(m, g, c);
    EXPECT_NEAR(m.lora.at("fc1").b()[0] - before.lora.at("fc1").b()[0], -3.0, 1e-12);
    EXPECT_NEAR(m.lora.at("fc1").b()[1] - before.lora.at("fc1").b()[1], -4.0, 1e-12);
}

TEST(TrainingConfig, Validation)
{
    TrainingConfig c;
    c.accumulation = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.accumulation = 1;
    c.lora_lr = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Training, AllModulesIsolatedAndBalanced)
{
    const AttributeSchema schema = schema2();
    const ToyNetSpec spec = small_spec();
    const ParameterStore base = ToyNetwork::random_base(spec, 4);
    const ToyNetwork net(spec, base);
    const Dataset data = tagged_dataset(schema, 4);
    const TrainingConfig cfg = fast_config(12);
    ModuleInventory inv = fresh_inventory(net, schema, cfg);
    const ModuleInventory before = inv;
    std::ostringstream log;
    const TrainingReport r = train_all_modules(net, inv, data, cfg, true, &log);

    EXPECT_EQ(r.isolation_violations, 0u);
    EXPECT_EQ(r.audited_steps, 12u * schema.module_count());
    EXPECT_EQ(r.histogram_spread(), 0u);
    for (const auto& [key, n] : r.backward_counts) EXPECT_EQ(n, 12u) << key.str();
    EXPECT_TRUE(bitwise_equal(net.base(), base));
    for (const auto& key : schema.module_keys()) EXPECT_FALSE(inv.at(key) == before.at(key)) << key.str();

    std::istringstream lines(log.str());
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("iteration") && j.contains("module") && j.contains("loss") &&
                    j.contains("backward_count"));
        ++count;
    }
    EXPECT_EQ(count, r.audited_steps);
}

TEST(Training, SingleModuleLeavesOthersUntouched)
{
    const AttributeSchema schema = schema2();
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 5));
    const Dataset data = tagged_dataset(schema, 5);
    const TrainingConfig cfg = fast_config(8);
    ModuleInventory inv = fresh_inventory(net, schema, cfg);
    const ModuleInventory before = inv;
    const ModuleKey target{"crowd", "mid"};
    const auto r = train_module(net, inv, target, data, cfg);
    EXPECT_EQ(r.backward_passes, 8u);
    EXPECT_EQ(r.optimizer_steps, 4u);
    for (const auto& key : schema.module_keys()) {
        if (key == target)
            EXPECT_FALSE(inv.at(key) == before.at(key));
        else
            EXPECT_TRUE(inv.at(key) == before.at(key)) << key.str();
    }
}

TEST(Training, LossDecreases)
{
    const AttributeSchema schema = schema2();
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 6));
    const Dataset data = tagged_dataset(schema, 6);
    TrainingConfig cfg = fast_config(200);
    cfg.lora_lr = 0.1;
    ModuleInventory inv = fresh_inventory(net, schema, cfg);
    const ModuleKey key{"light", "night"};
    const ModuleAdapters start = inv.at(key);
    train_module(net, inv, key, data, cfg);
    const BatchEvaluator eval(net);
    double before = 0.0, after = 0.0;
    for (std::size_t i : data.matching("light", "night")) {
        before += eval.loss(data.batch(i), &start);
        after += eval.loss(data.batch(i), &inv.at(key));
    }
    EXPECT_LT(after, 0.5 * before);
}

TEST(Training, DeterministicUnderSeed)
{
    const AttributeSchema schema = schema2();
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 7));
    const Dataset data = tagged_dataset(schema, 7);
    const TrainingConfig cfg = fast_config(6);
    ModuleInventory a = fresh_inventory(net, schema, cfg), b = fresh_inventory(net, schema, cfg);
    train_all_modules(net, a, data, cfg, false, nullptr, Execution::Serial);
    train_all_modules(net, b, data, cfg, false, nullptr, Execution::Parallel);
    for (const auto& key : schema.module_keys()) EXPECT_EQ(a.checksum(key), b.checksum(key));
}

TEST(Training, MissingTagIsDataError)
{
    const AttributeSchema schema = schema2();
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 8));
    Dataset data = tagged_dataset(schema, 8);
    std::erase_if(data.samples, [](const Sample& s) { return s.tags.at("crowd") == "high"; });
    const TrainingConfig cfg = fast_config(2);
    ModuleInventory inv = fresh_inventory(net, schema, cfg);
    EXPECT_THROW(train_all_modules(net, inv, data, cfg), DataError);
}

TEST(Bootstrap, UsesSubsetAndReducesLoss)
{
    const AttributeSchema schema = schema2();
    const ToyNetSpec spec = small_spec();
    const Dataset data = tagged_dataset(schema, 9);
    BootstrapConfig cfg;
    cfg.lr = 0.05;
    cfg.iterations = 150;
    cfg.fraction = 0.5;
    cfg.seed = 9;
    const auto r = bootstrap_base(spec, ToyNetwork::random_base(spec, 9), data, cfg);
    EXPECT_EQ(r.sequences.size(), 9u);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 20; ++i) {
        first += r.losses[i];
        last += r.losses[r.losses.size() - 1 - i];
    }
    EXPECT_LT(last, first);
    cfg.fraction = 0.0;
    EXPECT_THROW(bootstrap_base(spec, ToyNetwork::random_base(spec, 9), data, cfg), ConfigError);
}
