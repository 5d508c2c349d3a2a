// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "modmerge/toy_net.hpp"
#include "oracles.hpp"

using namespace modmerge;

namespace {

ToyNetSpec small_spec()
{
    ToyNetSpec s;
    s.input_size = 6;
    s.conv_channels = 3;
    s.hidden = 7;
    return s;
}

ModuleAdapters trained_module(const ToyNetwork& net, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    ModuleAdapters m = net.fresh_module(seed, 3);
    for (auto& [_, a] : m.lora) {
        for (std::size_t i = 0; i < a.b().size(); ++i) a.b()[i] = u(gen);
    }
    for (auto& [_, s] : m.scale_shift) {
        for (std::size_t i = 0; i < s.gamma().size(); ++i) s.gamma()[i] += u(gen);
        for (std::size_t i = 0; i < s.beta().size(); ++i) s.beta()[i] = u(gen);
    }
    return m;
}

Tensor relu(Tensor t)
{
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::max(0.0, t[i]);
    return t;
}

Tensor dense(const Tensor& w, const Tensor& b, const LoraAdapter* lora, const Tensor& x)
{
    Tensor y = oracle::matvec(w, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    if (lora) {
        const Tensor low = oracle::matvec(lora->a(), x);
        const Tensor up = oracle::matvec(lora->b(), low);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += up[i];
    }
    return y;
}

// Straight-line forward written from the layer definitions.
Tensor hand_forward(const ToyNetwork& net, const Tensor& x, const ModuleAdapters* m)
{
    const ParameterStore& p = net.base();
    Tensor f = oracle::conv2d(x, p.at("conv1.weight"), p.at("conv1.bias"), 1, 0);
    if (m && m->scale_shift.count("conv1")) {
        const auto& s = m->scale_shift.at("conv1");
        const std::size_t plane = f.size() / s.channels();
        for (std::size_t c = 0; c < s.channels(); ++c)
            for (std::size_t i = 0; i < plane; ++i) f[c * plane + i] = s.gamma()[c] * f[c * plane + i] + s.beta()[c];
    }
    const Tensor feat = relu(f).reshaped({f.size()});
    auto lora = [&](const char* layer) -> const LoraAdapter* {
        if (!m || !m->lora.count(layer)) return nullptr;
        return &m->lora.at(layer);
    };
    const Tensor h = relu(dense(p.at("fc1.weight"), p.at("fc1.bias"), lora("fc1"), feat));
    return dense(p.at("fc2.weight"), p.at("fc2.bias"), lora("fc2"), h);
}

}  // namespace

TEST(ToyNet, ForwardMatchesHandComputation)
{
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 31));
    std::mt19937_64 gen(31);
    for (int rep = 0; rep < 10; ++rep) {
        const ModuleAdapters m = trained_module(net, 100 + rep);
        const Tensor x = oracle::random_tensor(gen, spec.input_shape());
        EXPECT_LT(oracle::max_abs(net.predict(x, &m), hand_forward(net, x, &m)), 1e-12);
        EXPECT_LT(oracle::max_abs(net.predict(x), hand_forward(net, x, nullptr)), 1e-12);
    }
}

TEST(ToyNet, FreshModuleIsIdentity)
{
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 32));
    const ModuleAdapters m = net.fresh_module(5, 16);
    EXPECT_EQ(m.lora.at("fc1").rank(), 7u);  // min(16, d, k)
    EXPECT_EQ(m.lora.at("fc2").rank(), 4u);
    std::mt19937_64 gen(32);
    const Tensor x = oracle::random_tensor(gen, spec.input_shape());
    EXPECT_TRUE(bitwise_equal(net.predict(x, &m), net.predict(x)));
    EXPECT_TRUE(net.fresh_module(5, 16, 5).lora.count("fc1"));
    EXPECT_FALSE(net.fresh_module(5, 16, 5).lora.count("fc2"));
}

TEST(ToyNet, ConstructorValidatesBase)
{
    const ToyNetSpec spec = small_spec();
    ParameterStore base = ToyNetwork::random_base(spec, 33);
    base.set("fc1.bias", Tensor({3}));
    EXPECT_THROW(ToyNetwork(spec, base), ShapeError);
}

TEST(ToyNet, GradientsMatchFiniteDifferences)
{
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 34));
    std::mt19937_64 gen(34);
    for (int rep = 0; rep < 5; ++rep) {
        const ModuleAdapters m = trained_module(net, 200 + rep);
        const Tensor x = oracle::random_tensor(gen, spec.input_shape());
        const Tensor t = oracle::random_tensor(gen, {spec.outputs});
        EXPECT_LT(finite_diff_check(net, x, m, t, 1e-6), 1e-5);
    }
    const auto errs = random_gradcheck(10, 9, 1e-6);
    EXPECT_LT(*std::max_element(errs.begin(), errs.end()), 1e-5);
}

TEST(ToyNet, BaseGradientMatchesFiniteDifference)
{
    ToyNetSpec spec = small_spec();
    ParameterStore base = ToyNetwork::random_base(spec, 35);
    std::mt19937_64 gen(35);
    const Tensor x = oracle::random_tensor(gen, spec.input_shape());
    const ToyNetwork net(spec, base);
    const ForwardCache c = net.forward(x);
    Tensor g({spec.outputs});
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = 1.0 + static_cast<double>(j);
    const ParameterStore grads = net.backward_base(c, g);
    auto probe = [&](const ParameterStore& p) {
        const Tensor o = ToyNetwork(spec, p).predict(x);
        double s = 0.0;
        for (std::size_t j = 0; j < o.size(); ++j) s += (1.0 + static_cast<double>(j)) * o[j];
        return s;
    };
    for (const auto& name : base.names()) {
        for (std::size_t i = 0; i < base.at(name).size(); i += 7) {
            ParameterStore up = base, down = base;
            up.at(name)[i] += 1e-6;
            down.at(name)[i] -= 1e-6;
            const double fd = (probe(up) - probe(down)) / 2e-6;
            EXPECT_NEAR(grads.at(name)[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << name << "[" << i << "]";
        }
    }
}

TEST(ToyNet, StaleCacheIsRejected)
{
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 36));
    ModuleAdapters m = trained_module(net, 36);
    std::mt19937_64 gen(36);
    const ForwardCache c = net.forward(oracle::random_tensor(gen, spec.input_shape()), &m);
    m.lora.at("fc1").b()[0] += 1.0;
    EXPECT_THROW(net.backward(c, Tensor({spec.outputs}), m), DataError);
    EXPECT_THROW(net.forward(Tensor({3, 5, 5}), &m), ShapeError);
}

TEST(BatchEvaluator, ParallelEqualsSerialBitwise)
{
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 37));
    const ModuleAdapters m = trained_module(net, 37);
    std::mt19937_64 gen(37);
    Batch b;
    b.inputs = oracle::random_tensor(gen, {37, 3, 6, 6});
    b.targets = oracle::random_tensor(gen, {37, 4});
    b.weights = oracle::random_tensor(gen, {37, 4}, 0.0, 2.0);
    const BatchResult s = BatchEvaluator(net, Execution::Serial).adapter_step(b, m);
    const BatchResult p = BatchEvaluator(net, Execution::Parallel).adapter_step(b, m);
    EXPECT_EQ(s.loss, p.loss);
    EXPECT_EQ(s.adapter_grads.flatten(), p.adapter_grads.flatten());
    const BatchResult sb = BatchEvaluator(net, Execution::Serial).base_step(b);
    const BatchResult pb = BatchEvaluator(net, Execution::Parallel).base_step(b);
    EXPECT_TRUE(bitwise_equal(*sb.base_grads, *pb.base_grads));
}

TEST(BatchEvaluator, LossMatchesDefinition)
{
    const ToyNetSpec spec = small_spec();
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 38));
    std::mt19937_64 gen(38);
    Batch b;
    b.inputs = oracle::random_tensor(gen, {5, 3, 6, 6});
    b.targets = oracle::random_tensor(gen, {5, 4});
    b.weights = oracle::random_tensor(gen, {5, 4}, 0.0, 2.0);
    double want = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        Tensor x({3, 6, 6});
        std::copy_n(b.inputs.data().begin() + static_cast<long>(i * 108), 108, x.data().begin());
        const Tensor o = hand_forward(net, x, nullptr);
        for (std::size_t j = 0; j < 4; ++j) {
            const double e = o[j] - b.targets[i * 4 + j];
            want += b.weights[i * 4 + j] * e * e;
        }
    }
    EXPECT_NEAR(BatchEvaluator(net).loss(b), want / 5.0, 1e-12);
}

TEST(Patches, ExtractionPadsWithZeros)
{
    Tensor frame({1, 8, 8});
    for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = static_cast<double>(i + 1);
    PatchGrid g{2, 2, 4, 2};
    const Tensor p = extract_patches(frame, g);
    ASSERT_EQ(p.shape(), (Shape{4, 1, 8, 8}));
    EXPECT_EQ(p[0], 0.0);                       // top-left corner lies outside
    EXPECT_EQ(p[2 * 8 + 2], frame[0]);          // (2, 2) of patch 0 is pixel (0, 0)
    EXPECT_EQ(p[3 * 64 + 2 * 8 + 2], frame[4 * 8 + 4]);
}
