// SPDX-License-Identifier: Apache-2.0

#include "modmerge/toy_net.hpp"

#include <bit>
#include <cmath>

#include <omp.h>

#include "modmerge/composition.hpp"
#include "modmerge/rng.hpp"

namespace modmerge {

kernels::ConvGeometry ToyNetSpec::conv_geometry() const
{
    kernels::ConvGeometry g;
    g.in_channels = in_channels;
    g.in_h = input_size;
    g.in_w = input_size;
    g.out_channels = conv_channels;
    g.kernel_h = kernel;
    g.kernel_w = kernel;
    g.stride = 1;
    g.padding = 0;
    return g;
}

// ---------------------------------------------------------------------------
// AdapterGradients

AdapterGradients AdapterGradients::zeros_like(const ModuleAdapters& module)
{
    AdapterGradients g;
    for (const auto& [target, ad] : module.lora) g.lora[target] = {Tensor(ad.a().shape()), Tensor(ad.b().shape())};
    for (const auto& [target, ad] : module.scale_shift)
        g.scale_shift[target] = {Tensor(ad.gamma().shape()), Tensor(ad.beta().shape())};
    return g;
}

namespace {

void axpy(std::span<Scalar> acc, Scalar w, std::span<const Scalar> x)
{
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * x[i];
}

// acc[m x k] += u[m] (x) v[k]
void add_outer(std::span<Scalar> acc, std::span<const Scalar> u, std::span<const Scalar> v)
{
    const std::size_t k = v.size();
    for (std::size_t i = 0; i < u.size(); ++i) {
        const Scalar ui = u[i];
        if (ui == 0.0) continue;
        Scalar* row = acc.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) row[j] += ui * v[j];
    }
}

Tensor relu(const Tensor& x)
{
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

void relu_mask(std::span<Scalar> grad, std::span<const Scalar> pre)
{
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(pre[i] > 0.0)) grad[i] = 0.0;
}

std::uint64_t mix_words(std::uint64_t h, std::span<const Scalar> values)
{
    for (Scalar v : values) {
        h ^= std::bit_cast<std::uint64_t>(v);
        h *= 0x100000001b3ull;
        h ^= h >> 29;
    }
    return h;
}

}  // namespace

void AdapterGradients::add_scaled(const AdapterGradients& other, Scalar w)
{
    for (const auto& [target, g] : other.lora) {
        auto& mine = lora.at(target);
        axpy(mine.a.data(), w, g.a.data());
        axpy(mine.b.data(), w, g.b.data());
    }
    for (const auto& [target, g] : other.scale_shift) {
        auto& mine = scale_shift.at(target);
        axpy(mine.gamma.data(), w, g.gamma.data());
        axpy(mine.beta.data(), w, g.beta.data());
    }
}

std::vector<Scalar> AdapterGradients::flatten() const
{
    std::vector<Scalar> out;
    for (const auto& [_, g] : lora) {
        out.insert(out.end(), g.a.data().begin(), g.a.data().end());
        out.insert(out.end(), g.b.data().begin(), g.b.data().end());
    }
    for (const auto& [_, g] : scale_shift) {
        out.insert(out.end(), g.gamma.data().begin(), g.gamma.data().end());
        out.insert(out.end(), g.beta.data().begin(), g.beta.data().end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// ToyNetwork

ToyNetwork::ToyNetwork(ToyNetSpec spec, ParameterStore base) : spec_(spec), base_(std::move(base))
{
    if (spec_.kernel > spec_.input_size || spec_.kernel == 0)
        throw ConfigError("toy network kernel must fit the input patch");
    const std::map<std::string, Shape> expected = {
        {weight_name(kConvLayer), {spec_.conv_channels, spec_.in_channels, spec_.kernel, spec_.kernel}},
        {bias_name(kConvLayer), {spec_.conv_channels}},
        {weight_name(kHiddenLayer), {spec_.hidden, spec_.conv_features()}},
        {bias_name(kHiddenLayer), {spec_.hidden}},
        {weight_name(kOutputLayer), {spec_.outputs, spec_.hidden}},
        {bias_name(kOutputLayer), {spec_.outputs}},
    };
    if (base_.size() != expected.size())
        throw ShapeError("toy network base must hold exactly " + std::to_string(expected.size()) + " tensors");
    for (const auto& [name, shape] : expected) {
        if (!base_.contains(name)) throw ShapeError("toy network base is missing '" + name + "'");
        if (base_.at(name).shape() != shape)
            throw ShapeError("'" + name + "' is " + shape_to_string(base_.at(name).shape()) + ", expected " +
                             shape_to_string(shape));
    }
}

ParameterStore ToyNetwork::random_base(const ToyNetSpec& spec, std::uint64_t seed)
{
    Rng rng(seed);
    auto uniform = [&rng](Shape shape, std::size_t fan_in) {
        Tensor t(std::move(shape));
        const Scalar bound = std::sqrt(6.0 / static_cast<Scalar>(fan_in));
        for (auto& v : t.data()) v = rng.uniform(-bound, bound);
        return t;
    };
    ParameterStore base;
    base.insert(weight_name(kConvLayer), uniform({spec.conv_channels, spec.in_channels, spec.kernel, spec.kernel},
                                                 spec.in_channels * spec.kernel * spec.kernel));
    base.insert(bias_name(kConvLayer), Tensor({spec.conv_channels}));
    base.insert(weight_name(kHiddenLayer), uniform({spec.hidden, spec.conv_features()}, spec.conv_features()));
    base.insert(bias_name(kHiddenLayer), Tensor({spec.hidden}));
    base.insert(weight_name(kOutputLayer), uniform({spec.outputs, spec.hidden}, spec.hidden));
    base.insert(bias_name(kOutputLayer), Tensor({spec.outputs}));
    return base;
}

ModuleAdapters ToyNetwork::fresh_module(std::uint64_t seed, std::size_t rank, std::size_t min_lora_width) const
{
    ModuleAdapters m;
    m.scale_shift.emplace(kConvLayer, ScaleShiftAdapter::identity(kConvLayer, spec_.conv_channels));
    auto add_lora = [&](const char* layer, std::size_t d, std::size_t k) {
        if (d < min_lora_width) return;
        const std::size_t r = std::min({rank, d, k});
        m.lora.emplace(layer, lora_init(layer, d, k, r, derive_seed(seed, layer)));
    };
    add_lora(kHiddenLayer, spec_.hidden, spec_.conv_features());
    add_lora(kOutputLayer, spec_.outputs, spec_.hidden);
    return m;
}

void ToyNetwork::validate_module(const ModuleAdapters& module) const
{
    for (const auto& [target, ad] : module.scale_shift) {
        if (target != kConvLayer) throw ShapeError("scale-&-shift target '" + target + "' is not a convolution");
        if (ad.channels() != spec_.conv_channels)
            throw ShapeError("scale-&-shift on '" + target + "' has " + std::to_string(ad.channels()) +
                             " channels, layer has " + std::to_string(spec_.conv_channels));
    }
    for (const auto& [target, ad] : module.lora) {
        if (target != kHiddenLayer && target != kOutputLayer)
            throw ShapeError("LoRA target '" + target + "' is not a linear layer");
        const Shape& w = base_.at(weight_name(target)).shape();
        if (ad.out_features() != w[0] || ad.in_features() != w[1])
            throw ShapeError("LoRA on '" + target + "' is " + std::to_string(ad.out_features()) + "x" +
                             std::to_string(ad.in_features()) + ", layer is " + shape_to_string(w));
    }
}

std::uint64_t ToyNetwork::fingerprint(const ModuleAdapters* active)
{
    if (!active) return 0;
    std::uint64_t h = kFnvOffset;
    for (const auto& [target, ad] : active->lora) {
        h = fnv1a(target, h);
        h = mix_words(h, ad.a().data());
        h = mix_words(h, ad.b().data());
    }
    for (const auto& [target, ad] : active->scale_shift) {
        h = fnv1a(target, h);
        h = mix_words(h, ad.gamma().data());
        h = mix_words(h, ad.beta().data());
    }
    return h | 1;  // never collides with "no adapters"
}

void ToyNetwork::forward_into(const Tensor& input, const ModuleAdapters* active, ForwardCache& cache) const
{
    namespace k = kernels::serial;
    const auto geom = spec_.conv_geometry();
    const std::size_t o = spec_.conv_out_size();

    cache.input = input;
    cache.conv_out = Tensor({spec_.conv_channels, o, o});
    k::conv2d(input.data(), base_.at(weight_name(kConvLayer)).data(), base_.at(bias_name(kConvLayer)).data(),
              cache.conv_out.data(), geom);

    const ScaleShiftAdapter* ssf = nullptr;
    const LoraAdapter* lora1 = nullptr;
    const LoraAdapter* lora2 = nullptr;
    if (active) {
        if (auto it = active->scale_shift.find(kConvLayer); it != active->scale_shift.end()) ssf = &it->second;
        if (auto it = active->lora.find(kHiddenLayer); it != active->lora.end()) lora1 = &it->second;
        if (auto it = active->lora.find(kOutputLayer); it != active->lora.end()) lora2 = &it->second;
    }

    if (ssf) {
        cache.affine_out = Tensor(cache.conv_out.shape());
        const std::size_t plane = o * o;
        for (std::size_t c = 0; c < spec_.conv_channels; ++c)
            for (std::size_t i = 0; i < plane; ++i)
                cache.affine_out[c * plane + i] = ssf->gamma()[c] * cache.conv_out[c * plane + i] + ssf->beta()[c];
    } else {
        cache.affine_out = cache.conv_out;
    }

    cache.features = spec_.relu ? relu(cache.affine_out) : cache.affine_out;
    cache.features = cache.features.reshaped({spec_.conv_features()});

    const Tensor& w1 = base_.at(weight_name(kHiddenLayer));
    const Tensor& b1 = base_.at(bias_name(kHiddenLayer));
    cache.hidden = Tensor({spec_.hidden});
    k::matvec(w1.data(), cache.features.data(), cache.hidden.data(), spec_.hidden, spec_.conv_features());
    for (std::size_t i = 0; i < spec_.hidden; ++i) cache.hidden[i] += b1[i];
    if (lora1) {
        cache.hidden_low = Tensor({lora1->rank()});
        k::matvec(lora1->a().data(), cache.features.data(), cache.hidden_low.data(), lora1->rank(),
                  spec_.conv_features());
        Tensor up({spec_.hidden});
        k::matvec(lora1->b().data(), cache.hidden_low.data(), up.data(), spec_.hidden, lora1->rank());
        for (std::size_t i = 0; i < spec_.hidden; ++i) cache.hidden[i] += up[i];
    } else {
        cache.hidden_low = Tensor();
    }
    cache.hidden_act = spec_.relu ? relu(cache.hidden) : cache.hidden;

    const Tensor& w2 = base_.at(weight_name(kOutputLayer));
    const Tensor& b2 = base_.at(bias_name(kOutputLayer));
    cache.output = Tensor({spec_.outputs});
    k::matvec(w2.data(), cache.hidden_act.data(), cache.output.data(), spec_.outputs, spec_.hidden);
    for (std::size_t i = 0; i < spec_.outputs; ++i) cache.output[i] += b2[i];
    if (lora2) {
        cache.output_low = Tensor({lora2->rank()});
        k::matvec(lora2->a().data(), cache.hidden_act.data(), cache.output_low.data(), lora2->rank(), spec_.hidden);
        Tensor up({spec_.outputs});
        k::matvec(lora2->b().data(), cache.output_low.data(), up.data(), spec_.outputs, lora2->rank());
        for (std::size_t i = 0; i < spec_.outputs; ++i) cache.output[i] += up[i];
    } else {
        cache.output_low = Tensor();
    }
    cache.output.require_finite("ToyNetwork::forward");
    cache.network = this;
}

ForwardCache ToyNetwork::forward(const Tensor& input, const ModuleAdapters* active) const
{
    if (input.shape() != spec_.input_shape())
        throw ShapeError("toy network input " + shape_to_string(input.shape()) + ", expected " +
                         shape_to_string(spec_.input_shape()));
    if (active) validate_module(*active);
    ForwardCache cache;
    forward_into(input, active, cache);
    cache.fingerprint = fingerprint(active);
    return cache;
}

Tensor ToyNetwork::predict(const Tensor& input, const ModuleAdapters* active) const
{
    return forward(input, active).output;
}

void ToyNetwork::backward_core(const ForwardCache& cache, const Tensor& loss_grad, const ModuleAdapters* active,
                               AdapterGradients* ag, ParameterStore* bg) const
{
    namespace k = kernels::serial;
    const std::size_t features = spec_.conv_features();

    const ScaleShiftAdapter* ssf = nullptr;
    const LoraAdapter* lora1 = nullptr;
    const LoraAdapter* lora2 = nullptr;
    if (active) {
        if (auto it = active->scale_shift.find(kConvLayer); it != active->scale_shift.end()) ssf = &it->second;
        if (auto it = active->lora.find(kHiddenLayer); it != active->lora.end()) lora1 = &it->second;
        if (auto it = active->lora.find(kOutputLayer); it != active->lora.end()) lora2 = &it->second;
    }

    // Output layer.
    std::vector<Scalar> d_hidden_act(spec_.hidden);
    k::matvec_transposed(base_.at(weight_name(kOutputLayer)).data(), loss_grad.data(), d_hidden_act,
                         spec_.outputs, spec_.hidden);
    if (lora2) {
        std::vector<Scalar> d_low(lora2->rank());
        k::matvec_transposed(lora2->b().data(), loss_grad.data(), d_low, spec_.outputs, lora2->rank());
        if (ag) {
            auto& g = ag->lora.at(kOutputLayer);
            add_outer(g.b.data(), loss_grad.data(), cache.output_low.data());
            add_outer(g.a.data(), d_low, cache.hidden_act.data());
        }
        std::vector<Scalar> extra(spec_.hidden);
        k::matvec_transposed(lora2->a().data(), d_low, extra, lora2->rank(), spec_.hidden);
        for (std::size_t i = 0; i < spec_.hidden; ++i) d_hidden_act[i] += extra[i];
    }
    if (bg) {
        add_outer(bg->at(weight_name(kOutputLayer)).data(), loss_grad.data(), cache.hidden_act.data());
        axpy(bg->at(bias_name(kOutputLayer)).data(), 1.0, loss_grad.data());
    }

    // Hidden layer.
    std::vector<Scalar>& d_hidden = d_hidden_act;
    if (spec_.relu) relu_mask(d_hidden, cache.hidden.data());
    std::vector<Scalar> d_features(features);
    k::matvec_transposed(base_.at(weight_name(kHiddenLayer)).data(), d_hidden, d_features, spec_.hidden, features);
    if (lora1) {
        std::vector<Scalar> d_low(lora1->rank());
        k::matvec_transposed(lora1->b().data(), d_hidden, d_low, spec_.hidden, lora1->rank());
        if (ag) {
            auto& g = ag->lora.at(kHiddenLayer);
            add_outer(g.b.data(), d_hidden, cache.hidden_low.data());
            add_outer(g.a.data(), d_low, cache.features.data());
        }
        std::vector<Scalar> extra(features);
        k::matvec_transposed(lora1->a().data(), d_low, extra, lora1->rank(), features);
        for (std::size_t i = 0; i < features; ++i) d_features[i] += extra[i];
    }
    if (bg) {
        add_outer(bg->at(weight_name(kHiddenLayer)).data(), d_hidden, cache.features.data());
        axpy(bg->at(bias_name(kHiddenLayer)).data(), 1.0, d_hidden);
    }

    // Convolution output, through ReLU and the optional scale-&-shift.
    std::vector<Scalar>& d_affine = d_features;
    if (spec_.relu) relu_mask(d_affine, cache.affine_out.data());
    const std::size_t o = spec_.conv_out_size();
    const std::size_t plane = o * o;
    if (ssf && ag) {
        auto& g = ag->scale_shift.at(kConvLayer);
        for (std::size_t c = 0; c < spec_.conv_channels; ++c) {
            Scalar dg = 0.0;
            Scalar db = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                dg += d_affine[c * plane + i] * cache.conv_out[c * plane + i];
                db += d_affine[c * plane + i];
            }
            g.gamma[c] += dg;
            g.beta[c] += db;
        }
    }
    if (!bg) return;

    std::vector<Scalar> d_conv(d_affine);
    if (ssf)
        for (std::size_t c = 0; c < spec_.conv_channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) d_conv[c * plane + i] *= ssf->gamma()[c];

    Tensor& dw = bg->at(weight_name(kConvLayer));
    Tensor& db = bg->at(bias_name(kConvLayer));
    const std::size_t kk = spec_.kernel;
    const std::size_t s = spec_.input_size;
    for (std::size_t oc = 0; oc < spec_.conv_channels; ++oc) {
        for (std::size_t y = 0; y < o; ++y) {
            for (std::size_t x = 0; x < o; ++x) {
                const Scalar g = d_conv[(oc * o + y) * o + x];
                if (g == 0.0) continue;
                db[oc] += g;
                for (std::size_t ic = 0; ic < spec_.in_channels; ++ic)
                    for (std::size_t ky = 0; ky < kk; ++ky)
                        for (std::size_t kx = 0; kx < kk; ++kx)
                            dw[((oc * spec_.in_channels + ic) * kk + ky) * kk + kx] +=
                                g * cache.input[(ic * s + y + ky) * s + x + kx];
            }
        }
    }
}

AdapterGradients ToyNetwork::backward(const ForwardCache& cache, const Tensor& loss_grad,
                                      const ModuleAdapters& active) const
{
    if (cache.network != this) throw DataError("stale cache: produced by a different network");
    if (cache.fingerprint != fingerprint(&active))
        throw DataError("stale cache: adapters changed since the forward pass");
    if (loss_grad.shape() != Shape{spec_.outputs})
        throw ShapeError("loss gradient " + shape_to_string(loss_grad.shape()) + ", expected [" +
                         std::to_string(spec_.outputs) + "]");
    AdapterGradients g = AdapterGradients::zeros_like(active);
    backward_core(cache, loss_grad, &active, &g, nullptr);
    return g;
}

namespace {

ParameterStore zeros_like(const ParameterStore& store)
{
    ParameterStore out;
    for (const auto& [name, t] : store) out.insert(name, Tensor(t.shape()));
    return out;
}

}  // namespace

ParameterStore ToyNetwork::backward_base(const ForwardCache& cache, const Tensor& loss_grad) const
{
    if (cache.network != this) throw DataError("stale cache: produced by a different network");
    if (cache.fingerprint != 0) throw DataError("base gradients require a forward pass without adapters");
    ParameterStore g = zeros_like(base_);
    backward_core(cache, loss_grad, nullptr, nullptr, &g);
    return g;
}

// ---------------------------------------------------------------------------
// BatchEvaluator

namespace {

struct ChunkRange {
    std::size_t begin;
    std::size_t end;
};

ChunkRange chunk_range(std::size_t chunk, std::size_t chunks, std::size_t n)
{
    return {chunk * n / chunks, (chunk + 1) * n / chunks};
}

template <typename Body>
void run_chunks(Execution exec, std::size_t chunks, Body&& body)
{
    if (exec == Execution::Serial) {
        for (std::size_t c = 0; c < chunks; ++c) body(c);
        return;
    }
    const auto count = static_cast<long long>(chunks);
#pragma omp parallel for schedule(static)
    for (long long c = 0; c < count; ++c) body(static_cast<std::size_t>(c));
}

void copy_sample(const Tensor& inputs, std::size_t i, Tensor& dst)
{
    const std::size_t per = dst.size();
    std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(i * per), per, dst.data().begin());
}

void check_batch(const ToyNetSpec& spec, const Batch& batch)
{
    const Shape& s = batch.inputs.shape();
    if (s.size() != 4 || s[1] != spec.in_channels || s[2] != spec.input_size || s[3] != spec.input_size)
        throw ShapeError("batch inputs " + shape_to_string(s) + " do not match the network input " +
                         shape_to_string(spec.input_shape()));
    const Shape expected{s[0], spec.outputs};
    if (batch.targets.shape() != expected || batch.weights.shape() != expected)
        throw ShapeError("batch targets/weights must be " + shape_to_string(expected));
}

// (1/n) w (o - t)^2 summed, and its gradient (2/n) w (o - t).
Scalar weighted_sq_error(const Tensor& out, const Batch& batch, std::size_t i, Scalar inv_n, Tensor& grad)
{
    Scalar loss = 0.0;
    const std::size_t m = out.size();
    for (std::size_t j = 0; j < m; ++j) {
        const Scalar w = batch.weights[i * m + j];
        const Scalar r = out[j] - batch.targets[i * m + j];
        loss += w * r * r;
        grad[j] = 2.0 * inv_n * w * r;
    }
    return loss * inv_n;
}

}  // namespace

BatchResult BatchEvaluator::adapter_step(const Batch& batch, const ModuleAdapters& active) const
{
    check_batch(net_.spec(), batch);
    net_.validate_module(active);
    const std::size_t n = batch.size();
    const Scalar inv_n = 1.0 / static_cast<Scalar>(n);

    std::vector<AdapterGradients> partial(kChunks, AdapterGradients::zeros_like(active));
    std::vector<Scalar> losses(kChunks, 0.0);
    run_chunks(exec_, kChunks, [&](std::size_t c) {
        const auto [begin, end] = chunk_range(c, kChunks, n);
        Tensor input(net_.spec().input_shape());
        Tensor grad({net_.spec().outputs});
        ForwardCache cache;
        for (std::size_t i = begin; i < end; ++i) {
            copy_sample(batch.inputs, i, input);
            net_.forward_into(input, &active, cache);
            losses[c] += weighted_sq_error(cache.output, batch, i, inv_n, grad);
            net_.backward_core(cache, grad, &active, &partial[c], nullptr);
        }
    });

    BatchResult result;
    result.adapter_grads = AdapterGradients::zeros_like(active);
    for (std::size_t c = 0; c < kChunks; ++c) {
        result.loss += losses[c];
        result.adapter_grads.add_scaled(partial[c], 1.0);
    }
    return result;
}

BatchResult BatchEvaluator::base_step(const Batch& batch) const
{
    check_batch(net_.spec(), batch);
    const std::size_t n = batch.size();
    const Scalar inv_n = 1.0 / static_cast<Scalar>(n);

    std::vector<ParameterStore> partial(kChunks, zeros_like(net_.base()));
    std::vector<Scalar> losses(kChunks, 0.0);
    run_chunks(exec_, kChunks, [&](std::size_t c) {
        const auto [begin, end] = chunk_range(c, kChunks, n);
        Tensor input(net_.spec().input_shape());
        Tensor grad({net_.spec().outputs});
        ForwardCache cache;
        for (std::size_t i = begin; i < end; ++i) {
            copy_sample(batch.inputs, i, input);
            net_.forward_into(input, nullptr, cache);
            losses[c] += weighted_sq_error(cache.output, batch, i, inv_n, grad);
            net_.backward_core(cache, grad, nullptr, nullptr, &partial[c]);
        }
    });

    BatchResult result;
    ParameterStore total = zeros_like(net_.base());
    for (std::size_t c = 0; c < kChunks; ++c) {
        result.loss += losses[c];
        for (const auto& [name, g] : partial[c]) axpy(total.at(name).data(), 1.0, g.data());
    }
    result.base_grads = std::move(total);
    return result;
}

Scalar BatchEvaluator::loss(const Batch& batch, const ModuleAdapters* active) const
{
    check_batch(net_.spec(), batch);
    const Tensor out = predict(batch.inputs, active);
    const std::size_t n = batch.size();
    const std::size_t m = net_.spec().outputs;
    Scalar total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const Scalar r = out[i * m + j] - batch.targets[i * m + j];
            total += batch.weights[i * m + j] * r * r;
        }
    return total / static_cast<Scalar>(n);
}

Tensor BatchEvaluator::predict(const Tensor& inputs, const ModuleAdapters* active) const
{
    const ToyNetSpec& spec = net_.spec();
    if (inputs.rank() != 4 || inputs.dim(1) != spec.in_channels || inputs.dim(2) != spec.input_size ||
        inputs.dim(3) != spec.input_size)
        throw ShapeError("inputs " + shape_to_string(inputs.shape()) + " do not match the network input " +
                         shape_to_string(spec.input_shape()));
    if (active) net_.validate_module(*active);
    const std::size_t n = inputs.dim(0);
    Tensor out({n, spec.outputs});
    run_chunks(exec_, kChunks, [&](std::size_t c) {
        const auto [begin, end] = chunk_range(c, kChunks, n);
        Tensor input(spec.input_shape());
        ForwardCache cache;
        for (std::size_t i = begin; i < end; ++i) {
            copy_sample(inputs, i, input);
            net_.forward_into(input, active, cache);
            std::copy(cache.output.data().begin(), cache.output.data().end(),
                      out.data().begin() + static_cast<std::ptrdiff_t>(i * spec.outputs));
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

Scalar log_cosh(Scalar x)
{
    const Scalar a = std::abs(x);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

Scalar probe_loss(const ToyNetwork& net, const Tensor& input, const ModuleAdapters& m, const Tensor& target)
{
    const Tensor out = net.predict(input, &m);
    Scalar l = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) l += log_cosh(out[j] - target[j]);
    return l;
}

std::vector<Scalar*> parameter_slots(ModuleAdapters& m)
{
    std::vector<Scalar*> slots;
    auto push = [&slots](Tensor& t) {
        for (auto& v : t.data()) slots.push_back(&v);
    };
    for (auto& [_, ad] : m.lora) {
        push(ad.a());
        push(ad.b());
    }
    for (auto& [_, ad] : m.scale_shift) {
        push(ad.gamma());
        push(ad.beta());
    }
    return slots;
}

}  // namespace

Scalar finite_diff_check(const ToyNetwork& net, const Tensor& input, const ModuleAdapters& active,
                         const Tensor& target, Scalar h)
{
    if (!(h > 0.0)) throw NumericError("finite-difference step must be positive");
    if (target.shape() != Shape{net.spec().outputs})
        throw ShapeError("probe target must be [" + std::to_string(net.spec().outputs) + "]");

    const ForwardCache cache = net.forward(input, &active);
    Tensor grad({net.spec().outputs});
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = std::tanh(cache.output[j] - target[j]);
    const std::vector<Scalar> analytic = net.backward(cache, grad, active).flatten();

    ModuleAdapters probe = active;
    const auto slots = parameter_slots(probe);
    Scalar worst = 0.0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const Scalar saved = *slots[i];
        *slots[i] = saved + h;
        const Scalar up = probe_loss(net, input, probe, target);
        *slots[i] = saved - h;
        const Scalar down = probe_loss(net, input, probe, target);
        *slots[i] = saved;
        const Scalar numeric = (up - down) / (2.0 * h);
        const Scalar denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4});
        worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    return worst;
}

std::vector<Scalar> random_gradcheck(std::size_t cases, std::uint64_t seed, Scalar h)
{
    std::vector<Scalar> errors;
    for (std::size_t c = 0; c < cases; ++c) {
        Rng rng(derive_seed(seed, "gradcheck:" + std::to_string(c)));
        ToyNetSpec spec;
        spec.in_channels = 1 + rng.below(3);
        spec.kernel = 2 + rng.below(2);
        spec.input_size = spec.kernel + 1 + rng.below(4);
        spec.conv_channels = 1 + rng.below(4);
        spec.hidden = 3 + rng.below(8);
        spec.outputs = 1 + rng.below(4);
        const ToyNetwork net(spec, ToyNetwork::random_base(spec, rng.next_u64()));
        ModuleAdapters module = net.fresh_module(rng.next_u64(), 1 + rng.below(4));
        for (Scalar* p : parameter_slots(module)) *p += rng.uniform(-0.5, 0.5);

        Tensor input(spec.input_shape());
        for (std::size_t i = 0; i < input.size(); ++i) input[i] = rng.uniform(-1.0, 1.0);
        Tensor target({spec.outputs});
        for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.uniform(-1.0, 1.0);
        errors.push_back(finite_diff_check(net, input, module, target, h));
    }
    return errors;
}

// ---------------------------------------------------------------------------

Tensor extract_patches(const Tensor& frame, const PatchGrid& grid)
{
    if (frame.rank() != 3) throw ShapeError("extract_patches expects [C x H x W], got " + shape_to_string(frame.shape()));
    const std::size_t channels = frame.dim(0);
    const auto h = static_cast<long long>(frame.dim(1));
    const auto w = static_cast<long long>(frame.dim(2));
    const std::size_t p = grid.patch();
    Tensor out({grid.count(), channels, p, p});
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const long long y0 = static_cast<long long>(r * grid.cell) - static_cast<long long>(grid.margin);
            const long long x0 = static_cast<long long>(c * grid.cell) - static_cast<long long>(grid.margin);
            const std::size_t base = (r * grid.cols + c) * channels * p * p;
            for (std::size_t ch = 0; ch < channels; ++ch)
                for (std::size_t y = 0; y < p; ++y) {
                    const long long fy = y0 + static_cast<long long>(y);
                    if (fy < 0 || fy >= h) continue;
                    for (std::size_t x = 0; x < p; ++x) {
                        const long long fx = x0 + static_cast<long long>(x);
                        if (fx < 0 || fx >= w) continue;
                        out[base + (ch * p + y) * p + x] = frame.at(ch, static_cast<std::size_t>(fy),
                                                                   static_cast<std::size_t>(fx));
                    }
                }
        }
    }
    return out;
}

}  // namespace modmerge
