// SPDX-License-Identifier: Apache-2.0

#include "modmerge/kernels.hpp"

#include <omp.h>

namespace modmerge::kernels {

long long ConvGeometry::out_h() const
{
    const long long span = static_cast<long long>(in_h + 2 * padding) - static_cast<long long>(kernel_h);
    if (span < 0 || stride == 0) return 0;
    return span / static_cast<long long>(stride) + 1;
}

long long ConvGeometry::out_w() const
{
    const long long span = static_cast<long long>(in_w + 2 * padding) - static_cast<long long>(kernel_w);
    if (span < 0 || stride == 0) return 0;
    return span / static_cast<long long>(stride) + 1;
}

std::size_t ConvGeometry::output_size() const
{
    return out_channels * static_cast<std::size_t>(out_h()) * static_cast<std::size_t>(out_w());
}

namespace {

inline void matmul_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k, std::size_t n)
{
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double aip = a[i * k + p];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
}

inline double dot(const double* a, const double* b, std::size_t n)
{
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void conv_channel(const double* in, const double* w, const double* bias, double* out,
                         const ConvGeometry& g, std::size_t oc)
{
    const auto oh = static_cast<std::size_t>(g.out_h());
    const auto ow = static_cast<std::size_t>(g.out_w());
    const auto pad = static_cast<long long>(g.padding);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = bias[oc];
            for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
                const double* wk = w + ((oc * g.in_channels + ic) * g.kernel_h) * g.kernel_w;
                const double* plane = in + ic * g.in_h * g.in_w;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                    const long long iy = static_cast<long long>(y * g.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<long long>(g.in_h)) continue;
                    for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                        const long long ix = static_cast<long long>(x * g.stride + kx) - pad;
                        if (ix < 0 || ix >= static_cast<long long>(g.in_w)) continue;
                        acc += wk[ky * g.kernel_w + kx] * plane[iy * static_cast<long long>(g.in_w) + ix];
                    }
                }
            }
            out[(oc * oh + y) * ow + x] = acc;
        }
    }
}

}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) matmul_row(a.data(), b.data(), c.data(), i, k, n);
}

void matvec(std::span<const double> a, std::span<const double> x, std::span<double> y,
            std::size_t m, std::size_t k)
{
    for (std::size_t i = 0; i < m; ++i) y[i] = dot(a.data() + i * k, x.data(), k);
}

void matvec_transposed(std::span<const double> a, std::span<const double> x, std::span<double> y,
                       std::size_t m, std::size_t k)
{
    for (std::size_t j = 0; j < k; ++j) y[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double xi = x[i];
        const double* row = a.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) y[j] += row[j] * xi;
    }
}

void conv2d(std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output, const ConvGeometry& g)
{
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
        conv_channel(input.data(), weight.data(), bias.data(), output.data(), g, oc);
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n)
{
    const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
    for (long long i = 0; i < rows; ++i)
        matmul_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
}

void matvec(std::span<const double> a, std::span<const double> x, std::span<double> y,
            std::size_t m, std::size_t k)
{
    const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k >= kParallelThreshold)
    for (long long i = 0; i < rows; ++i)
        y[static_cast<std::size_t>(i)] = dot(a.data() + static_cast<std::size_t>(i) * k, x.data(), k);
}

void matvec_transposed(std::span<const double> a, std::span<const double> x, std::span<double> y,
                       std::size_t m, std::size_t k)
{
    // Parallel over output columns; each column sums rows in ascending order
    // exactly as the serial version does.
    const auto cols = static_cast<long long>(k);
#pragma omp parallel for schedule(static) if (m * k >= kParallelThreshold)
    for (long long jj = 0; jj < cols; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a[i * k + j] * x[i];
        y[j] = s;
    }
}

void conv2d(std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output, const ConvGeometry& g)
{
    const auto channels = static_cast<long long>(g.out_channels);
    const std::size_t work = g.output_size() * g.in_channels * g.kernel_h * g.kernel_w;
#pragma omp parallel for schedule(static) if (work >= kParallelThreshold)
    for (long long oc = 0; oc < channels; ++oc)
        conv_channel(input.data(), weight.data(), bias.data(), output.data(), g, static_cast<std::size_t>(oc));
}

}  // namespace parallel

}  // namespace modmerge::kernels
