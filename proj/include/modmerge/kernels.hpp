// SPDX-License-Identifier: Apache-2.0
//
// Raw compute kernels over flat row-major buffers. Each kernel exists twice:
// a serial reference and an OpenMP version. Both accumulate every output
// element in the same order, so their results are bitwise identical; the
// serial one is kept for tests and for the benchmark.

#pragma once

#include <cstddef>
#include <span>

namespace modmerge::kernels {

struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;

    // Signed so that invalid geometries can be detected by callers.
    long long out_h() const;
    long long out_w() const;
    std::size_t input_size() const { return in_channels * in_h * in_w; }
    std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
    std::size_t output_size() const;
};

// Below this many multiply-adds the OpenMP versions stay on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);

// y[m] = a[m x k] * x[k]
void matvec(std::span<const double> a, std::span<const double> x, std::span<double> y,
            std::size_t m, std::size_t k);

// y[k] = a[m x k]^T * x[m]
void matvec_transposed(std::span<const double> a, std::span<const double> x, std::span<double> y,
                       std::size_t m, std::size_t k);

// Cross-correlation plus per-output-channel bias.
void conv2d(std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output, const ConvGeometry& g);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);

void matvec(std::span<const double> a, std::span<const double> x, std::span<double> y,
            std::size_t m, std::size_t k);

void matvec_transposed(std::span<const double> a, std::span<const double> x, std::span<double> y,
                       std::size_t m, std::size_t k);

void conv2d(std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output, const ConvGeometry& g);

}  // namespace parallel

}  // namespace modmerge::kernels
