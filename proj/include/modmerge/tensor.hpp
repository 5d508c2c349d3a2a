// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors of 64-bit reals.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "modmerge/errors.hpp"

namespace modmerge {

using Scalar = double;
using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor. Every extent must be positive.
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<Scalar> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, Scalar value);
    static Tensor vector(std::initializer_list<Scalar> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const Scalar> data() const noexcept { return data_; }
    std::span<Scalar> data() noexcept { return data_; }
    const std::vector<Scalar>& values() const noexcept { return data_; }

    Scalar operator[](std::size_t i) const { return data_[i]; }
    Scalar& operator[](std::size_t i) { return data_[i]; }

    Scalar at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    Scalar& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    Scalar at(std::size_t c, std::size_t i, std::size_t j) const
    {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    Scalar& at(std::size_t c, std::size_t i, std::size_t j)
    {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }

    /// Same payload, new shape with the same element count.
    Tensor reshaped(Shape shape) const;

    /// Throws NumericError if any element is NaN or Inf.
    void require_finite(const char* what) const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

/// True iff shapes match and every element has the identical bit pattern.
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Largest |a_i - b_i|; shapes must match.
Scalar max_abs_diff(const Tensor& a, const Tensor& b);

Scalar frobenius_norm(const Tensor& t);

}  // namespace modmerge
