// SPDX-License-Identifier: Apache-2.0

#include "modmerge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace modmerge {

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void validate_shape(const Shape& shape)
{
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor extent must be positive, got " + shape_to_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape))
{
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data))
{
    validate_shape(shape_);
    if (shape_numel(shape_) != data_.size())
        throw ShapeError("shape " + shape_to_string(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
    require_finite("Tensor");
}

Tensor Tensor::filled(Shape shape, Scalar value)
{
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    t.require_finite("Tensor::filled");
    return t;
}

Tensor Tensor::vector(std::initializer_list<Scalar> values)
{
    return Tensor({values.size()}, std::vector<Scalar>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Scalar> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_numel(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::require_finite(const char* what) const
{
    for (auto v : data_)
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value in result");
}

bool bitwise_equal(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(Scalar)) == 0;
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    Scalar m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Scalar frobenius_norm(const Tensor& t)
{
    Scalar s = 0.0;
    for (auto v : t.data()) s += v * v;
    return std::sqrt(s);
}

}  // namespace modmerge
