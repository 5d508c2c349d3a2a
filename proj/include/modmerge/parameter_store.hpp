// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "modmerge/tensor.hpp"

namespace modmerge {

/// Named tensors keyed by dot-separated paths ("fc1.weight"). Iteration is
/// lexicographic by name.
class ParameterStore {
public:
    using Map = std::map<std::string, Tensor>;

    ParameterStore() = default;

    /// Throws std::invalid_argument on a duplicate or malformed name.
    void insert(const std::string& name, Tensor value);
    /// Insert or overwrite.
    void set(const std::string& name, Tensor value);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::vector<std::string> names() const;

    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }

    friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

private:
    Map entries_;
};

/// Names may not be empty or contain whitespace or control characters.
bool valid_parameter_name(const std::string& name);

/// Same name set and identical per-name shapes.
bool shape_compatible(const ParameterStore& a, const ParameterStore& b);

/// Per-name elementwise after - before. Throws ShapeError unless compatible.
ParameterStore store_diff(const ParameterStore& after, const ParameterStore& before);

/// Per-name elementwise a + b. Throws ShapeError unless compatible.
ParameterStore store_add(const ParameterStore& a, const ParameterStore& b);

bool bitwise_equal(const ParameterStore& a, const ParameterStore& b);

/// 64-bit FNV-1a over the checkpoint encoding of the store.
std::uint64_t store_checksum(const ParameterStore& store);
std::string digest_hex(std::uint64_t digest);

}  // namespace modmerge
