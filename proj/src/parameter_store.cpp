// SPDX-License-Identifier: Apache-2.0

#include "modmerge/parameter_store.hpp"

#include <cstdio>

#include "modmerge/checkpoint.hpp"
#include "modmerge/digest.hpp"
#include "modmerge/tensor_ops.hpp"

namespace modmerge {

bool valid_parameter_name(const std::string& name)
{
    if (name.empty()) return false;
    for (unsigned char c : name)
        if (c <= 0x20 || c == 0x7f) return false;
    return true;
}

void ParameterStore::insert(const std::string& name, Tensor value)
{
    if (!valid_parameter_name(name)) throw std::invalid_argument("invalid parameter name '" + name + "'");
    if (!entries_.emplace(name, std::move(value)).second)
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
}

void ParameterStore::set(const std::string& name, Tensor value)
{
    if (!valid_parameter_name(name)) throw std::invalid_argument("invalid parameter name '" + name + "'");
    entries_[name] = std::move(value);
}

const Tensor& ParameterStore::at(const std::string& name) const
{
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
}

Tensor& ParameterStore::at(const std::string& name)
{
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
}

std::vector<std::string> ParameterStore::names() const
{
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

bool shape_compatible(const ParameterStore& a, const ParameterStore& b)
{
    if (a.size() != b.size()) return false;
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib)
        if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    return true;
}

namespace {

void require_compatible(const char* op, const ParameterStore& a, const ParameterStore& b)
{
    if (shape_compatible(a, b)) return;
    for (const auto& [name, t] : a) {
        if (!b.contains(name)) throw ShapeError(std::string(op) + ": '" + name + "' missing from second store");
        if (b.at(name).shape() != t.shape())
            throw ShapeError(std::string(op) + ": '" + name + "' shape " + shape_to_string(t.shape()) + " vs " +
                             shape_to_string(b.at(name).shape()));
    }
    for (const auto& [name, _] : b)
        if (!a.contains(name)) throw ShapeError(std::string(op) + ": '" + name + "' missing from first store");
}

}  // namespace

ParameterStore store_diff(const ParameterStore& after, const ParameterStore& before)
{
    require_compatible("store_diff", after, before);
    ParameterStore out;
    for (const auto& [name, t] : after) out.insert(name, sub(t, before.at(name)));
    return out;
}

ParameterStore store_add(const ParameterStore& a, const ParameterStore& b)
{
    require_compatible("store_add", a, b);
    ParameterStore out;
    for (const auto& [name, t] : a) out.insert(name, add(t, b.at(name)));
    return out;
}

bool bitwise_equal(const ParameterStore& a, const ParameterStore& b)
{
    if (a.size() != b.size()) return false;
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib)
        if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
    return true;
}

std::uint64_t store_checksum(const ParameterStore& store)
{
    return fnv1a(encode_checkpoint(store));
}

std::string digest_hex(std::uint64_t digest)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
    return buf;
}

}  // namespace modmerge
