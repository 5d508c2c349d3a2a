// SPDX-License-Identifier: Apache-2.0

#include "modmerge/routing.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace modmerge {

AttributeSchema::AttributeSchema(std::vector<Attribute> attributes) : attributes_(std::move(attributes))
{
    std::set<std::string> names;
    for (const auto& a : attributes_) {
        if (a.name.empty() || a.name.find('.') != std::string::npos)
            throw ConfigError("invalid attribute name '" + a.name + "'");
        if (!names.insert(a.name).second) throw ConfigError("duplicate attribute '" + a.name + "'");
        if (a.values.empty()) throw ConfigError("attribute '" + a.name + "' has no values");
        std::set<std::string> values;
        for (const auto& v : a.values) {
            if (v.empty() || v.find('.') != std::string::npos)
                throw ConfigError("invalid value '" + v + "' for attribute '" + a.name + "'");
            if (!values.insert(v).second) throw ConfigError("attribute '" + a.name + "' repeats value '" + v + "'");
        }
    }
}

AttributeSchema AttributeSchema::default_schema()
{
    return AttributeSchema({
        {"lighting", {"good", "bad"}},
        {"viewpoint", {"high", "medium", "low"}},
        {"occupancy", {"low", "medium", "high"}},
        {"location", {"indoor", "outdoor"}},
        {"motion", {"moving", "static"}},
    });
}

std::size_t AttributeSchema::index_of(const std::string& name) const
{
    for (std::size_t i = 0; i < attributes_.size(); ++i)
        if (attributes_[i].name == name) return i;
    throw ConfigError("unknown attribute '" + name + "'");
}

const Attribute& AttributeSchema::attribute(const std::string& name) const
{
    return attributes_[index_of(name)];
}

std::size_t AttributeSchema::value_index(const std::string& attribute, const std::string& value) const
{
    const auto& values = this->attribute(attribute).values;
    auto it = std::find(values.begin(), values.end(), value);
    if (it == values.end()) throw ConfigError("attribute '" + attribute + "' has no value '" + value + "'");
    return static_cast<std::size_t>(it - values.begin());
}

bool AttributeSchema::has(const std::string& attribute, const std::string& value) const
{
    for (const auto& a : attributes_)
        if (a.name == attribute) return std::find(a.values.begin(), a.values.end(), value) != a.values.end();
    return false;
}

std::vector<ModuleKey> AttributeSchema::module_keys() const
{
    std::vector<ModuleKey> keys;
    for (const auto& a : attributes_)
        for (const auto& v : a.values) keys.push_back({a.name, v});
    return keys;
}

std::size_t AttributeSchema::module_count() const
{
    std::size_t n = 0;
    for (const auto& a : attributes_) n += a.values.size();
    return n;
}

RoutingQuery::RoutingQuery(const AttributeSchema& schema, std::map<std::string, std::string> selected)
    : selected_(std::move(selected))
{
    for (const auto& [attr, value] : selected_)
        if (!schema.has(attr, value)) {
            schema.index_of(attr);  // throws for unknown attributes
            throw ConfigError("attribute '" + attr + "' has no value '" + value + "'");
        }
    for (const auto& a : schema.attributes())
        if (!selected_.count(a.name)) throw ConfigError("query is missing attribute '" + a.name + "'");
}

std::string RoutingQuery::str() const
{
    std::string out;
    for (const auto& [attr, value] : selected_) {
        if (!out.empty()) out += ',';
        out += attr + "=" + value;
    }
    return out;
}

Scalar AttributeWeights::weight(const std::string& value) const
{
    for (const auto& [v, w] : weights)
        if (v == value) return w;
    throw ConfigError("attribute '" + attribute + "' has no value '" + value + "'");
}

Scalar AttributeWeights::sum() const
{
    Scalar s = 0.0;
    for (const auto& [_, w] : weights) s += w;
    return s;
}

const AttributeWeights& RoutingWeights::at(const std::string& attribute) const
{
    for (const auto& a : attributes)
        if (a.attribute == attribute) return a;
    throw ConfigError("no routing weights for attribute '" + attribute + "'");
}

RoutingWeights soft_route(const AttributeSchema& schema, const RoutingQuery& query, Scalar rho)
{
    if (!(rho > 0.0 && rho <= 1.0)) throw NumericError("rho must lie in (0, 1], got " + std::to_string(rho));
    RoutingWeights out;
    for (const auto& a : schema.attributes()) {
        const std::string& selected = query.value(a.name);
        if (rho < 1.0 && a.values.size() < 2)
            throw ConfigError("soft routing with rho < 1 needs two or more values for '" + a.name + "'");
        const Scalar rest = a.values.size() > 1 ? (1.0 - rho) / static_cast<Scalar>(a.values.size() - 1) : 0.0;
        AttributeWeights aw{a.name, {}};
        for (const auto& v : a.values) aw.weights.emplace_back(v, v == selected ? rho : rest);
        out.attributes.push_back(std::move(aw));
    }
    return out;
}

RoutingWeights hard_route(const AttributeSchema& schema, const RoutingQuery& query)
{
    return soft_route(schema, query, 1.0);
}

namespace {

std::string successor(const Attribute& a, const std::string& value)
{
    if (a.values.size() < 2) throw ConfigError("attribute '" + a.name + "' has a single value and no opposite");
    const auto it = std::find(a.values.begin(), a.values.end(), value);
    const auto idx = static_cast<std::size_t>(it - a.values.begin());
    return a.values[(idx + 1) % a.values.size()];
}

}  // namespace

RoutingQuery opposite_route(const AttributeSchema& schema, const RoutingQuery& query)
{
    std::map<std::string, std::string> flipped;
    for (const auto& a : schema.attributes()) flipped[a.name] = successor(a, query.value(a.name));
    return RoutingQuery(schema, std::move(flipped));
}

RoutingQuery opposite_route(const AttributeSchema& schema, const RoutingQuery& query, const std::string& attribute)
{
    auto selected = query.selected();
    selected[attribute] = successor(schema.attribute(attribute), query.value(attribute));
    return RoutingQuery(schema, std::move(selected));
}

RoutingWeights all_modules_route(const AttributeSchema& schema)
{
    RoutingWeights out;
    for (const auto& a : schema.attributes()) {
        const Scalar w = 1.0 / static_cast<Scalar>(a.values.size());
        AttributeWeights aw{a.name, {}};
        for (const auto& v : a.values) aw.weights.emplace_back(v, w);
        out.attributes.push_back(std::move(aw));
    }
    return out;
}

std::string classify_lighting(Scalar mean_brightness)
{
    if (!(mean_brightness >= 0.0 && mean_brightness <= 255.0))
        throw NumericError("brightness must lie in [0, 255], got " + std::to_string(mean_brightness));
    return mean_brightness < kLightingThreshold ? "bad" : "good";
}

std::string classify_occupancy(std::span<const Scalar> confidences)
{
    std::size_t n = 0;
    for (Scalar s : confidences) {
        if (!(s >= 0.0 && s <= 1.0)) throw NumericError("confidence must lie in [0, 1], got " + std::to_string(s));
        if (s > kOccupancyConfidence) ++n;
    }
    if (n <= kOccupancyLowMax) return "low";
    if (n <= kOccupancyMediumMax) return "medium";
    return "high";
}

Scalar mean_hsv_value(const Tensor& rgb)
{
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw ShapeError("mean_hsv_value expects [3 x H x W], got " + shape_to_string(rgb.shape()));
    const std::size_t plane = rgb.dim(1) * rgb.dim(2);
    Scalar total = 0.0;
    for (std::size_t i = 0; i < plane; ++i)
        total += std::max({rgb[i], rgb[plane + i], rgb[2 * plane + i]});
    return total / static_cast<Scalar>(plane);
}

}  // namespace modmerge
