// SPDX-License-Identifier: Apache-2.0
//
// Attribute schema, routing queries, and the routing strategies that turn a
// query into per-attribute module weights.

#pragma once

#include <compare>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "modmerge/tensor.hpp"

namespace modmerge {

struct Attribute {
    std::string name;
    std::vector<std::string> values;  // R(i), in schema order

    friend bool operator==(const Attribute&, const Attribute&) = default;
};

struct ModuleKey {
    std::string attribute;
    std::string value;

    std::string str() const { return attribute + "." + value; }
    friend auto operator<=>(const ModuleKey&, const ModuleKey&) = default;
};

class AttributeSchema {
public:
    /// Throws ConfigError on duplicate attribute names, empty or repeated values.
    explicit AttributeSchema(std::vector<Attribute> attributes);

    /// lighting{good,bad}, viewpoint{high,medium,low}, occupancy{low,medium,high},
    /// location{indoor,outdoor}, motion{moving,static}.
    static AttributeSchema default_schema();

    const std::vector<Attribute>& attributes() const noexcept { return attributes_; }
    std::size_t size() const noexcept { return attributes_.size(); }
    const Attribute& attribute(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;
    std::size_t value_index(const std::string& attribute, const std::string& value) const;
    bool has(const std::string& attribute, const std::string& value) const;

    /// Every (attribute, value) pair in schema order; |M| entries.
    std::vector<ModuleKey> module_keys() const;
    std::size_t module_count() const;

    friend bool operator==(const AttributeSchema&, const AttributeSchema&) = default;

private:
    std::vector<Attribute> attributes_;
};

/// The Domain Expert's selection: one legal value per attribute.
class RoutingQuery {
public:
    /// Throws ConfigError if an attribute is missing, unknown, or has an illegal value.
    RoutingQuery(const AttributeSchema& schema, std::map<std::string, std::string> selected);

    const std::string& value(const std::string& attribute) const { return selected_.at(attribute); }
    const std::map<std::string, std::string>& selected() const noexcept { return selected_; }
    std::string str() const;

    friend bool operator==(const RoutingQuery&, const RoutingQuery&) = default;

private:
    std::map<std::string, std::string> selected_;
};

struct AttributeWeights {
    std::string attribute;
    std::vector<std::pair<std::string, Scalar>> weights;  // schema value order

    Scalar weight(const std::string& value) const;
    Scalar sum() const;
    friend bool operator==(const AttributeWeights&, const AttributeWeights&) = default;
};

/// Per-attribute convex weights over that attribute's modules.
struct RoutingWeights {
    std::vector<AttributeWeights> attributes;  // schema attribute order

    const AttributeWeights& at(const std::string& attribute) const;
    friend bool operator==(const RoutingWeights&, const RoutingWeights&) = default;
};

/// rho on the selected value, (1 - rho) / (|R(i)| - 1) on every other value.
/// Requires 0 < rho <= 1 (NumericError) and, when rho < 1, at least two
/// values per attribute (ConfigError).
RoutingWeights soft_route(const AttributeSchema& schema, const RoutingQuery& query, Scalar rho);

/// One-hot on the selection; identical to soft_route with rho = 1.
RoutingWeights hard_route(const AttributeSchema& schema, const RoutingQuery& query);

/// Replaces every selected value by its cyclic successor in schema order
/// (the other value, for binary attributes). ConfigError on singleton attributes.
RoutingQuery opposite_route(const AttributeSchema& schema, const RoutingQuery& query);

/// Same, but only for one attribute; the others keep their selection.
RoutingQuery opposite_route(const AttributeSchema& schema, const RoutingQuery& query, const std::string& attribute);

/// Uniform 1/|R(i)| on every value of every attribute.
RoutingWeights all_modules_route(const AttributeSchema& schema);

/// Lighting boundary on the mean HSV value channel (0..255).
inline constexpr Scalar kLightingThreshold = 70.0;
/// Detections count towards occupancy when their confidence exceeds this.
inline constexpr Scalar kOccupancyConfidence = 0.2;
inline constexpr std::size_t kOccupancyLowMax = 10;
inline constexpr std::size_t kOccupancyMediumMax = 40;

/// "bad" below 70, "good" from 70 upwards. NumericError outside [0, 255].
std::string classify_lighting(Scalar mean_brightness);

/// Counts scores above 0.2: <= 10 low, <= 40 medium, otherwise high.
std::string classify_occupancy(std::span<const Scalar> confidences);

/// Mean over pixels of max(R, G, B) for an image tensor [3 x H x W] on 0..255.
Scalar mean_hsv_value(const Tensor& rgb);

}  // namespace modmerge
