// SPDX-License-Identifier: Apache-2.0
//
// The adapter bank: one ModuleAdapters per (attribute, value) of a schema.
// On disk an inventory is a directory of "<attribute>.<value>.ckpt" files,
// each holding tensors named "<attribute>.<value>.<target>.{A|B|gamma|beta}".

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "modmerge/adapters.hpp"
#include "modmerge/parameter_store.hpp"
#include "modmerge/routing.hpp"

namespace modmerge {

/// All adapters belonging to one attribute-value module, keyed by target layer.
struct ModuleAdapters {
    std::map<std::string, LoraAdapter> lora;
    std::map<std::string, ScaleShiftAdapter> scale_shift;

    /// Same targets with the same shapes.
    bool same_layout(const ModuleAdapters& other) const;
    std::size_t parameter_count() const;

    ParameterStore to_store(const ModuleKey& key) const;
    /// Throws DataError when names or shapes do not form valid adapters.
    static ModuleAdapters from_store(const ModuleKey& key, const ParameterStore& store);

    friend bool operator==(const ModuleAdapters&, const ModuleAdapters&) = default;
};

class ModuleInventory {
public:
    explicit ModuleInventory(AttributeSchema schema);

    const AttributeSchema& schema() const noexcept { return schema_; }

    /// ConfigError if the key is not part of the schema.
    void set(const ModuleKey& key, ModuleAdapters adapters);
    const ModuleAdapters& at(const ModuleKey& key) const;
    ModuleAdapters& at(const ModuleKey& key);
    bool contains(const ModuleKey& key) const { return modules_.count(key) != 0; }

    /// Every schema key has an entry.
    bool complete() const;
    std::size_t size() const noexcept { return modules_.size(); }

    const std::map<ModuleKey, ModuleAdapters>& modules() const noexcept { return modules_; }

    /// Checksum of one module's checkpoint encoding.
    std::uint64_t checksum(const ModuleKey& key) const;

    void save(const std::filesystem::path& dir) const;
    /// DataError naming the first missing "<attribute>.<value>.ckpt".
    static ModuleInventory load(const AttributeSchema& schema, const std::filesystem::path& dir);

    static std::string file_name(const ModuleKey& key) { return key.str() + ".ckpt"; }

private:
    AttributeSchema schema_;
    std::map<ModuleKey, ModuleAdapters> modules_;
};

}  // namespace modmerge
