// SPDX-License-Identifier: Apache-2.0

#include "modmerge/inventory.hpp"

#include "modmerge/checkpoint.hpp"

namespace modmerge {

bool ModuleAdapters::same_layout(const ModuleAdapters& other) const
{
    if (lora.size() != other.lora.size() || scale_shift.size() != other.scale_shift.size()) return false;
    for (const auto& [target, ad] : lora) {
        auto it = other.lora.find(target);
        if (it == other.lora.end() || it->second.a().shape() != ad.a().shape() ||
            it->second.b().shape() != ad.b().shape())
            return false;
    }
    for (const auto& [target, ad] : scale_shift) {
        auto it = other.scale_shift.find(target);
        if (it == other.scale_shift.end() || it->second.channels() != ad.channels()) return false;
    }
    return true;
}

std::size_t ModuleAdapters::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& [_, ad] : lora) n += ad.a().size() + ad.b().size();
    for (const auto& [_, ad] : scale_shift) n += ad.gamma().size() + ad.beta().size();
    return n;
}

ParameterStore ModuleAdapters::to_store(const ModuleKey& key) const
{
    const std::string prefix = key.str() + ".";
    ParameterStore store;
    for (const auto& [target, ad] : lora) {
        store.insert(prefix + target + ".A", ad.a());
        store.insert(prefix + target + ".B", ad.b());
    }
    for (const auto& [target, ad] : scale_shift) {
        store.insert(prefix + target + ".gamma", ad.gamma());
        store.insert(prefix + target + ".beta", ad.beta());
    }
    return store;
}

ModuleAdapters ModuleAdapters::from_store(const ModuleKey& key, const ParameterStore& store)
{
    const std::string prefix = key.str() + ".";
    std::map<std::string, std::map<std::string, Tensor>> by_target;
    for (const auto& [name, t] : store) {
        if (name.compare(0, prefix.size(), prefix) != 0)
            throw DataError("tensor '" + name + "' does not belong to module '" + key.str() + "'");
        const std::string rest = name.substr(prefix.size());
        const auto dot = rest.rfind('.');
        if (dot == std::string::npos || dot == 0) throw DataError("malformed adapter tensor name '" + name + "'");
        by_target[rest.substr(0, dot)][rest.substr(dot + 1)] = t;
    }

    ModuleAdapters out;
    for (auto& [target, parts] : by_target) {
        try {
            if (parts.size() == 2 && parts.count("A") && parts.count("B")) {
                out.lora.emplace(target, LoraAdapter(target, parts.at("A"), parts.at("B")));
            } else if (parts.size() == 2 && parts.count("gamma") && parts.count("beta")) {
                out.scale_shift.emplace(target, ScaleShiftAdapter(target, parts.at("gamma"), parts.at("beta")));
            } else {
                throw DataError("target '" + target + "' needs either {A, B} or {gamma, beta}");
            }
        } catch (const std::invalid_argument& e) {
            throw DataError("module '" + key.str() + "': " + e.what());
        }
    }
    return out;
}

ModuleInventory::ModuleInventory(AttributeSchema schema) : schema_(std::move(schema)) {}

void ModuleInventory::set(const ModuleKey& key, ModuleAdapters adapters)
{
    if (!schema_.has(key.attribute, key.value)) throw ConfigError("module '" + key.str() + "' is not in the schema");
    modules_[key] = std::move(adapters);
}

const ModuleAdapters& ModuleInventory::at(const ModuleKey& key) const
{
    auto it = modules_.find(key);
    if (it == modules_.end()) throw DataError("inventory has no module '" + key.str() + "'");
    return it->second;
}

ModuleAdapters& ModuleInventory::at(const ModuleKey& key)
{
    auto it = modules_.find(key);
    if (it == modules_.end()) throw DataError("inventory has no module '" + key.str() + "'");
    return it->second;
}

bool ModuleInventory::complete() const
{
    for (const auto& key : schema_.module_keys())
        if (!modules_.count(key)) return false;
    return true;
}

std::uint64_t ModuleInventory::checksum(const ModuleKey& key) const
{
    return store_checksum(at(key).to_store(key));
}

void ModuleInventory::save(const std::filesystem::path& dir) const
{
    std::filesystem::create_directories(dir);
    for (const auto& [key, adapters] : modules_) save_checkpoint(adapters.to_store(key), dir / file_name(key));
}

ModuleInventory ModuleInventory::load(const AttributeSchema& schema, const std::filesystem::path& dir)
{
    ModuleInventory inv(schema);
    for (const auto& key : schema.module_keys()) {
        const auto path = dir / file_name(key);
        if (!std::filesystem::exists(path)) throw DataError("missing module checkpoint '" + path.string() + "'");
        inv.set(key, ModuleAdapters::from_store(key, load_checkpoint(path)));
    }
    return inv;
}

}  // namespace modmerge
