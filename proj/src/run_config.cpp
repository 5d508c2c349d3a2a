// SPDX-License-Identifier: Apache-2.0

#include "modmerge/run_config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace modmerge {

namespace {

using nlohmann::json;

void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where)
{
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

void read_count(const json& obj, const char* key, std::size_t& out, const std::string& where)
{
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + ": expected a non-negative integer");
    out = v.get<std::size_t>();
}

void read_rate(const json& obj, const char* key, Scalar& out, const std::string& where)
{
    read(obj, key, out, where);
    if (!std::isfinite(out) || out < 0.0) throw ConfigError(where + "." + key + ": must be finite and >= 0");
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base_dir)
{
    return p.is_absolute() ? p : base_dir / p;
}

}  // namespace

Scalar RunConfig::effective_rho(Strategy s) const
{
    if (rho) return *rho;
    return s == Strategy::Weighted ? 0.8 : 1.0;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir)
{
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    only_keys(root,
              {"seed", "schema", "query", "strategy", "rho", "paths", "bootstrap", "training", "data", "eval"},
              "config");

    RunConfig c;
    ExperimentConfig& x = c.experiment;
    if (root.contains("seed")) {
        if (!root["seed"].is_number_unsigned()) throw ConfigError("config.seed: expected a non-negative integer");
        x.seed = root["seed"].get<std::uint64_t>();
    }

    if (root.contains("schema")) {
        const json& s = root["schema"];
        if (!s.is_array()) throw ConfigError("config.schema: expected an array");
        std::vector<Attribute> attrs;
        for (const json& a : s) {
            only_keys(a, {"name", "values"}, "config.schema[]");
            Attribute attr;
            read(a, "name", attr.name, "config.schema[]");
            read(a, "values", attr.values, "config.schema[]");
            attrs.push_back(std::move(attr));
        }
        c.schema = AttributeSchema(std::move(attrs));
    }

    read(root, "query", c.query, "config");
    for (const auto& [attr, value] : c.query)
        if (!c.schema.has(attr, value)) throw ConfigError("config.query: " + attr + "=" + value + " is not in the schema");

    if (root.contains("strategy")) {
        std::string s;
        read(root, "strategy", s, "config");
        c.strategy = parse_strategy(s);
    }
    if (root.contains("rho")) {
        Scalar rho = 1.0;
        read(root, "rho", rho, "config");
        if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("config.rho: must lie in (0, 1]");
        c.rho = rho;
    }

    if (root.contains("paths")) {
        const json& p = root["paths"];
        only_keys(p, {"base", "inventory", "data", "output"}, "config.paths");
        std::string v;
        auto path = [&](const char* key, std::filesystem::path& out) {
            if (!p.contains(key)) return;
            read(p, key, v, "config.paths");
            if (v.empty()) throw ConfigError(std::string("config.paths.") + key + ": empty path");
            out = resolve(v, base_dir);
        };
        path("base", c.paths.base);
        path("inventory", c.paths.inventory);
        path("data", c.paths.data);
        path("output", c.paths.output);
    }

    if (root.contains("bootstrap")) {
        const json& b = root["bootstrap"];
        const std::string w = "config.bootstrap";
        only_keys(b, {"lr", "iterations", "fraction"}, w);
        read_rate(b, "lr", x.bootstrap.lr, w);
        read_count(b, "iterations", x.bootstrap.iterations, w);
        read(b, "fraction", x.bootstrap.fraction, w);
        if (!(x.bootstrap.fraction > 0.0 && x.bootstrap.fraction <= 1.0))
            throw ConfigError(w + ".fraction: must lie in (0, 1]");
    }

    if (root.contains("training")) {
        const json& t = root["training"];
        const std::string w = "config.training";
        only_keys(t,
                  {"lora_lr", "lora_weight_decay", "ssf_lr", "ssf_weight_decay", "accumulation", "max_grad_norm",
                   "iterations", "rank"},
                  w);
        TrainingConfig& tc = x.training;
        read_rate(t, "lora_lr", tc.lora_lr, w);
        read_rate(t, "lora_weight_decay", tc.lora_weight_decay, w);
        read_rate(t, "ssf_lr", tc.ssf_lr, w);
        read_rate(t, "ssf_weight_decay", tc.ssf_weight_decay, w);
        read_count(t, "accumulation", tc.accumulation, w);
        read_rate(t, "max_grad_norm", tc.max_grad_norm, w);
        read_count(t, "iterations", tc.iterations, w);
        read_count(t, "rank", tc.rank, w);
        tc.validate();
    }

    if (root.contains("data")) {
        const json& d = root["data"];
        const std::string w = "config.data";
        only_keys(d, {"sequences_per_combination", "length", "held_out_fraction"}, w);
        read_count(d, "sequences_per_combination", x.data.sequences_per_combination, w);
        read_count(d, "length", x.data.length, w);
        read(d, "held_out_fraction", x.data.held_out_fraction, w);
        if (x.data.sequences_per_combination == 0 || x.data.length == 0)
            throw ConfigError(w + ": counts must be at least 1");
        if (!(x.data.held_out_fraction >= 0.0 && x.data.held_out_fraction < 1.0))
            throw ConfigError(w + ".held_out_fraction: must lie in [0, 1)");
    }

    if (root.contains("eval")) {
        const json& e = root["eval"];
        const std::string w = "config.eval";
        only_keys(e, {"length", "scenarios", "rho", "iou_threshold", "objectness"}, w);
        read_count(e, "length", x.bench.length, w);
        read_count(e, "scenarios", x.scenarios, w);
        read(e, "rho", x.bench.rho, w);
        read(e, "iou_threshold", x.bench.iou_threshold, w);
        read(e, "objectness", x.bench.detector.objectness, w);
        if (x.bench.length == 0 || x.scenarios == 0) throw ConfigError(w + ": counts must be at least 1");
        if (!(x.bench.rho > 0.0 && x.bench.rho <= 1.0)) throw ConfigError(w + ".rho: must lie in (0, 1]");
        if (!(x.bench.iou_threshold > 0.0 && x.bench.iou_threshold <= 1.0))
            throw ConfigError(w + ".iou_threshold: must lie in (0, 1]");
        if (!std::isfinite(x.bench.detector.objectness)) throw ConfigError(w + ".objectness: must be finite");
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot read config " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), file.parent_path().empty() ? "." : file.parent_path());
}

std::map<std::string, std::string> apply_query_overrides(std::map<std::string, std::string> base,
                                                         const std::vector<std::string>& items)
{
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
            throw ConfigError("query item \"" + item + "\" is not attribute=value");
        base[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return base;
}

}  // namespace modmerge
