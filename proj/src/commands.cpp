// SPDX-License-Identifier: Apache-2.0

#include "modmerge/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "modmerge/checkpoint.hpp"
#include "modmerge/rng.hpp"

namespace modmerge::cmd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& need(const fs::path& p, const char* key)
{
    if (p.empty()) throw ConfigError(std::string("config.paths.") + key + " is required for this command");
    return p;
}

const fs::path& existing(const fs::path& p, const char* what)
{
    if (!fs::exists(p)) throw DataError(std::string("missing ") + what + " '" + p.string() + "'");
    return p;
}

void ensure_parent(const fs::path& p)
{
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string seq_dir(const char* split, std::size_t i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return std::string(split) + "/" + buf;
}

ParameterStore load_base(const RunConfig& config)
{
    ParameterStore base = load_checkpoint(existing(need(config.paths.base, "base"), "base checkpoint"));
    ToyNetwork(config.experiment.spec, base);  // shape validation
    return base;
}

json read_manifest(const RunConfig& config)
{
    const fs::path path = existing(need(config.paths.data, "data"), "data directory") / "manifest.json";
    std::ifstream in(existing(path, "data manifest"));
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed data manifest " + path.string() + ": " + e.what());
    }
}

std::vector<SyntheticSequence> read_split(const RunConfig& config, const json& manifest, const char* split)
{
    std::vector<SyntheticSequence> out;
    try {
        for (const auto& item : manifest.at(split))
            out.push_back(read_sequence(config.paths.data / item.at("dir").get<std::string>()));
    } catch (const json::exception& e) {
        throw DataError(std::string("data manifest: bad '") + split + "' list: " + e.what());
    }
    return out;
}

Dataset training_data(const RunConfig& config)
{
    const auto seqs = read_split(config, read_manifest(config), "train");
    if (seqs.empty()) throw DataError("no training sequences in " + config.paths.data.string());
    const auto& d = config.experiment.data;
    return make_dataset(seqs, grid_for(d.scene.frame_size), d.targets);
}

Scalar mean_of(const std::vector<Scalar>& v, std::size_t from, std::size_t to)
{
    to = std::min(to, v.size());
    if (from >= to) return 0.0;
    Scalar s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += v[i];
    return s / static_cast<Scalar>(to - from);
}

RoutingWeights routing_for(const AttributeSchema& schema, const RoutingQuery& q, Scalar rho)
{
    return rho == 1.0 ? hard_route(schema, q) : soft_route(schema, q, rho);
}

Result routing_json(const RoutingWeights& w)
{
    Result out = Result::object();
    for (const auto& a : w.attributes) {
        Result values = Result::object();
        for (const auto& [value, weight] : a.weights) values[value] = weight;
        out[a.attribute] = values;
    }
    return out;
}

Result summary_json(const std::vector<BenchmarkRow>& rows, std::optional<bool> held_out)
{
    Result out = Result::object();
    for (const auto& s : summarize(rows, held_out))
        out[s.method] = {{"n", s.n}, {"mota", s.mean_mota}, {"mota_se", s.se_mota}, {"idf1", s.mean_idf1}};
    return out;
}

}  // namespace

Result init_base(const RunConfig& config)
{
    const ExperimentConfig& x = config.experiment;
    const fs::path& out = need(config.paths.base, "base");
    const CombinationSplit split = split_combinations(config.schema, x.data.held_out_fraction, x.seed);
    const auto seqs = training_sequences(config.schema, split, x.data, x.seed);
    const Dataset dataset = make_dataset(seqs, grid_for(x.data.scene.frame_size), x.data.targets);

    BootstrapConfig boot = x.bootstrap;
    boot.seed = derive_seed(x.seed, "bootstrap");
    const BootstrapResult b =
        bootstrap_base(x.spec, ToyNetwork::random_base(x.spec, derive_seed(x.seed, "base")), dataset, boot);
    ensure_parent(out);
    save_checkpoint(b.base, out);

    const std::size_t n = b.losses.size();
    return {{"command", "init-base"},
            {"base", out.string()},
            {"digest", file_digest(out)},
            {"steps", n},
            {"sequences", b.sequences.size()},
            {"loss_start", mean_of(b.losses, 0, 20)},
            {"loss_end", mean_of(b.losses, n > 20 ? n - 20 : 0, n)}};
}

Result gen_data(const RunConfig& config)
{
    const ExperimentConfig& x = config.experiment;
    const fs::path& dir = need(config.paths.data, "data");
    const CombinationSplit split = split_combinations(config.schema, x.data.held_out_fraction, x.seed);

    json manifest = {{"seed", x.seed}, {"in_domain", json::array()}, {"held_out", json::array()},
                     {"train", json::array()}, {"eval", json::array()}};
    for (const auto& q : split.in_domain) manifest["in_domain"].push_back(q.str());
    for (const auto& q : split.held_out) manifest["held_out"].push_back(q.str());

    const auto train = training_sequences(config.schema, split, x.data, x.seed);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const std::string rel = seq_dir("train", i);
        write_sequence(train[i], dir / rel);
        manifest["train"].push_back({{"dir", rel}, {"tags", RoutingQuery(config.schema, train[i].tags).str()}});
    }

    auto scenarios = make_scenarios(split.in_domain, x.scenarios, derive_seed(x.seed, "eval:in"), false);
    if (!split.held_out.empty()) {
        const auto held = make_scenarios(split.held_out, x.scenarios, derive_seed(x.seed, "eval:held"), true);
        scenarios.insert(scenarios.end(), held.begin(), held.end());
    }
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const Scenario& sc = scenarios[i];
        const std::string rel = seq_dir("eval", i);
        write_sequence(generate_sequence(config.schema, sc.query, x.bench.length, sc.seed, x.bench.scene), dir / rel);
        manifest["eval"].push_back({{"dir", rel}, {"tags", sc.query.str()}, {"held_out", sc.held_out}});
    }

    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    return {{"command", "gen-data"},
            {"data", dir.string()},
            {"combinations", split.in_domain.size() + split.held_out.size()},
            {"in_domain_combinations", split.in_domain.size()},
            {"held_out_combinations", split.held_out.size()},
            {"train_sequences", train.size()},
            {"eval_sequences", scenarios.size()}};
}

Result train_module(const RunConfig& config, const std::string& attribute, const std::string& value)
{
    if (!config.schema.has(attribute, value)) throw ConfigError(attribute + "=" + value + " is not in the schema");
    const ModuleKey key{attribute, value};
    const fs::path& inv_dir = need(config.paths.inventory, "inventory");
    const ToyNetwork net(config.experiment.spec, load_base(config));
    const Dataset dataset = training_data(config);

    TrainingConfig tc = config.experiment.training;
    tc.seed = derive_seed(config.experiment.seed, "modules");
    ModuleInventory inventory(config.schema);
    const fs::path file = inv_dir / ModuleInventory::file_name(key);
    if (fs::exists(file))
        inventory.set(key, ModuleAdapters::from_store(key, load_checkpoint(file)));
    else
        inventory.set(key, net.fresh_module(derive_seed(tc.seed, "init:" + key.str()), tc.rank, tc.min_lora_width));

    const ModuleTrainingResult r = modmerge::train_module(net, inventory, key, dataset, tc);
    fs::create_directories(inv_dir);
    save_checkpoint(inventory.at(key).to_store(key), file);
    const std::size_t n = r.losses.size();
    return {{"command", "train-module"},
            {"module", key.str()},
            {"checkpoint", file.string()},
            {"digest", file_digest(file)},
            {"backward_passes", r.backward_passes},
            {"optimizer_steps", r.optimizer_steps},
            {"loss_start", mean_of(r.losses, 0, 20)},
            {"loss_end", mean_of(r.losses, n > 20 ? n - 20 : 0, n)}};
}

Result train_all(const RunConfig& config)
{
    const fs::path& inv_dir = need(config.paths.inventory, "inventory");
    const fs::path& out_dir = need(config.paths.output, "output");
    const ToyNetwork net(config.experiment.spec, load_base(config));
    const Dataset dataset = training_data(config);

    TrainingConfig tc = config.experiment.training;
    tc.seed = derive_seed(config.experiment.seed, "modules");
    ModuleInventory inventory = fresh_inventory(net, config.schema, tc);
    fs::create_directories(out_dir);
    const fs::path log_path = out_dir / "train_log.jsonl";
    std::ofstream log(log_path);
    const TrainingReport report = train_all_modules(net, inventory, dataset, tc, true, &log);
    if (report.isolation_violations != 0)
        throw NumericError(std::to_string(report.isolation_violations) +
                           " training passes changed the base or a non-target module");
    inventory.save(inv_dir);

    Result counts = Result::object();
    for (const auto& [key, n] : report.backward_counts) counts[key.str()] = n;
    return {{"command", "train-all"},
            {"inventory", inv_dir.string()},
            {"log", log_path.string()},
            {"modules", inventory.size()},
            {"audited_steps", report.audited_steps},
            {"isolation_violations", report.isolation_violations},
            {"histogram_spread", report.histogram_spread()},
            {"backward_counts", counts}};
}

Result route(const RunConfig& config, const std::map<std::string, std::string>& query, Scalar rho)
{
    const RoutingQuery q(config.schema, query);
    return routing_json(routing_for(config.schema, q, rho));
}

Result merge(const RunConfig& config, const std::map<std::string, std::string>& query, Strategy strategy, Scalar rho,
             const fs::path& out)
{
    if (rho != 1.0 && strategy != Strategy::Weighted)
        throw ConfigError(std::string("rho < 1 only applies to the weighted strategy, not ") + to_string(strategy));
    const RoutingQuery q(config.schema, query);
    const fs::path& base_path = need(config.paths.base, "base");
    const fs::path& inv_dir = existing(need(config.paths.inventory, "inventory"), "inventory directory");
    const ParameterStore theta0 = load_base(config);
    const ModuleInventory inventory = ModuleInventory::load(config.schema, inv_dir);

    const CompositionPlan plan = CompositionPlan::make(config.schema, strategy, routing_for(config.schema, q, rho), rho);
    const ParameterStore composed = compose_from_inventory(inventory, theta0, plan);
    ensure_parent(out);
    save_checkpoint(composed, out);

    Result lambdas = Result::object();
    Result module_weights = Result::object();
    Result modules = Result::object();
    for (std::size_t i = 0; i < plan.routing.attributes.size(); ++i) {
        const auto& a = plan.routing.attributes[i];
        lambdas[a.attribute] = plan.lambdas[i];
        for (const auto& [value, w] : a.weights) {
            if (w == 0.0) continue;
            const ModuleKey key{a.attribute, value};
            module_weights[key.str()] = plan.lambdas[i] * w;
            modules[key.str()] = file_digest(inv_dir / ModuleInventory::file_name(key));
        }
    }
    Result manifest = {{"strategy", to_string(strategy)},
                       {"rho", rho},
                       {"query", q.str()},
                       {"lambdas", lambdas},
                       {"routing", routing_json(plan.routing)},
                       {"module_weights", module_weights},
                       {"inputs", {{"base", file_digest(base_path)}, {"modules", modules}}},
                       {"output", file_digest(out)}};
    const fs::path manifest_path = out.string() + ".manifest.json";
    std::ofstream(manifest_path, std::ios::binary) << manifest.dump(2) << '\n';

    return {{"command", "merge"},
            {"checkpoint", out.string()},
            {"manifest", manifest_path.string()},
            {"digest", file_digest(out)},
            {"base_digest", file_digest(base_path)}};
}

ScenarioSet parse_scenario_set(const std::string& s)
{
    if (s == "in_domain") return ScenarioSet::InDomain;
    if (s == "held_out") return ScenarioSet::HeldOut;
    if (s == "all") return ScenarioSet::All;
    throw ConfigError("unknown scenario set \"" + s + "\" (in_domain, held_out, all)");
}

Result eval(const RunConfig& config, const std::optional<fs::path>& checkpoint, ScenarioSet set, std::ostream& table)
{
    const ExperimentConfig& x = config.experiment;
    const fs::path& out_dir = need(config.paths.output, "output");
    const json manifest = read_manifest(config);

    std::optional<ParameterStore> single;
    std::optional<ParameterStore> theta0;
    std::optional<ModuleInventory> inventory;
    if (checkpoint) {
        single = load_checkpoint(existing(*checkpoint, "checkpoint"));
        ToyNetwork(x.spec, *single);
    } else {
        theta0 = load_base(config);
        inventory = ModuleInventory::load(config.schema,
                                          existing(need(config.paths.inventory, "inventory"), "inventory directory"));
    }

    std::vector<BenchmarkRow> rows;
    std::size_t index = 0;
    try {
        for (const auto& item : manifest.at("eval")) {
            const bool held = item.at("held_out").get<bool>();
            if ((set == ScenarioSet::InDomain && held) || (set == ScenarioSet::HeldOut && !held)) continue;
            const SyntheticSequence seq = read_sequence(config.paths.data / item.at("dir").get<std::string>());
            const RoutingQuery q(config.schema, seq.tags);
            if (single) {
                BenchmarkRow row;
                row.scenario = index;
                row.tags = q.str();
                row.held_out = held;
                row.method = "checkpoint";
                row.strategy = "-";
                row.metrics = evaluate(run_tracker(x.spec, *single, seq, x.bench.detector, x.bench.tracker), seq.gt,
                                       x.bench.iou_threshold);
                rows.push_back(std::move(row));
            } else {
                auto part = benchmark_sequence(*inventory, *theta0, x.spec, seq, q, index, held, x.bench);
                rows.insert(rows.end(), part.begin(), part.end());
            }
            ++index;
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("data manifest: bad 'eval' list: ") + e.what());
    }
    if (rows.empty()) throw DataError("no evaluation scenarios in the selected set");

    write_results_table(table, rows);
    fs::create_directories(out_dir);
    std::ofstream file(out_dir / "eval.tsv");
    write_results_table(file, rows);

    Result result = {{"command", "eval"},
                     {"scenarios", index},
                     {"table", (out_dir / "eval.tsv").string()},
                     {"all", summary_json(rows, std::nullopt)},
                     {"in_domain", summary_json(rows, false)},
                     {"held_out", summary_json(rows, true)}};
    std::ofstream(out_dir / "eval_summary.json") << result.dump(2) << '\n';
    return result;
}

Result gradcheck(const RunConfig& config, std::size_t cases, Scalar h, Scalar tolerance)
{
    if (cases == 0) throw ConfigError("gradcheck needs at least one case");
    const auto errors = random_gradcheck(cases, derive_seed(config.experiment.seed, "gradcheck"), h);
    const Scalar worst = *std::max_element(errors.begin(), errors.end());
    if (!(worst < tolerance)) {
        std::ostringstream msg;
        msg << "gradient check failed: max relative error " << worst << " >= " << tolerance;
        throw NumericError(msg.str());
    }
    return {{"command", "gradcheck"}, {"cases", cases}, {"h", h}, {"tolerance", tolerance}, {"max_rel_error", worst}};
}

Result inspect(const fs::path& checkpoint)
{
    const ParameterStore store = load_checkpoint(existing(checkpoint, "checkpoint"));
    Result tensors = Result::array();
    std::size_t total = 0;
    for (const auto& [name, t] : store) {
        ParameterStore one;
        one.insert(name, t);
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"digest", digest_hex(store_checksum(one))}});
        total += t.size();
    }
    return {{"command", "inspect"},
            {"checkpoint", checkpoint.string()},
            {"digest", file_digest(checkpoint)},
            {"tensors", store.size()},
            {"parameters", total},
            {"entries", tensors}};
}

int exit_code(const std::exception& e)
{
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 3;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
    return 1;
}

int run_guarded(const std::function<Result()>& body, std::ostream& out, std::ostream& err)
{
    try {
        out << body().dump(2) << '\n';
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e);
    }
}

}  // namespace modmerge::cmd
