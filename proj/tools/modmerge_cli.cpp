// SPDX-License-Identifier: Apache-2.0
//
// modmerge: train attribute modules on the toy detector, route, merge, evaluate.
//
//   modmerge <command> --config run.json [options]

#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "modmerge/commands.hpp"

using namespace modmerge;

int main(int argc, char** argv)
{
    CLI::App app{"Attribute-conditioned adapter training, routing and parameter-space merging"};
    app.require_subcommand(1);

    std::string config_path;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "JSON run configuration")->required();
    };

    auto* init = app.add_subcommand("init-base", "bootstrap-train the base network and save it");
    add_config(init);
    auto* gen = app.add_subcommand("gen-data", "write training and evaluation sequences");
    add_config(gen);

    std::string attribute, value;
    auto* train_one = app.add_subcommand("train-module", "train one attribute-value module");
    add_config(train_one);
    train_one->add_option("-a,--attribute", attribute)->required();
    train_one->add_option("-v,--value", value)->required();

    auto* train_all = app.add_subcommand("train-all", "train every module with isolation checks");
    add_config(train_all);

    std::vector<std::string> query_items;
    std::optional<double> rho;
    auto* route = app.add_subcommand("route", "print routing weights for a query");
    add_config(route);
    route->add_option("-q,--query", query_items, "attribute=value, overrides the config query");
    route->add_option("--rho", rho, "weight on the selected value");

    std::string strategy_name;
    std::string out_path;
    auto* merge = app.add_subcommand("merge", "compose a checkpoint from the inventory");
    add_config(merge);
    merge->add_option("-q,--query", query_items, "attribute=value, overrides the config query");
    merge->add_option("-s,--strategy", strategy_name, "mean, weighted or sum");
    merge->add_option("--rho", rho, "weight on the selected value");
    merge->add_option("-o,--out", out_path, "output checkpoint")->required();

    std::optional<std::string> checkpoint;
    std::string set_name = "all";
    auto* eval = app.add_subcommand("eval", "tracking metrics table over the evaluation scenarios");
    add_config(eval);
    eval->add_option("--checkpoint", checkpoint, "evaluate this checkpoint instead of the routed methods");
    eval->add_option("--set", set_name, "in_domain, held_out or all");

    std::size_t cases = 50;
    double step = 1e-6;
    double tolerance = 1e-5;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of adapter gradients");
    add_config(grad);
    grad->add_option("--cases", cases);
    grad->add_option("--step", step, "finite-difference step");
    grad->add_option("--tolerance", tolerance);

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "list tensor names, shapes and digests");
    inspect->add_option("checkpoint", inspect_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (inspect->parsed())
        return cmd::run_guarded([&] { return cmd::inspect(inspect_path); }, std::cout, std::cerr);

    // eval's stdout is the metrics table; its JSON summary lands in the output directory
    std::ostringstream sink;
    std::ostream& result_out = eval->parsed() ? static_cast<std::ostream&>(sink) : std::cout;
    return cmd::run_guarded(
        [&]() -> cmd::Result {
            const RunConfig config = load_run_config(config_path);
            auto query = [&] { return apply_query_overrides(config.query, query_items); };
            if (init->parsed()) return cmd::init_base(config);
            if (gen->parsed()) return cmd::gen_data(config);
            if (train_one->parsed()) return cmd::train_module(config, attribute, value);
            if (train_all->parsed()) return cmd::train_all(config);
            if (route->parsed()) return cmd::route(config, query(), rho.value_or(config.effective_rho(config.strategy)));
            if (merge->parsed()) {
                const Strategy s = strategy_name.empty() ? config.strategy : parse_strategy(strategy_name);
                return cmd::merge(config, query(), s, rho.value_or(config.effective_rho(s)), out_path);
            }
            if (eval->parsed()) {
                std::optional<std::filesystem::path> ckpt;
                if (checkpoint) ckpt = *checkpoint;
                return cmd::eval(config, ckpt, cmd::parse_scenario_set(set_name), std::cout);
            }
            return cmd::gradcheck(config, cases, step, tolerance);
        },
        result_out, std::cerr);
}
