// SPDX-License-Identifier: Apache-2.0

#include "modmerge/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "modmerge/rng.hpp"
#include "modmerge/tensor_ops.hpp"

namespace modmerge {

std::vector<Detection> decode_detections(const Tensor& outputs, const PatchGrid& grid, const DetectorConfig& config)
{
    if (outputs.rank() != 2 || outputs.dim(0) != grid.count() || outputs.dim(1) != 4)
        throw ShapeError("detector outputs " + shape_to_string(outputs.shape()) + ", expected [" +
                         std::to_string(grid.count()) + "x4]");
    const auto cell = static_cast<Scalar>(grid.cell);
    std::vector<Detection> cand;
    for (std::size_t k = 0; k < grid.count(); ++k) {
        const Scalar score = outputs[k * 4];
        if (!(score > config.objectness)) continue;
        const auto row = static_cast<Scalar>(k / grid.cols);
        const auto col = static_cast<Scalar>(k % grid.cols);
        const Scalar cx = (col + 0.5 + outputs[k * 4 + 1]) * cell;
        const Scalar cy = (row + 0.5 + outputs[k * 4 + 2]) * cell;
        const Scalar side = std::clamp(outputs[k * 4 + 3] * config.size_unit, 1.0, 4.0 * cell);
        cand.push_back({Box{cx - 0.5 * side, cy - 0.5 * side, side, side}, score});
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });

    std::vector<Detection> kept;
    for (const auto& d : cand) {
        const bool clear = std::none_of(kept.begin(), kept.end(),
                                        [&](const Detection& k) { return iou(k.box, d.box) > config.nms_iou; });
        if (clear) kept.push_back(d);
    }
    return kept;
}

std::vector<FrameBoxes> track_detections(const std::vector<std::vector<Detection>>& frames, const TrackerConfig& config)
{
    struct Track {
        int id;
        Scalar cx, cy;
        std::size_t missed;
    };
    std::vector<Track> tracks;
    int next_id = 1;
    std::vector<FrameBoxes> out;

    for (const auto& dets : frames) {
        std::vector<std::tuple<Scalar, std::size_t, std::size_t>> pairs;
        for (std::size_t t = 0; t < tracks.size(); ++t)
            for (std::size_t d = 0; d < dets.size(); ++d) {
                const Scalar dist = std::hypot(tracks[t].cx - dets[d].box.cx(), tracks[t].cy - dets[d].box.cy());
                if (dist <= config.gate) pairs.emplace_back(dist, t, d);
            }
        std::sort(pairs.begin(), pairs.end());

        std::vector<char> track_used(tracks.size(), 0), det_used(dets.size(), 0);
        FrameBoxes frame;
        for (const auto& [dist, t, d] : pairs) {
            if (track_used[t] || det_used[d]) continue;
            track_used[t] = det_used[d] = 1;
            tracks[t].cx = dets[d].box.cx();
            tracks[t].cy = dets[d].box.cy();
            tracks[t].missed = 0;
            frame.push_back({tracks[t].id, dets[d].box});
        }
        std::vector<Track> survivors;
        for (std::size_t t = 0; t < tracks.size(); ++t) {
            if (!track_used[t] && ++tracks[t].missed > config.max_age) continue;
            survivors.push_back(tracks[t]);
        }
        for (std::size_t d = 0; d < dets.size(); ++d) {
            if (det_used[d]) continue;
            survivors.push_back({next_id, dets[d].box.cx(), dets[d].box.cy(), 0});
            frame.push_back({next_id++, dets[d].box});
        }
        tracks = std::move(survivors);
        std::sort(frame.begin(), frame.end(), [](const TrackedBox& a, const TrackedBox& b) { return a.id < b.id; });
        out.push_back(std::move(frame));
    }
    return out;
}

std::vector<FrameBoxes> run_tracker(const ToyNetSpec& spec, const ParameterStore& params, const SyntheticSequence& seq,
                                    const DetectorConfig& det, const TrackerConfig& trk)
{
    const ToyNetwork net(spec, params);
    const BatchEvaluator eval(net, Execution::Parallel);
    std::vector<std::vector<Detection>> detections;
    for (const auto& frame : seq.frames) {
        const PatchGrid grid = grid_for(frame.dim(1));
        const Tensor outputs = eval.predict(extract_patches(network_input(frame), grid));
        detections.push_back(decode_detections(outputs, grid, det));
    }
    return track_detections(detections, trk);
}

std::vector<Method> default_methods(const AttributeSchema& schema)
{
    std::vector<Method> m = {
        {"domain_expert", RoutingMode::Hard, Strategy::Mean, ""},
        {"weighted", RoutingMode::Soft, Strategy::Weighted, ""},
        {"all_modules", RoutingMode::All, Strategy::Mean, ""},
        {"opposite", RoutingMode::Opposite, Strategy::Mean, ""},
    };
    for (const auto& a : schema.attributes())
        m.push_back({"opposite_" + a.name, RoutingMode::OppositeSingle, Strategy::Mean, a.name});
    m.push_back({"sum", RoutingMode::Hard, Strategy::Sum, ""});
    m.push_back({"none", RoutingMode::Base, Strategy::Mean, ""});
    return m;
}

ParameterStore compose_for(const ModuleInventory& inventory, const ParameterStore& theta0, const RoutingQuery& query,
                           const Method& method, Scalar rho)
{
    const AttributeSchema& schema = inventory.schema();
    RoutingWeights routing;
    Scalar plan_rho = 1.0;
    switch (method.routing) {
    case RoutingMode::Base: return theta0;
    case RoutingMode::Hard: routing = hard_route(schema, query); break;
    case RoutingMode::Soft:
        routing = soft_route(schema, query, rho);
        plan_rho = rho;
        break;
    case RoutingMode::All: routing = all_modules_route(schema); break;
    case RoutingMode::Opposite: routing = hard_route(schema, opposite_route(schema, query)); break;
    case RoutingMode::OppositeSingle:
        routing = hard_route(schema, opposite_route(schema, query, method.attribute));
        break;
    }
    const auto plan = CompositionPlan::make(schema, method.strategy, std::move(routing), plan_rho);
    return compose_from_inventory(inventory, theta0, plan);
}

std::vector<BenchmarkRow> benchmark_sequence(const ModuleInventory& inventory, const ParameterStore& theta0,
                                             const ToyNetSpec& spec, const SyntheticSequence& seq,
                                             const RoutingQuery& query, std::size_t scenario, bool held_out,
                                             const BenchmarkConfig& config)
{
    const auto methods = config.methods.empty() ? default_methods(inventory.schema()) : config.methods;
    std::vector<BenchmarkRow> rows;
    for (const auto& method : methods) {
        const ParameterStore params = compose_for(inventory, theta0, query, method, config.rho);
        const auto pred = run_tracker(spec, params, seq, config.detector, config.tracker);
        BenchmarkRow row;
        row.scenario = scenario;
        row.tags = query.str();
        row.held_out = held_out;
        row.method = method.name;
        row.strategy = method.routing == RoutingMode::Base ? "none" : to_string(method.strategy);
        row.rho = method.routing == RoutingMode::Soft ? config.rho : 1.0;
        row.metrics = evaluate(pred, seq.gt, config.iou_threshold);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<BenchmarkRow> run_benchmark(const ModuleInventory& inventory, const ParameterStore& theta0,
                                        const ToyNetSpec& spec, std::span<const Scenario> scenarios,
                                        const BenchmarkConfig& config)
{
    std::vector<BenchmarkRow> rows;
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        const Scenario& sc = scenarios[s];
        const SyntheticSequence seq =
            generate_sequence(inventory.schema(), sc.query, config.length, sc.seed, config.scene);
        auto part = benchmark_sequence(inventory, theta0, spec, seq, sc.query, s, sc.held_out, config);
        rows.insert(rows.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return rows;
}

std::vector<Scenario> make_scenarios(std::span<const RoutingQuery> queries, std::size_t count, std::uint64_t seed,
                                     bool held_out)
{
    if (queries.empty()) throw ConfigError("no scenario queries");
    std::vector<std::size_t> order(queries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "scenario-order"));
    rng.shuffle(order);
    std::vector<Scenario> out;
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(
            {queries[order[i % order.size()]], derive_seed(seed, "scenario:" + std::to_string(i)), held_out});
    return out;
}

namespace {

std::pair<Scalar, Scalar> mean_and_se(const std::vector<Scalar>& v)
{
    if (v.empty()) return {0.0, 0.0};
    Scalar mean = 0.0;
    for (Scalar x : v) mean += x;
    mean /= static_cast<Scalar>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    Scalar ss = 0.0;
    for (Scalar x : v) ss += (x - mean) * (x - mean);
    const Scalar sd = std::sqrt(ss / static_cast<Scalar>(v.size() - 1));
    return {mean, sd / std::sqrt(static_cast<Scalar>(v.size()))};
}

bool selected(const BenchmarkRow& r, std::optional<bool> held_out)
{
    return !held_out || r.held_out == *held_out;
}

}  // namespace

std::vector<MethodSummary> summarize(std::span<const BenchmarkRow> rows, std::optional<bool> held_out)
{
    std::vector<std::string> order;
    std::map<std::string, std::vector<Scalar>> mota, idf1;
    for (const auto& r : rows) {
        if (!selected(r, held_out)) continue;
        if (!mota.count(r.method)) order.push_back(r.method);
        mota[r.method].push_back(r.metrics.mota);
        idf1[r.method].push_back(r.metrics.idf1);
    }
    std::vector<MethodSummary> out;
    for (const auto& name : order) {
        MethodSummary s;
        s.method = name;
        s.n = mota[name].size();
        std::tie(s.mean_mota, s.se_mota) = mean_and_se(mota[name]);
        s.mean_idf1 = mean_and_se(idf1[name]).first;
        out.push_back(s);
    }
    return out;
}

std::pair<Scalar, Scalar> paired_difference(std::span<const BenchmarkRow> rows, const std::string& a,
                                            const std::string& b, std::optional<bool> held_out)
{
    std::map<std::size_t, Scalar> va, vb;
    for (const auto& r : rows) {
        if (!selected(r, held_out)) continue;
        if (r.method == a) va[r.scenario] = r.metrics.mota;
        if (r.method == b) vb[r.scenario] = r.metrics.mota;
    }
    std::vector<Scalar> diffs;
    for (const auto& [s, x] : va)
        if (auto it = vb.find(s); it != vb.end()) diffs.push_back(x - it->second);
    return mean_and_se(diffs);
}

void write_results_table(std::ostream& os, std::span<const BenchmarkRow> rows, char delim)
{
    os << "scenario" << delim << "tags" << delim << "split" << delim << "method" << delim << "strategy" << delim
       << "rho" << delim << "mota" << delim << "idf1" << delim << "fp" << delim << "fn" << delim << "idsw" << delim
       << "gt" << '\n';
    const auto old = os.precision(6);
    for (const auto& r : rows) {
        os << r.scenario << delim << r.tags << delim << (r.held_out ? "held_out" : "in_domain") << delim << r.method
           << delim << r.strategy << delim << r.rho << delim << r.metrics.mota << delim << r.metrics.idf1 << delim
           << r.metrics.fp << delim << r.metrics.fn << delim << r.metrics.idsw << delim << r.metrics.gt << '\n';
    }
    os.precision(old);
}

}  // namespace modmerge
