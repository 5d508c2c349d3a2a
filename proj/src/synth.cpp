// SPDX-License-Identifier: Apache-2.0

#include "modmerge/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "modmerge/checkpoint.hpp"
#include "modmerge/rng.hpp"
#include "modmerge/tensor_ops.hpp"

namespace modmerge {

std::pair<std::size_t, std::size_t> occupancy_band(const std::string& value)
{
    if (value == "low") return {4, 8};
    if (value == "medium") return {15, 25};
    if (value == "high") return {41, 48};
    throw ConfigError("unknown occupancy value '" + value + "'");
}

Scalar viewpoint_scale(const std::string& value)
{
    if (value == "high") return 4.0;
    if (value == "medium") return 5.5;
    if (value == "low") return 7.0;
    throw ConfigError("unknown viewpoint value '" + value + "'");
}

namespace {

using Rgb = std::array<Scalar, 3>;

Rgb hsv_to_rgb(Scalar h, Scalar s, Scalar v)
{
    const Scalar c = v * s;
    const Scalar hp = h * 6.0;
    const Scalar x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Rgb rgb{};
    switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
    }
    const Scalar m = v - c;
    for (auto& ch : rgb) ch += m;
    return rgb;
}

Rgb random_color(Rng& rng, Scalar vlo, Scalar vhi)
{
    return hsv_to_rgb(rng.uniform(), rng.uniform(0.7, 1.0), rng.uniform(vlo, vhi));
}

Scalar overlap(Scalar a0, Scalar a1, Scalar b0, Scalar b1)
{
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// Paints an anti-aliased square of side `s` centred at (cx, cy) onto a
// [3 x h x w] canvas.
void paint_square(Tensor& canvas, Scalar cx, Scalar cy, Scalar s, const Rgb& color)
{
    const std::size_t h = canvas.dim(1);
    const std::size_t w = canvas.dim(2);
    const Scalar x0 = cx - 0.5 * s, x1 = cx + 0.5 * s;
    const Scalar y0 = cy - 0.5 * s, y1 = cy + 0.5 * s;
    const auto lo_y = static_cast<long long>(std::floor(y0));
    const auto hi_y = static_cast<long long>(std::ceil(y1));
    const auto lo_x = static_cast<long long>(std::floor(x0));
    const auto hi_x = static_cast<long long>(std::ceil(x1));
    for (long long y = std::max(0LL, lo_y); y < std::min<long long>(static_cast<long long>(h), hi_y); ++y) {
        const Scalar cov_y = overlap(static_cast<Scalar>(y), static_cast<Scalar>(y + 1), y0, y1);
        for (long long x = std::max(0LL, lo_x); x < std::min<long long>(static_cast<long long>(w), hi_x); ++x) {
            const Scalar cov = cov_y * overlap(static_cast<Scalar>(x), static_cast<Scalar>(x + 1), x0, x1);
            if (cov <= 0.0) continue;
            for (std::size_t c = 0; c < 3; ++c) {
                Scalar& px = canvas.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                px = (1.0 - cov) * px + cov * color[c];
            }
        }
    }
}

Tensor render_background(const std::string& location, std::size_t size, Rng& rng, const SceneConfig& scene)
{
    Tensor bg({3, size, size});
    const Scalar level = location == "indoor" ? rng.uniform(95.0, 115.0) : rng.uniform(100.0, 125.0);
    const Rgb tint = location == "indoor" ? Rgb{12.0, 4.0, -6.0} : Rgb{-6.0, 10.0, -4.0};
    const Scalar gx = rng.uniform(-8.0, 8.0);
    const Scalar gy = rng.uniform(-8.0, 8.0);
    const Scalar phase = rng.uniform(0.0, 6.283185307179586);
    const auto n = static_cast<Scalar>(size);

    Tensor texture({size, size});
    if (location == "outdoor") {
        Tensor raw({size, size});
        for (auto& v : raw.data()) v = rng.normal() * 14.0;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                Scalar acc = 0.0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long long yy = static_cast<long long>(y) + dy;
                        const long long xx = static_cast<long long>(x) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long long>(size) || xx >= static_cast<long long>(size))
                            continue;
                        acc += raw.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                        ++cnt;
                    }
                texture.at(y, x) = acc / cnt;
            }
    }

    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const Scalar fx = static_cast<Scalar>(x) / n - 0.5;
            const Scalar fy = static_cast<Scalar>(y) / n - 0.5;
            Scalar v = level + gx * fx + gy * fy + texture.at(y, x);
            if (location == "indoor") v += 5.0 * std::sin(6.283185307179586 * (fx + 0.5 * fy) + phase);
            for (std::size_t c = 0; c < 3; ++c) bg.at(c, y, x) = v + tint[c];
        }

    if (location == "outdoor")
        for (std::size_t i = 0; i < scene.clutter; ++i) {
            const Scalar s = rng.uniform(1.5, 2.5);
            const Scalar cx = rng.uniform(1.0, n - 1.0);
            const Scalar cy = rng.uniform(1.0, n - 1.0);
            paint_square(bg, cx, cy, s, random_color(rng, 190.0, 230.0));
        }
    return bg;
}

// Bilinear read of a [3 x n x n] canvas with edge clamping.
Scalar sample(const Tensor& canvas, std::size_t c, Scalar y, Scalar x)
{
    const auto n = static_cast<Scalar>(canvas.dim(1));
    y = std::clamp(y, 0.0, n - 1.0);
    x = std::clamp(x, 0.0, n - 1.0);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, canvas.dim(1) - 1);
    const std::size_t x1 = std::min(x0 + 1, canvas.dim(2) - 1);
    const Scalar ty = y - static_cast<Scalar>(y0);
    const Scalar tx = x - static_cast<Scalar>(x0);
    const Scalar top = canvas.at(c, y0, x0) * (1.0 - tx) + canvas.at(c, y0, x1) * tx;
    const Scalar bot = canvas.at(c, y1, x0) * (1.0 - tx) + canvas.at(c, y1, x1) * tx;
    return top * (1.0 - ty) + bot * ty;
}

struct SceneObject {
    Scalar cx, cy, vx, vy, size;
    Rgb color;
};

}  // namespace

SyntheticSequence generate_sequence(const AttributeSchema& schema, const RoutingQuery& tags, std::size_t length,
                                    std::uint64_t seed, const SceneConfig& scene)
{
    if (!(schema == AttributeSchema::default_schema()))
        throw ConfigError("the synthetic generator only renders the default attribute schema");
    if (length == 0) throw ConfigError("sequence length must be at least 1");
    if (scene.frame_size < 16 || scene.frame_size % 4 != 0)
        throw ConfigError("frame size must be a multiple of 4 and at least 16");

    const std::size_t size = scene.frame_size;
    const auto n = static_cast<Scalar>(size);
    const bool dark = tags.value("lighting") == "bad";
    const bool moving = tags.value("motion") == "moving";
    const Scalar jitter = moving ? scene.camera_jitter : 0.0;

    Rng rng(derive_seed(seed, "scene"));
    const Tensor bg = render_background(tags.value("location"), size, rng, scene);

    const auto [lo, hi] = occupancy_band(tags.value("occupancy"));
    const auto count = static_cast<std::size_t>(rng.between(static_cast<long long>(lo), static_cast<long long>(hi)));
    const Scalar scale = viewpoint_scale(tags.value("viewpoint"));

    std::vector<SceneObject> objects;
    for (std::size_t i = 0; i < count; ++i) {
        SceneObject o{};
        o.size = scale * rng.uniform(0.9, 1.1);
        const Scalar margin = 0.5 * o.size + scene.camera_jitter + 1.0;
        for (int attempt = 0; attempt < 200; ++attempt) {
            o.cx = rng.uniform(margin, n - margin);
            o.cy = rng.uniform(margin, n - margin);
            const bool clear = std::none_of(objects.begin(), objects.end(), [&](const SceneObject& p) {
                return std::hypot(p.cx - o.cx, p.cy - o.cy) < 0.85 * std::max(p.size, o.size);
            });
            if (clear) break;
        }
        o.vx = rng.uniform(-scene.max_speed, scene.max_speed);
        o.vy = rng.uniform(-scene.max_speed, scene.max_speed);
        o.color = random_color(rng, 200.0, 240.0);
        objects.push_back(o);
    }

    SyntheticSequence seq;
    seq.tags = tags.selected();
    seq.seed = seed;
    const Scalar gain = dark ? scene.dark_gain : 1.0;
    for (std::size_t t = 0; t < length; ++t) {
        const Scalar ox = moving ? rng.uniform(-jitter, jitter) : 0.0;
        const Scalar oy = moving ? rng.uniform(-jitter, jitter) : 0.0;

        Tensor frame({3, size, size});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x)
                    frame.at(c, y, x) = sample(bg, c, static_cast<Scalar>(y) - oy, static_cast<Scalar>(x) - ox);

        FrameBoxes boxes;
        for (std::size_t i = 0; i < objects.size(); ++i) {
            const SceneObject& o = objects[i];
            paint_square(frame, o.cx + ox, o.cy + oy, o.size, o.color);
            boxes.push_back({static_cast<int>(i + 1),
                             Box{o.cx + ox - 0.5 * o.size, o.cy + oy - 0.5 * o.size, o.size, o.size}});
        }

        if (moving) {
            Tensor blurred(frame.shape());
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < size; ++y)
                    for (std::size_t x = 0; x < size; ++x) {
                        Scalar acc = 0.0;
                        for (int k = -2; k <= 2; ++k) {
                            const auto xx = std::clamp<long long>(static_cast<long long>(x) + k, 0,
                                                                  static_cast<long long>(size) - 1);
                            acc += frame.at(c, y, static_cast<std::size_t>(xx));
                        }
                        blurred.at(c, y, x) = acc / 5.0;
                    }
            frame = std::move(blurred);
        }

        for (auto& v : frame.data()) v = std::clamp(gain * v + scene.noise * rng.normal(), 0.0, 255.0);
        seq.frames.push_back(std::move(frame));
        seq.gt.push_back(std::move(boxes));

        for (auto& o : objects) {
            const Scalar margin = 0.5 * o.size + scene.camera_jitter + 1.0;
            o.cx += o.vx;
            o.cy += o.vy;
            if (o.cx < margin || o.cx > n - margin) {
                o.vx = -o.vx;
                o.cx = std::clamp(o.cx, margin, n - margin);
            }
            if (o.cy < margin || o.cy > n - margin) {
                o.vy = -o.vy;
                o.cy = std::clamp(o.cy, margin, n - margin);
            }
        }
    }
    return seq;
}

std::vector<RoutingQuery> all_combinations(const AttributeSchema& schema)
{
    std::vector<RoutingQuery> out;
    std::vector<std::size_t> idx(schema.size(), 0);
    const auto& attrs = schema.attributes();
    while (true) {
        std::map<std::string, std::string> sel;
        for (std::size_t i = 0; i < attrs.size(); ++i) sel[attrs[i].name] = attrs[i].values[idx[i]];
        out.emplace_back(schema, std::move(sel));
        std::size_t i = attrs.size();
        while (i > 0) {
            --i;
            if (++idx[i] < attrs[i].values.size()) break;
            idx[i] = 0;
            if (i == 0) return out;
        }
        if (attrs.empty()) return out;
    }
}

CombinationSplit split_combinations(const AttributeSchema& schema, Scalar held_out_fraction, std::uint64_t seed)
{
    if (!(held_out_fraction >= 0.0) || held_out_fraction >= 1.0)
        throw ConfigError("held-out fraction must be in [0, 1)");
    const auto combos = all_combinations(schema);
    std::vector<std::size_t> order(combos.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order);
    const auto held = static_cast<std::size_t>(std::round(held_out_fraction * static_cast<Scalar>(combos.size())));
    std::vector<char> is_held(combos.size(), 0);
    for (std::size_t i = 0; i < held; ++i) is_held[order[i]] = 1;

    CombinationSplit split;
    std::set<ModuleKey> covered;
    for (std::size_t i = 0; i < combos.size(); ++i) {
        if (is_held[i]) {
            split.held_out.push_back(combos[i]);
        } else {
            split.in_domain.push_back(combos[i]);
            for (const auto& [a, v] : combos[i].selected()) covered.insert({a, v});
        }
    }
    for (const auto& key : schema.module_keys())
        if (!covered.count(key))
            throw ConfigError("held-out split leaves module '" + key.str() + "' without in-domain data");
    return split;
}

PatchGrid grid_for(std::size_t frame_size)
{
    if (frame_size == 0 || frame_size % 4 != 0) throw ConfigError("frame size must be a positive multiple of 4");
    PatchGrid g;
    g.rows = frame_size / 4;
    g.cols = frame_size / 4;
    g.cell = 4;
    g.margin = 2;
    return g;
}

std::pair<Tensor, Tensor> cell_targets(const FrameBoxes& boxes, const PatchGrid& grid, const TargetConfig& config)
{
    constexpr std::size_t kOut = 4;
    Tensor targets({grid.count(), kOut});
    Tensor weights({grid.count(), kOut});
    for (std::size_t i = 0; i < grid.count(); ++i) weights[i * kOut] = 1.0;

    const auto cell = static_cast<Scalar>(grid.cell);
    std::vector<Scalar> owner_area(grid.count(), -1.0);
    for (const auto& t : boxes) {
        const Scalar cx = t.box.cx();
        const Scalar cy = t.box.cy();
        if (cx < 0.0 || cy < 0.0) continue;
        const auto col = static_cast<std::size_t>(cx / cell);
        const auto row = static_cast<std::size_t>(cy / cell);
        if (col >= grid.cols || row >= grid.rows) continue;
        const std::size_t k = row * grid.cols + col;
        const Scalar area = t.box.w * t.box.h;
        if (area <= owner_area[k]) continue;
        owner_area[k] = area;
        targets[k * kOut + 0] = 1.0;
        targets[k * kOut + 1] = (cx - (static_cast<Scalar>(col) + 0.5) * cell) / cell;
        targets[k * kOut + 2] = (cy - (static_cast<Scalar>(row) + 0.5) * cell) / cell;
        targets[k * kOut + 3] = std::sqrt(area) / config.size_unit;
        weights[k * kOut + 0] = config.positive_weight;
        for (std::size_t j = 1; j < kOut; ++j) weights[k * kOut + j] = config.box_weight;
    }
    return {std::move(targets), std::move(weights)};
}

Tensor network_input(const Tensor& frame)
{
    Tensor out(frame.shape());
    for (std::size_t i = 0; i < frame.size(); ++i) out[i] = frame[i] / 255.0 - 0.5;
    return out;
}

Dataset make_dataset(const std::vector<SyntheticSequence>& sequences, const PatchGrid& grid,
                     const TargetConfig& config)
{
    Dataset ds;
    ds.grid = grid;
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto& seq = sequences[s];
        for (std::size_t f = 0; f < seq.frames.size(); ++f) {
            Sample sample;
            sample.inputs = network_input(seq.frames[f]);
            auto [t, w] = cell_targets(seq.gt[f], grid, config);
            sample.targets = std::move(t);
            sample.weights = std::move(w);
            sample.tags = seq.tags;
            sample.sequence = s;
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

namespace {

std::string frame_name(std::size_t index)
{
    std::ostringstream os;
    os << "frame.";
    os.width(4);
    os.fill('0');
    os << index;
    return os.str();
}

}  // namespace

void write_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    ParameterStore frames;
    for (std::size_t f = 0; f < seq.frames.size(); ++f) frames.insert(frame_name(f), seq.frames[f]);
    save_checkpoint(frames, dir / "frames.ckpt");

    std::ofstream gt(dir / "gt.txt");
    gt.precision(17);
    for (std::size_t f = 0; f < seq.gt.size(); ++f)
        for (const auto& t : seq.gt[f])
            gt << f << ',' << t.id << ',' << t.box.x << ',' << t.box.y << ',' << t.box.w << ',' << t.box.h << '\n';

    std::ofstream tags(dir / "tags.txt");
    tags << "seed=" << seq.seed << '\n';
    for (const auto& [a, v] : seq.tags) tags << a << '=' << v << '\n';
    if (!gt || !tags) throw DataError("failed to write sequence to '" + dir.string() + "'");
}

SyntheticSequence read_sequence(const std::filesystem::path& dir)
{
    SyntheticSequence seq;
    const ParameterStore frames = load_checkpoint(dir / "frames.ckpt");
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::string name = frame_name(f);
        if (!frames.contains(name)) throw DataError("frames.ckpt lacks '" + name + "'");
        seq.frames.push_back(frames.at(name));
    }
    seq.gt.resize(seq.frames.size());

    std::ifstream gt(dir / "gt.txt");
    if (!gt) throw DataError("missing '" + (dir / "gt.txt").string() + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(gt, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::size_t f = 0;
        TrackedBox t;
        char c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0;
        if (!(is >> f >> c1 >> t.id >> c2 >> t.box.x >> c3 >> t.box.y >> c4 >> t.box.w >> c5 >> t.box.h) ||
            c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',' || f >= seq.gt.size())
            throw DataError("gt.txt line " + std::to_string(lineno) + " is malformed");
        seq.gt[f].push_back(t);
    }

    std::ifstream tags(dir / "tags.txt");
    if (!tags) throw DataError("missing '" + (dir / "tags.txt").string() + "'");
    while (std::getline(tags, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("tags.txt line '" + line + "' lacks '='");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "seed") {
            try {
                seq.seed = std::stoull(value);
            } catch (const std::exception&) {
                throw DataError("tags.txt has a malformed seed");
            }
        } else {
            seq.tags[key] = value;
        }
    }
    return seq;
}

}  // namespace modmerge
