// SPDX-License-Identifier: Apache-2.0
//
// Slow, obviously-correct reference implementations used as test oracles.
// Nothing here calls into the library's kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "modmerge/metrics.hpp"
#include "modmerge/tensor.hpp"

namespace oracle {

using modmerge::Box;
using modmerge::FrameBoxes;
using modmerge::Shape;
using modmerge::Tensor;

inline Tensor random_tensor(std::mt19937_64& gen, Shape shape, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(gen);
    return t;
}

// Index helpers written out by hand; the library's Tensor::at is not used.
inline double& el(Tensor& t, std::size_t i, std::size_t j) { return t.data()[i * t.dim(1) + j]; }
inline double el(const Tensor& t, std::size_t i, std::size_t j) { return t.data()[i * t.dim(1) + j]; }

inline Tensor matmul(const Tensor& a, const Tensor& b)
{
    Tensor c({a.dim(0), b.dim(1)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < b.dim(1); ++j) {
            long double s = 0.0L;
            for (std::size_t p = 0; p < a.dim(1); ++p) s += static_cast<long double>(el(a, i, p)) * el(b, p, j);
            el(c, i, j) = static_cast<double>(s);
        }
    return c;
}

inline Tensor matvec(const Tensor& a, const Tensor& x)
{
    Tensor y({a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i) {
        long double s = 0.0L;
        for (std::size_t p = 0; p < a.dim(1); ++p) s += static_cast<long double>(el(a, i, p)) * x[p];
        y[i] = static_cast<double>(s);
    }
    return y;
}

// Direct cross-correlation with zero padding.
inline Tensor conv2d(const Tensor& in, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad)
{
    const std::size_t ci = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({co, oh, ow});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                long double s = b[o];
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t u = 0; u < kh; ++u)
                        for (std::size_t v = 0; v < kw; ++v) {
                            const long long iy = static_cast<long long>(y * stride + u) - static_cast<long long>(pad);
                            const long long ix = static_cast<long long>(x * stride + v) - static_cast<long long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long long>(h) || ix >= static_cast<long long>(wd))
                                continue;
                            s += static_cast<long double>(in.data()[(c * h + iy) * wd + ix]) *
                                 w.data()[((o * ci + c) * kh + u) * kw + v];
                        }
                out.data()[(o * oh + y) * ow + x] = static_cast<double>(s);
            }
    return out;
}

inline double max_abs(const Tensor& a, const Tensor& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double iou(const Box& a, const Box& b)
{
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Minimum cost over all ways of assigning min(rows, cols) distinct pairs.
inline double brute_assignment_cost(const std::vector<double>& cost, std::size_t rows, std::size_t cols)
{
    const bool flip = rows > cols;
    const std::size_t r = flip ? cols : rows, c = flip ? rows : cols;
    auto at = [&](std::size_t i, std::size_t j) { return flip ? cost[j * cols + i] : cost[i * cols + j]; };
    std::vector<std::size_t> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::set<std::vector<std::size_t>> seen;
    do {
        std::vector<std::size_t> head(perm.begin(), perm.begin() + static_cast<long>(r));
        if (!seen.insert(head).second) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < r; ++i) s += at(i, head[i]);
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

struct FrameChoice {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt)
};

// Every matching of valid (IoU >= t) pairs; keeps the largest, then cheapest.
inline FrameChoice brute_frame_match(const std::vector<Box>& pred, const std::vector<Box>& gt, double t)
{
    FrameChoice best;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<std::pair<std::size_t, std::size_t>> cur;
    std::vector<char> used(gt.size(), 0);
    std::function<void(std::size_t, double)> rec = [&](std::size_t p, double cost) {
        if (p == pred.size()) {
            if (cur.size() > best.pairs.size() || (cur.size() == best.pairs.size() && cost < best_cost)) {
                best.pairs = cur;
                best_cost = cost;
            }
            return;
        }
        rec(p + 1, cost);
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (used[g]) continue;
            const double o = oracle::iou(pred[p], gt[g]);
            if (o < t) continue;
            used[g] = 1;
            cur.push_back({p, g});
            rec(p + 1, cost + (1.0 - o));
            cur.pop_back();
            used[g] = 0;
        }
    };
    rec(0, 0.0);
    return best;
}

struct Metrics {
    double mota = 0.0;
    double idf1 = 0.0;
    std::size_t fp = 0, fn = 0, idsw = 0, gt = 0, idtp = 0;
};

// CLEAR MOT with per-frame exhaustive matching and the last-match switch
// rule; IDF1 by enumerating every partial one-to-one gt->pred id mapping.
inline Metrics brute_metrics(const std::vector<FrameBoxes>& pred, const std::vector<FrameBoxes>& gt, double t)
{
    Metrics m;
    std::map<int, int> last;
    std::map<std::pair<int, int>, std::size_t> overlap;
    std::set<int> gids, pids;
    std::size_t npred = 0;
    for (std::size_t f = 0; f < gt.size(); ++f) {
        std::vector<Box> pb, gb;
        for (const auto& b : pred[f]) {
            pb.push_back(b.box);
            pids.insert(b.id);
        }
        for (const auto& b : gt[f]) {
            gb.push_back(b.box);
            gids.insert(b.id);
        }
        npred += pb.size();
        m.gt += gb.size();
        const FrameChoice c = brute_frame_match(pb, gb, t);
        m.fp += pb.size() - c.pairs.size();
        m.fn += gb.size() - c.pairs.size();
        for (const auto& [p, g] : c.pairs) {
            const int gid = gt[f][g].id, pid = pred[f][p].id;
            auto it = last.find(gid);
            if (it != last.end() && it->second != pid) ++m.idsw;
            last[gid] = pid;
        }
        for (const auto& g : gt[f])
            for (const auto& p : pred[f])
                if (oracle::iou(p.box, g.box) >= t) ++overlap[{g.id, p.id}];
    }
    m.mota = 1.0 - static_cast<double>(m.fp + m.fn + m.idsw) / static_cast<double>(m.gt);

    const std::vector<int> g(gids.begin(), gids.end()), p(pids.begin(), pids.end());
    std::vector<char> used(p.size(), 0);
    std::function<std::size_t(std::size_t)> best = [&](std::size_t i) -> std::size_t {
        if (i == g.size()) return 0;
        std::size_t b = best(i + 1);  // g[i] unmapped
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (used[j]) continue;
            used[j] = 1;
            auto it = overlap.find({g[i], p[j]});
            const std::size_t gain = it == overlap.end() ? 0 : it->second;
            b = std::max(b, gain + best(i + 1));
            used[j] = 0;
        }
        return b;
    };
    m.idtp = best(0);
    m.idf1 = 2.0 * static_cast<double>(m.idtp) / static_cast<double>(m.gt + npred);
    return m;
}

// Random tracking instance: up to `tracks` gt tracks over `frames` frames,
// predictions jittered, dropped, swapped and spawned at random.
inline std::pair<std::vector<FrameBoxes>, std::vector<FrameBoxes>> random_instance(std::mt19937_64& gen,
                                                                                   std::size_t tracks,
                                                                                   std::size_t frames)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<FrameBoxes> gt(frames), pred(frames);
    std::vector<Box> base;
    for (std::size_t k = 0; k < tracks; ++k) base.push_back({u(gen) * 20.0, u(gen) * 20.0, 4.0 + 4.0 * u(gen), 4.0 + 4.0 * u(gen)});
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t k = 0; k < tracks; ++k) {
            Box b = base[k];
            b.x += 0.7 * static_cast<double>(f);
            if (u(gen) < 0.85) gt[f].push_back({static_cast<int>(k + 1), b});
            if (u(gen) < 0.8) {
                Box q = b;
                q.x += (u(gen) - 0.5) * 3.0;
                q.y += (u(gen) - 0.5) * 3.0;
                q.w *= 0.8 + 0.4 * u(gen);
                const int id = u(gen) < 0.2 ? static_cast<int>(10 + k + 10 * f) : static_cast<int>(k + 1);
                pred[f].push_back({id, q});
            }
        }
        if (u(gen) < 0.3) pred[f].push_back({99, {u(gen) * 20.0, u(gen) * 20.0, 5.0, 5.0}});
        // ids must stay unique within a frame
        std::set<int> ids;
        FrameBoxes clean;
        for (auto& b : pred[f])
            if (ids.insert(b.id).second) clean.push_back(b);
        pred[f] = clean;
    }
    if (gt[0].empty()) gt[0].push_back({1, base[0]});
    return {pred, gt};
}

}  // namespace oracle
