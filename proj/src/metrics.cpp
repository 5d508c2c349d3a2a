// SPDX-License-Identifier: Apache-2.0

#include "modmerge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>

#include "modmerge/errors.hpp"

namespace modmerge {

double iou(const Box& a, const Box& b)
{
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

// Shortest augmenting path with potentials; requires rows <= cols.
std::vector<std::pair<std::size_t, std::size_t>> hungarian(std::span<const double> a, std::size_t n, std::size_t m)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) out.emplace_back(p[j] - 1, j - 1);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> min_cost_assignment(std::span<const double> cost, std::size_t rows,
                                                                     std::size_t cols)
{
    if (cost.size() != rows * cols)
        throw std::invalid_argument("cost matrix has " + std::to_string(cost.size()) + " entries, expected " +
                                    std::to_string(rows * cols));
    if (rows == 0 || cols == 0) return {};
    for (double c : cost)
        if (!std::isfinite(c)) throw NumericError("assignment costs must be finite");
    if (rows <= cols) return hungarian(cost, rows, cols);

    std::vector<double> t(cost.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = cost[r * cols + c];
    auto pairs = hungarian(t, cols, rows);
    for (auto& [a, b] : pairs) std::swap(a, b);
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

FrameMatch match_frame(std::span<const Box> pred, std::span<const Box> gt, double threshold)
{
    if (!(threshold > 0.0) || threshold > 1.0) throw ConfigError("IoU threshold must be in (0, 1]");
    const std::size_t n = pred.size();
    const std::size_t m = gt.size();
    FrameMatch out;

    // Invalid pairs cost more than any full set of valid ones, so the
    // solver first maximizes the number of valid pairs.
    const double forbidden = static_cast<double>(std::min(n, m)) + 1.0;
    std::vector<double> cost(n * m);
    std::vector<char> valid(n * m, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double o = iou(pred[i], gt[j]);
            valid[i * m + j] = o >= threshold;
            cost[i * m + j] = valid[i * m + j] ? 1.0 - o : forbidden;
        }

    std::vector<char> pred_used(n, 0), gt_used(m, 0);
    for (const auto& [i, j] : min_cost_assignment(cost, n, m)) {
        if (!valid[i * m + j]) continue;
        out.pairs.emplace_back(i, j);
        pred_used[i] = 1;
        gt_used[j] = 1;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!pred_used[i]) out.unmatched_pred.push_back(i);
    for (std::size_t j = 0; j < m; ++j)
        if (!gt_used[j]) out.unmatched_gt.push_back(j);
    return out;
}

namespace {

std::vector<Box> boxes_of(const FrameBoxes& frame)
{
    std::vector<Box> out;
    out.reserve(frame.size());
    for (const auto& t : frame) out.push_back(t.box);
    return out;
}

void check_unique_ids(const FrameBoxes& frame, std::size_t index, const char* what)
{
    std::set<int> seen;
    for (const auto& t : frame)
        if (!seen.insert(t.id).second)
            throw DataError(std::string(what) + " frame " + std::to_string(index) + " repeats id " +
                            std::to_string(t.id));
}

}  // namespace

TrackingMetrics evaluate(const std::vector<FrameBoxes>& pred, const std::vector<FrameBoxes>& gt, double threshold)
{
    if (pred.size() != gt.size())
        throw DataError("prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                        std::to_string(gt.size()));
    TrackingMetrics m;
    std::size_t pred_total = 0;
    for (std::size_t f = 0; f < gt.size(); ++f) {
        check_unique_ids(pred[f], f, "prediction");
        check_unique_ids(gt[f], f, "ground truth");
        m.gt += gt[f].size();
        pred_total += pred[f].size();
    }
    if (m.gt == 0) throw DataError("ground truth is empty; MOTA is undefined");

    std::map<int, int> last_match;  // gt id -> pred id of its latest match
    // IDF1 bookkeeping: frames in which (gt id, pred id) overlap above threshold.
    std::map<int, std::size_t> gt_index, pred_index;
    for (const auto& frame : gt)
        for (const auto& t : frame) gt_index.emplace(t.id, gt_index.size());
    for (const auto& frame : pred)
        for (const auto& t : frame) pred_index.emplace(t.id, pred_index.size());
    std::vector<double> overlap(gt_index.size() * pred_index.size(), 0.0);

    for (std::size_t f = 0; f < gt.size(); ++f) {
        const auto pb = boxes_of(pred[f]);
        const auto gb = boxes_of(gt[f]);
        const FrameMatch fm = match_frame(pb, gb, threshold);
        m.fp += fm.unmatched_pred.size();
        m.fn += fm.unmatched_gt.size();
        m.matches += fm.pairs.size();
        for (const auto& [i, j] : fm.pairs) {
            const int gid = gt[f][j].id;
            const int pid = pred[f][i].id;
            auto it = last_match.find(gid);
            if (it != last_match.end() && it->second != pid) ++m.idsw;
            last_match[gid] = pid;
        }
        for (const auto& g : gt[f])
            for (const auto& p : pred[f])
                if (iou(p.box, g.box) >= threshold)
                    overlap[gt_index.at(g.id) * pred_index.size() + pred_index.at(p.id)] += 1.0;
    }
    m.mota = 1.0 - static_cast<double>(m.fp + m.fn + m.idsw) / static_cast<double>(m.gt);

    std::vector<double> cost(overlap.size());
    std::transform(overlap.begin(), overlap.end(), cost.begin(), [](double o) { return -o; });
    for (const auto& [g, p] : min_cost_assignment(cost, gt_index.size(), pred_index.size()))
        m.idtp += static_cast<std::size_t>(overlap[g * pred_index.size() + p]);
    m.idfp = pred_total - m.idtp;
    m.idfn = m.gt - m.idtp;
    m.idf1 = 2.0 * static_cast<double>(m.idtp) / static_cast<double>(pred_total + m.gt);
    return m;
}

}  // namespace modmerge
