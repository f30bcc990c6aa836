#pragma once

// Independent oracles used by the test suites. Everything here is brute
// force on purpose and must stay decoupled from the library implementations
// it checks.

#include "lgcvs/geometry.hpp"

#include <functional>
#include <random>
#include <vector>

namespace oracle {

// IoU by counting pixels on an upsampled raster.
inline double pixel_count_iou(const lgcvs::Box& a, const lgcvs::Box& b, int scale = 100) {
    const double x0 = std::min(a.x1, b.x1), y0 = std::min(a.y1, b.y1);
    const double x1 = std::max(a.x2, b.x2), y1 = std::max(a.y2, b.y2);
    const int w = static_cast<int>(std::ceil((x1 - x0) * scale)) + 1;
    const int h = static_cast<int>(std::ceil((y1 - y0) * scale)) + 1;
    long inter = 0, uni = 0;
    for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px) {
            const double x = x0 + (px + 0.5) / scale;
            const double y = y0 + (py + 0.5) / scale;
            const bool ina = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
            const bool inb = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
            inter += ina && inb;
            uni += ina || inb;
        }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

// Closed-form gIoU, written independently of lgcvs::giou.
inline double closed_form_giou(const lgcvs::Box& a, const lgcvs::Box& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
    const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    const double uni = area_a + area_b - inter;
    const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    const double carea = cw * ch;
    const double iou = uni > 0 ? inter / uni : 0.0;
    if (carea <= 0) return iou;
    return iou - (carea - uni) / carea;
}

// Min/max scan over set pixels; exclusive-max convention.
inline lgcvs::Box scan_tight_box(const lgcvs::BinaryMask& m) {
    int minx = 1 << 30, miny = 1 << 30, maxx = -1, maxy = -1;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) {
                minx = std::min(minx, x);
                miny = std::min(miny, y);
                maxx = std::max(maxx, x);
                maxy = std::max(maxy, y);
            }
    return lgcvs::Box(minx, miny, maxx + 1, maxy + 1);
}

// Recursive flood fill, 4-connected, as a cross-check on BFS labeling.
inline std::vector<lgcvs::BinaryMask> flood_fill_components(const lgcvs::BinaryMask& mask) {
    std::vector<lgcvs::BinaryMask> out;
    lgcvs::BinaryMask visited(mask.width, mask.height);
    std::function<void(int, int, lgcvs::BinaryMask&)> fill = [&](int x, int y,
                                                                 lgcvs::BinaryMask& comp) {
        if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) return;
        if (!mask.at(x, y) || visited.at(x, y)) return;
        visited.set(x, y);
        comp.set(x, y);
        fill(x - 1, y, comp);
        fill(x + 1, y, comp);
        fill(x, y - 1, comp);
        fill(x, y + 1, comp);
    };
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y) && !visited.at(x, y)) {
                lgcvs::BinaryMask comp(mask.width, mask.height);
                fill(x, y, comp);
                out.push_back(std::move(comp));
            }
    return out;
}

// Brute-force gIoU-ranked edge selection: for every node, its E highest-gIoU
// partners (ties by lower partner index), union over nodes, canonical i<j.
inline std::vector<std::pair<int, int>> brute_force_edge_selection(
    const std::vector<lgcvs::Box>& boxes, int e) {
    const int n = static_cast<int>(boxes.size());
    std::vector<std::pair<int, int>> result;
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> ranked;
        for (int j = 0; j < n; ++j)
            if (j != i) ranked.push_back({lgcvs::giou(boxes[i], boxes[j]), j});
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int k = 0; k < std::min<int>(e, static_cast<int>(ranked.size())); ++k) {
            int a = i, b = ranked[k].second;
            if (a > b) std::swap(a, b);
            if (std::find(result.begin(), result.end(), std::make_pair(a, b)) == result.end())
                result.push_back({a, b});
        }
    }
    std::sort(result.begin(), result.end());
    return result;
}

inline lgcvs::Box random_box(std::mt19937_64& rng, double extent = 20.0) {
    std::uniform_real_distribution<double> d(0.0, extent);
    double xa = d(rng), xb = d(rng), ya = d(rng), yb = d(rng);
    return lgcvs::Box(std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb));
}

}  // namespace oracle
