#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

namespace lgcvs {

// Axis-aligned box in continuous pixel coordinates, origin top-left.
// Pixel-edge convention: x2/y2 are exclusive, area = (x2-x1)*(y2-y1).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    Box() = default;
    Box(double x1_, double y1_, double x2_, double y2_) : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {}

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    bool valid() const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
               x1 <= x2 && y1 <= y2;
    }

    Box clipped(double w, double h) const {
        return Box(std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h),
                   std::clamp(x2, 0.0, w), std::clamp(y2, 0.0, h));
    }

    bool operator==(const Box& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
    }
};

// Relation classes: 0 is the no-relation/background class.
enum class RelationClass : int {
    None = 0,
    LeftRight = 1,
    UpDown = 2,
    InsideOutside = 3,
};

constexpr int kNumRelationClasses = 4;

inline double intersection_area(const Box& a, const Box& b) {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (w <= 0 || h <= 0) return 0;
    return w * h;
}

inline double iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0;
    return inter / uni;
}

inline Box union_box(const Box& a, const Box& b) {
    return Box(std::min(a.x1, b.x1), std::min(a.y1, b.y1),
               std::max(a.x2, b.x2), std::max(a.y2, b.y2));
}

// Generalized IoU: IoU minus the fraction of the enclosing box not covered
// by the union. In (-1, 1], equal to IoU when the enclosing box is the union.
inline double giou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    const Box c = union_box(a, b);
    const double ca = c.area();
    const double i = uni > 0 ? inter / uni : 0.0;
    if (ca <= 0) return i;
    return i - (ca - uni) / ca;
}

// Deterministic, symmetric relation rule. Containment test first
// (intersection / smaller area >= 0.8 -> inside-outside), then the dominant
// center-displacement axis; |dx| == |dy| ties resolve to left-right.
inline RelationClass relation_rule(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double smaller = std::min(a.area(), b.area());
    if (smaller > 0 && inter / smaller >= 0.8) return RelationClass::InsideOutside;
    const double dx = std::abs(a.cx() - b.cx());
    const double dy = std::abs(a.cy() - b.cy());
    return dx >= dy ? RelationClass::LeftRight : RelationClass::UpDown;
}

struct BinaryMask {
    int width = 0, height = 0;
    std::vector<uint8_t> grid;  // row-major, 0/1

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), grid(static_cast<size_t>(w) * h, 0) {}

    uint8_t at(int x, int y) const { return grid[static_cast<size_t>(y) * width + x]; }
    void set(int x, int y, uint8_t v = 1) { grid[static_cast<size_t>(y) * width + x] = v; }

    long area() const {
        long n = 0;
        for (uint8_t v : grid) n += v != 0;
        return n;
    }

    bool operator==(const BinaryMask& o) const {
        return width == o.width && height == o.height && grid == o.grid;
    }
};

// 4-connected components, sorted by descending area; ties by first set pixel
// in row-major scan order.
inline std::vector<BinaryMask> connected_components(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<int> label(static_cast<size_t>(w) * h, -1);
    struct Comp {
        BinaryMask m;
        long area = 0;
        long first = 0;
    };
    std::vector<Comp> comps;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t idx = static_cast<size_t>(y) * w + x;
            if (!mask.grid[idx] || label[idx] >= 0) continue;
            const int id = static_cast<int>(comps.size());
            comps.push_back({BinaryMask(w, h), 0, static_cast<long>(idx)});
            label[idx] = id;
            queue.push_back({x, y});
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                comps[id].m.set(cx, cy);
                ++comps[id].area;
                const int nx[4] = {cx - 1, cx + 1, cx, cx};
                const int ny[4] = {cy, cy, cy - 1, cy + 1};
                for (int k = 0; k < 4; ++k) {
                    if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
                    const size_t nidx = static_cast<size_t>(ny[k]) * w + nx[k];
                    if (mask.grid[nidx] && label[nidx] < 0) {
                        label[nidx] = id;
                        queue.push_back({nx[k], ny[k]});
                    }
                }
            }
        }
    }
    std::stable_sort(comps.begin(), comps.end(), [](const Comp& a, const Comp& b) {
        if (a.area != b.area) return a.area > b.area;
        return a.first < b.first;
    });
    std::vector<BinaryMask> out;
    out.reserve(comps.size());
    for (auto& c : comps) out.push_back(std::move(c.m));
    return out;
}

// Minimal enclosing box of the set pixels, exclusive-max convention.
inline Box tight_box(const BinaryMask& mask) {
    int minx = mask.width, miny = mask.height, maxx = -1, maxy = -1;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            minx = std::min(minx, x);
            miny = std::min(miny, y);
            maxx = std::max(maxx, x);
            maxy = std::max(maxy, y);
        }
    }
    if (maxx < 0) throw std::invalid_argument("empty-mask");
    return Box(minx, miny, maxx + 1, maxy + 1);
}

}  // namespace lgcvs
