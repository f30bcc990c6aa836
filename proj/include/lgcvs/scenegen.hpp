#pragma once

// Synthetic "anatomy" scene generator with rule-defined pseudo-criteria
// labels, plus mask -> box -> scene-graph annotation synthesis.

#include "lgcvs/geometry.hpp"
#include "lgcvs/image.hpp"
#include "lgcvs/nn.hpp"  // derive_seed

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

namespace lgcvs {

struct ObjectClassSet {
    std::vector<std::string> names;

    static ObjectClassSet standard() {
        return {{"background", "gallbladder", "duct", "artery", "hct-triangle", "plate", "tool"}};
    }
    int count() const { return static_cast<int>(names.size()); }
};

constexpr int kClassGallbladder = 1;
constexpr int kClassDuct = 2;
constexpr int kClassArtery = 3;
constexpr int kClassTriangle = 4;
constexpr int kClassPlate = 5;
constexpr int kClassTool = 6;

struct SceneObject {
    Box box;
    int class_id = 0;
    BinaryMask mask;
};

struct Relation {
    int i = 0, j = 0;  // i < j
    RelationClass cls = RelationClass::None;
};

struct SceneRecord {
    Image image;
    std::vector<SceneObject> objects;
    std::vector<Relation> relations;
    std::array<int, 3> cvs = {0, 0, 0};
};

struct GeneratorConfig {
    int width = 128, height = 128;
    int edges_per_node = 4;
    int min_component_area = 8;
    double tau2 = 0.5;   // pC2: visible triangle area threshold, fraction of nominal
    double tau3 = 0.3;   // pC3: visible plate area threshold, fraction of full area
    double nominal_triangle_frac = 0.035;  // nominal triangle area as image fraction

    // presence / attachment probabilities (calibrated for 15-25% criterion rates)
    double p_gallbladder = 0.95;
    double p_duct = 0.75, p_artery = 0.75;
    double p_attach = 0.62;  // duct/artery reaching the gallbladder's lower half
    double p_triangle = 0.72, p_cleared = 0.44;
    double p_plate = 0.62, p_plate_occluded = 0.88;
    double p_tool = 0.55, p_second_tool = 0.35;
    double noise_std = 0.035;

    void validate() const {
        if (width < 16 || height < 16) throw std::invalid_argument("invalid image dimensions");
    }
};

// Internal scene parameters; exposed so tests can re-derive the labels
// independently of the generator's own label computation.
struct SceneParams {
    bool has_gallbladder = false, has_duct = false, has_artery = false;
    bool has_triangle = false, has_plate = false;
    bool cleared = false;
    bool duct_attached = false, artery_attached = false;
    double triangle_visible_area = 0, triangle_nominal_area = 0;
    double plate_visible_area = 0, plate_full_area = 0;
    double duct_visible_area = 0, artery_visible_area = 0;
    Box gallbladder_box, duct_box, artery_box;  // full (pre-occlusion) tight boxes
};

namespace shapes {

inline BinaryMask ellipse(int w, int h, double cx, double cy, double rx, double ry,
                          double angle = 0) {
    BinaryMask m(w, h);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double u = (dx * ca + dy * sa) / rx, v = (-dx * sa + dy * ca) / ry;
            if (u * u + v * v <= 1.0) m.set(x, y);
        }
    return m;
}

inline BinaryMask capsule(int w, int h, double x0, double y0, double x1, double y1, double r) {
    BinaryMask m(w, h);
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double px = x + 0.5 - x0, py = y + 0.5 - y0;
            double t = len2 > 0 ? std::clamp((px * dx + py * dy) / len2, 0.0, 1.0) : 0.0;
            const double ex = px - t * dx, ey = py - t * dy;
            if (ex * ex + ey * ey <= r * r) m.set(x, y);
        }
    return m;
}

inline BinaryMask triangle(int w, int h, double ax, double ay, double bx, double by, double cx,
                           double cy) {
    BinaryMask m(w, h);
    auto sign = [](double x1, double y1, double x2, double y2, double x3, double y3) {
        return (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double d1 = sign(px, py, ax, ay, bx, by);
            const double d2 = sign(px, py, bx, by, cx, cy);
            const double d3 = sign(px, py, cx, cy, ax, ay);
            const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
            const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
            if (!(neg && pos)) m.set(x, y);
        }
    return m;
}

inline BinaryMask crescent(int w, int h, double cx, double cy, double rx, double ry,
                           double offset_frac) {
    auto outer = ellipse(w, h, cx, cy, rx, ry);
    auto inner = ellipse(w, h, cx + offset_frac * rx, cy - 0.2 * ry, rx * 0.9, ry * 0.9);
    for (size_t i = 0; i < outer.grid.size(); ++i)
        if (inner.grid[i]) outer.grid[i] = 0;
    return outer;
}

inline BinaryMask rotated_rect(int w, int h, double cx, double cy, double hw, double hh,
                               double angle) {
    BinaryMask m(w, h);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
            if (std::abs(u) <= hw && std::abs(v) <= hh) m.set(x, y);
        }
    return m;
}

}  // namespace shapes

namespace detail_scene {

// cheap deterministic per-pixel hash noise in [0,1)
inline double pixel_noise(uint64_t seed, int x, int y) {
    uint64_t v = seed ^ (static_cast<uint64_t>(x) * 0x9e3779b97f4a7c15ull) ^
                 (static_cast<uint64_t>(y) * 0xc2b2ae3d27d4eb4full);
    v ^= v >> 33;
    v *= 0xff51afd7ed558ccdull;
    v ^= v >> 29;
    return static_cast<double>(v >> 11) / 9007199254740992.0;
}

struct DrawnObject {
    int class_id;
    BinaryMask full_mask;
    std::array<float, 3> color;
    double mottle = 0;  // texture amplitude
};

}  // namespace detail_scene

// Invented pseudo-criteria label rules; geometric and appearance-flag based so
// labels are exact. Kept separate from the generator so tests can re-run them.
inline std::array<int, 3> pseudo_criteria_labels(const SceneParams& p, const GeneratorConfig& cfg) {
    std::array<int, 3> cvs = {0, 0, 0};
    if (p.has_gallbladder && p.has_duct && p.has_artery && p.duct_visible_area > 0 &&
        p.artery_visible_area > 0) {
        const Box lower_half(p.gallbladder_box.x1, p.gallbladder_box.cy(), p.gallbladder_box.x2,
                             p.gallbladder_box.y2);
        if (intersection_area(p.duct_box, lower_half) > 0 &&
            intersection_area(p.artery_box, lower_half) > 0)
            cvs[0] = 1;
    }
    if (p.has_triangle && p.cleared &&
        p.triangle_visible_area >= cfg.tau2 * p.triangle_nominal_area)
        cvs[1] = 1;
    if (p.has_plate && p.plate_full_area > 0 &&
        p.plate_visible_area >= cfg.tau3 * p.plate_full_area)
        cvs[2] = 1;
    return cvs;
}

// Semantic class raster -> per-instance (box, class, mask) via connected
// components; overlapping same-class instances merge into one component and
// therefore one box.
inline std::vector<SceneObject> boxes_from_semantic_mask(const std::vector<int>& sem, int w, int h,
                                                         const ObjectClassSet& classes,
                                                         int min_component_area = 1) {
    std::vector<SceneObject> out;
    for (int cls = 1; cls < classes.count(); ++cls) {
        BinaryMask m(w, h);
        bool any = false;
        for (size_t i = 0; i < sem.size(); ++i)
            if (sem[i] == cls) {
                m.grid[i] = 1;
                any = true;
            }
        if (!any) continue;
        for (auto& comp : connected_components(m)) {
            if (comp.area() < min_component_area) continue;
            out.push_back({tight_box(comp), cls, std::move(comp)});
        }
    }
    return out;
}

// Per-node top-E gIoU partners, undirected, deduplicated, labeled by the
// relation rule.
inline std::vector<Relation> build_gt_scene_graph(const std::vector<SceneObject>& objects, int e) {
    const int n = static_cast<int>(objects.size());
    std::vector<Relation> rels;
    std::vector<std::vector<bool>> seen(n, std::vector<bool>(n, false));
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> ranked;
        for (int j = 0; j < n; ++j)
            if (j != i) ranked.push_back({giou(objects[i].box, objects[j].box), j});
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const int take = std::min<int>(e, static_cast<int>(ranked.size()));
        for (int k = 0; k < take; ++k) {
            int a = i, b = ranked[k].second;
            if (a > b) std::swap(a, b);
            if (seen[a][b]) continue;
            seen[a][b] = true;
            rels.push_back({a, b, relation_rule(objects[a].box, objects[b].box)});
        }
    }
    std::sort(rels.begin(), rels.end(), [](const Relation& a, const Relation& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    return rels;
}

inline SceneRecord synth_scene_full(long seed, const GeneratorConfig& cfg, SceneParams* out_params) {
    cfg.validate();
    const int w = cfg.width, h = cfg.height;
    std::mt19937_64 rng(derive_seed(static_cast<uint64_t>(seed), "scenegen"));
    auto coin = [&](double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; };
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

    SceneParams params;
    std::vector<detail_scene::DrawnObject> drawn;  // back-to-front

    // gallbladder: large green-ish blob, upper-center
    double gb_cx = 0, gb_cy = 0, gb_rx = 0, gb_ry = 0;
    params.has_gallbladder = coin(cfg.p_gallbladder);
    if (params.has_gallbladder) {
        gb_cx = uni(0.38, 0.62) * w;
        gb_cy = uni(0.30, 0.45) * h;
        gb_rx = uni(0.20, 0.30) * w;
        gb_ry = uni(0.22, 0.34) * h;
        auto m = shapes::ellipse(w, h, gb_cx, gb_cy, gb_rx, gb_ry, uni(-0.4, 0.4));
        params.gallbladder_box = tight_box(m);
        drawn.push_back({kClassGallbladder, std::move(m), {0.35f, 0.65f, 0.35f}, 0.10});
    }

    // hct-triangle below-left of the gallbladder; cleared scenes render it
    // bright and uniform, uncleared dark and mottled
    params.has_triangle = coin(cfg.p_triangle);
    params.triangle_nominal_area = cfg.nominal_triangle_frac * w * h;
    if (params.has_triangle) {
        params.cleared = coin(cfg.p_cleared);
        const double area_factor = uni(0.25, 1.35);
        const double side = std::sqrt(area_factor * params.triangle_nominal_area * 2.0);
        const double tx = (params.has_gallbladder ? gb_cx - gb_rx * 0.5 : 0.35 * w) + uni(-6, 6);
        const double ty = (params.has_gallbladder ? gb_cy + gb_ry * 0.6 : 0.60 * h) + uni(-6, 6);
        auto m = shapes::triangle(w, h, tx, ty, tx + side, ty + uni(-0.2, 0.2) * side,
                                  tx + 0.4 * side, ty + side);
        if (params.cleared)
            drawn.push_back({kClassTriangle, std::move(m), {0.95f, 0.80f, 0.30f}, 0.03});
        else
            drawn.push_back({kClassTriangle, std::move(m), {0.40f, 0.28f, 0.20f}, 0.25});
    }

    // cystic plate: crescent right of the gallbladder
    params.has_plate = coin(cfg.p_plate);
    double plate_cx = 0, plate_cy = 0, plate_rx = 0, plate_ry = 0;
    if (params.has_plate) {
        plate_cx = (params.has_gallbladder ? gb_cx + gb_rx * 0.9 : 0.70 * w) + uni(-5, 5);
        plate_cy = (params.has_gallbladder ? gb_cy + gb_ry * 0.3 : 0.5 * h) + uni(-5, 5);
        plate_rx = uni(0.10, 0.16) * w;
        plate_ry = uni(0.14, 0.22) * h;
        auto m = shapes::crescent(w, h, plate_cx, plate_cy, plate_rx, plate_ry, 0.45);
        drawn.push_back({kClassPlate, std::move(m), {0.55f, 0.75f, 0.95f}, 0.06});
    }

    // duct and artery: thin elongated capsules rising from the bottom; when
    // "attached" their upper end lands inside the gallbladder's lower half
    auto add_tube = [&](int cls, bool present, bool& attached_out, Box& box_out,
                        std::array<float, 3> color, double x_side) {
        if (!present) return;
        const bool attach = coin(cfg.p_attach);
        attached_out = attach;
        double ex, ey;
        if (attach && params.has_gallbladder) {
            ex = gb_cx + uni(-0.5, 0.5) * gb_rx + x_side * 0.3 * gb_rx;
            ey = gb_cy + uni(0.35, 0.85) * gb_ry;
        } else {
            ex = uni(0.1, 0.9) * w;
            ey = uni(0.75, 0.95) * h;
        }
        const double sx = ex + x_side * uni(0.10, 0.25) * w + uni(-4, 4);
        const double sy = std::min<double>(h - 2.0, ey + uni(0.28, 0.45) * h);
        auto m = shapes::capsule(w, h, sx, sy, ex, ey, uni(2.0, 3.5));
        if (m.area() == 0) return;
        box_out = tight_box(m);
        drawn.push_back({cls, std::move(m), color, 0.08});
    };
    params.has_duct = coin(cfg.p_duct);
    params.has_artery = coin(cfg.p_artery);
    add_tube(kClassDuct, params.has_duct, params.duct_attached, params.duct_box,
             {0.90f, 0.90f, 0.55f}, -1.0);
    add_tube(kClassArtery, params.has_artery, params.artery_attached, params.artery_box,
             {0.85f, 0.25f, 0.25f}, 1.0);

    // tools: gray rotated rectangles, drawn on top (occluders). One tool is
    // dedicated to occluding the plate so the pC3 visible-area rule bites.
    if (params.has_plate && coin(cfg.p_plate_occluded)) {
        const double cover = uni(0.60, 1.25);
        auto m = shapes::rotated_rect(w, h, plate_cx + uni(-3, 3),
                                      plate_cy - plate_ry * (1.0 - cover),
                                      plate_rx * 1.6, plate_ry * cover, uni(-0.3, 0.3));
        drawn.push_back({kClassTool, std::move(m), {0.72f, 0.72f, 0.78f}, 0.02});
    }
    if (coin(cfg.p_tool)) {
        auto m = shapes::rotated_rect(w, h, uni(0.15, 0.85) * w, uni(0.15, 0.85) * h,
                                      uni(0.03, 0.06) * w, uni(0.10, 0.22) * h, uni(-1.2, 1.2));
        drawn.push_back({kClassTool, std::move(m), {0.75f, 0.75f, 0.80f}, 0.02});
        if (coin(cfg.p_second_tool)) {
            auto m2 = shapes::rotated_rect(w, h, uni(0.15, 0.85) * w, uni(0.15, 0.85) * h,
                                           uni(0.03, 0.06) * w, uni(0.10, 0.22) * h, uni(-1.2, 1.2));
            drawn.push_back({kClassTool, std::move(m2), {0.78f, 0.72f, 0.72f}, 0.02});
        }
    }

    // composite back-to-front; visible mask per object = pixels where it is topmost
    SceneRecord rec;
    rec.image = Image(w, h);
    const uint64_t tex_seed = derive_seed(static_cast<uint64_t>(seed), "texture");
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float grad = 0.25f + 0.15f * static_cast<float>(y) / h;
            rec.image.set_rgb(x, y, grad + 0.05f, grad * 0.55f, grad * 0.5f);
        }
    std::vector<int> top(static_cast<size_t>(w) * h, -1);  // index into drawn
    for (size_t d = 0; d < drawn.size(); ++d)
        for (size_t i = 0; i < drawn[d].full_mask.grid.size(); ++i)
            if (drawn[d].full_mask.grid[i]) top[i] = static_cast<int>(d);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int d = top[static_cast<size_t>(y) * w + x];
            if (d < 0) continue;
            const auto& obj = drawn[static_cast<size_t>(d)];
            const double n =
                (detail_scene::pixel_noise(tex_seed + d, x, y) - 0.5) * 2.0 * obj.mottle;
            rec.image.set_rgb(x, y, static_cast<float>(obj.color[0] + n),
                              static_cast<float>(obj.color[1] + n),
                              static_cast<float>(obj.color[2] + n));
        }
    // sensor noise
    {
        std::mt19937_64 nrng(derive_seed(static_cast<uint64_t>(seed), "sensor-noise"));
        std::normal_distribution<float> nd(0.f, static_cast<float>(cfg.noise_std));
        for (auto& v : rec.image.pix) v = std::clamp(v + nd(nrng), 0.f, 1.f);
    }

    // visible-area statistics for the label rules
    std::vector<long> visible(drawn.size(), 0);
    for (int i : top)
        if (i >= 0) visible[static_cast<size_t>(i)]++;
    for (size_t d = 0; d < drawn.size(); ++d) {
        const auto& obj = drawn[d];
        const double vis = static_cast<double>(visible[d]);
        switch (obj.class_id) {
            case kClassTriangle: params.triangle_visible_area = vis; break;
            case kClassPlate:
                params.plate_visible_area = vis;
                params.plate_full_area = static_cast<double>(obj.full_mask.area());
                break;
            case kClassDuct: params.duct_visible_area = vis; break;
            case kClassArtery: params.artery_visible_area = vis; break;
            default: break;
        }
    }

    rec.cvs = pseudo_criteria_labels(params, cfg);

    // semantic raster of visible pixels -> instance boxes -> scene graph
    std::vector<int> sem(static_cast<size_t>(w) * h, 0);
    for (size_t i = 0; i < sem.size(); ++i)
        if (top[i] >= 0) sem[i] = drawn[static_cast<size_t>(top[i])].class_id;
    rec.objects =
        boxes_from_semantic_mask(sem, w, h, ObjectClassSet::standard(), cfg.min_component_area);
    rec.relations = build_gt_scene_graph(rec.objects, cfg.edges_per_node);

    if (out_params) *out_params = params;
    return rec;
}

inline SceneRecord synth_scene(long seed, const GeneratorConfig& cfg) {
    return synth_scene_full(seed, cfg, nullptr);
}

// ---- RLE mask codec: row-major runs, starting with the run of zeros ----

inline std::string rle_encode(const BinaryMask& m) {
    std::ostringstream os;
    uint8_t cur = 0;
    long run = 0;
    bool first = true;
    for (uint8_t v : m.grid) {
        if ((v != 0) == (cur != 0)) {
            ++run;
        } else {
            os << (first ? "" : " ") << run;
            first = false;
            cur = v;
            run = 1;
        }
    }
    os << (first ? "" : " ") << run;
    return os.str();
}

inline BinaryMask rle_decode(const std::string& counts, int w, int h) {
    BinaryMask m(w, h);
    std::istringstream is(counts);
    long pos = 0, run = 0;
    uint8_t cur = 0;
    while (is >> run) {
        if (cur)
            for (long k = 0; k < run; ++k) m.grid[static_cast<size_t>(pos + k)] = 1;
        pos += run;
        cur = !cur;
    }
    if (pos != static_cast<long>(m.grid.size())) throw std::runtime_error("rle length mismatch");
    return m;
}

// ---- dataset I/O: JSON-lines index + PNG images ----

inline void write_dataset(const std::vector<SceneRecord>& records, const std::string& path) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(path) / "images");
    std::ofstream out(fs::path(path) / "data.jsonl");
    if (!out) throw std::runtime_error("cannot write dataset index");
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        char name[32];
        std::snprintf(name, sizeof(name), "images/%06zu.png", i);
        write_png((fs::path(path) / name).string(), r.image);
        nlohmann::json j;
        j["image"] = name;
        j["width"] = r.image.width;
        j["height"] = r.image.height;
        j["objects"] = nlohmann::json::array();
        for (const auto& o : r.objects) {
            nlohmann::json jo;
            jo["bbox"] = {o.box.x1, o.box.y1, o.box.x2, o.box.y2};
            jo["category_id"] = o.class_id;
            jo["segmentation"] = {{"counts", rle_encode(o.mask)},
                                  {"size", {o.mask.height, o.mask.width}}};
            j["objects"].push_back(jo);
        }
        j["relations"] = nlohmann::json::array();
        for (const auto& rel : r.relations)
            j["relations"].push_back({rel.i, rel.j, static_cast<int>(rel.cls)});
        j["cvs"] = {r.cvs[0], r.cvs[1], r.cvs[2]};
        out << j.dump() << "\n";
    }
}

inline std::vector<SceneRecord> read_dataset(const std::string& path) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(path) / "data.jsonl");
    if (!in) throw std::runtime_error("cannot open dataset index: " + path);
    std::vector<SceneRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        SceneRecord r;
        try {
        nlohmann::json j = nlohmann::json::parse(line);
        r.image = read_png((fs::path(path) / j.at("image").get<std::string>()).string());
        for (const auto& jo : j.at("objects")) {
            SceneObject o;
            auto bb = jo.at("bbox");
            o.box = Box(bb[0], bb[1], bb[2], bb[3]);
            o.class_id = jo.at("category_id");
            const auto& seg = jo.at("segmentation");
            o.mask = rle_decode(seg.at("counts").get<std::string>(), seg.at("size")[1],
                                seg.at("size")[0]);
            r.objects.push_back(std::move(o));
        }
        for (const auto& jr : j.at("relations"))
            r.relations.push_back({jr[0], jr[1], static_cast<RelationClass>(jr[2].get<int>())});
        auto cvs = j.at("cvs");
        r.cvs = {cvs[0], cvs[1], cvs[2]};
        } catch (const std::exception& e) {
            throw std::runtime_error("dataset parse error at line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
        records.push_back(std::move(r));
    }
    return records;
}

// Fraction of records achieving each criterion.
inline std::array<double, 3> positive_rates(const std::vector<SceneRecord>& records) {
    std::array<double, 3> rates = {0, 0, 0};
    for (const auto& r : records)
        for (int c = 0; c < 3; ++c) rates[static_cast<size_t>(c)] += r.cvs[static_cast<size_t>(c)];
    for (auto& v : rates) v /= records.empty() ? 1 : static_cast<double>(records.size());
    return rates;
}

}  // namespace lgcvs
