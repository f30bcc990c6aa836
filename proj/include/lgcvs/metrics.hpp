#pragma once

// Evaluation metrics (average precision, balanced accuracy, relation
// Recall@K) and the two reference baselines: a layout-only classifier and an
// image+layout classifier with an optional reconstruction branch.

#include "lgcvs/decoders.hpp"

#include <numeric>

namespace lgcvs {

// Precision-at-positives average over the descending-score ranking,
// ties broken by stable input order.  No interpolation.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("average_precision: size");
    int positives = 0;
    for (int l : labels) positives += l != 0;
    if (positives == 0) throw std::invalid_argument("average_precision: no positive labels");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double ap = 0;
    int tp = 0;
    for (size_t r = 0; r < order.size(); ++r) {
        if (labels[order[r]] != 0) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(r + 1);
        }
    }
    return ap / positives;
}

struct CvsEval {
    std::array<double, 3> ap{};
    double map = 0;
};

inline CvsEval cvs_map(const std::vector<std::array<double, 3>>& scores,
                       const std::vector<std::array<int, 3>>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("cvs_map: size");
    CvsEval out;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> s;
        std::vector<int> l;
        for (size_t i = 0; i < scores.size(); ++i) {
            s.push_back(scores[i][static_cast<size_t>(c)]);
            l.push_back(labels[i][static_cast<size_t>(c)]);
        }
        out.ap[static_cast<size_t>(c)] = average_precision(s, l);
        out.map += out.ap[static_cast<size_t>(c)] / 3.0;
    }
    return out;
}

struct BaccEval {
    std::array<double, 3> bacc{};
    double mean = 0;
};

// (sensitivity + specificity) / 2 at a fixed logit threshold.
inline BaccEval balanced_accuracy(const std::vector<std::array<double, 3>>& logits,
                                  const std::vector<std::array<int, 3>>& labels,
                                  double threshold = 0.0) {
    if (logits.size() != labels.size() || logits.empty())
        throw std::invalid_argument("balanced_accuracy: size");
    BaccEval out;
    for (int c = 0; c < 3; ++c) {
        long tp = 0, fn = 0, tn = 0, fp = 0;
        for (size_t i = 0; i < logits.size(); ++i) {
            const bool pred = logits[i][static_cast<size_t>(c)] > threshold;
            if (labels[i][static_cast<size_t>(c)] != 0)
                pred ? ++tp : ++fn;
            else
                pred ? ++fp : ++tn;
        }
        if (tp + fn == 0 || tn + fp == 0)
            throw std::invalid_argument("balanced_accuracy: single-class ground truth");
        out.bacc[static_cast<size_t>(c)] =
            0.5 * (static_cast<double>(tp) / (tp + fn) + static_cast<double>(tn) / (tn + fp));
        out.mean += out.bacc[static_cast<size_t>(c)] / 3.0;
    }
    return out;
}

struct TripletPrediction {
    int subj_cls = 0, obj_cls = 0;
    RelationClass rel = RelationClass::None;
    Box subj_box, obj_box;
    double score = 0;
};

struct SceneGraphGt {
    std::vector<Box> boxes;
    std::vector<int> classes;
    std::vector<Relation> relations;
};

// Per image: top-k predicted triplets by score; a GT relation counts as
// recalled when some kept triplet matches both endpoint classes, the relation
// class, and both boxes at IoU >= 0.5 in either endpoint orientation.
// Images without GT relations are excluded from the mean.
inline double recall_at_k(const std::vector<std::vector<TripletPrediction>>& preds,
                          const std::vector<SceneGraphGt>& gts, int k = 10) {
    if (preds.size() != gts.size()) throw std::invalid_argument("recall_at_k: size");
    double total = 0;
    int images = 0;
    for (size_t im = 0; im < preds.size(); ++im) {
        const auto& gt = gts[im];
        if (gt.relations.empty()) continue;
        ++images;
        if (k <= 0) continue;
        std::vector<TripletPrediction> top = preds[im];
        std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) {
            return a.score > b.score;
        });
        if (top.size() > static_cast<size_t>(k)) top.resize(static_cast<size_t>(k));
        int recalled = 0;
        for (const auto& r : gt.relations) {
            const Box& bi = gt.boxes[static_cast<size_t>(r.i)];
            const Box& bj = gt.boxes[static_cast<size_t>(r.j)];
            const int ci = gt.classes[static_cast<size_t>(r.i)];
            const int cj = gt.classes[static_cast<size_t>(r.j)];
            bool hit = false;
            for (const auto& t : top) {
                if (t.rel != r.cls) continue;
                const bool fwd = t.subj_cls == ci && t.obj_cls == cj &&
                                 iou(t.subj_box, bi) >= 0.5 && iou(t.obj_box, bj) >= 0.5;
                const bool rev = t.subj_cls == cj && t.obj_cls == ci &&
                                 iou(t.subj_box, bj) >= 0.5 && iou(t.obj_box, bi) >= 0.5;
                if (fwd || rev) {
                    hit = true;
                    break;
                }
            }
            recalled += hit;
        }
        total += static_cast<double>(recalled) / static_cast<double>(gt.relations.size());
    }
    if (images == 0) throw std::invalid_argument("recall_at_k: no image has GT relations");
    return total / images;
}

// Candidate triplets from a decoded graph: one per (edge, non-null relation
// class), scored relation prob x subject class prob x object class prob.
template <class T>
std::vector<TripletPrediction> triplets_from_graph(const LatentGraph<T>& g) {
    std::vector<TripletPrediction> out;
    if (g.edges.count() == 0) return out;
    std::vector<int> node_cls(static_cast<size_t>(g.nodes.count()));
    std::vector<double> node_prob(static_cast<size_t>(g.nodes.count()));
    for (int i = 0; i < g.nodes.count(); ++i) {
        const auto& p = g.nodes.class_probs[static_cast<size_t>(i)];
        const auto it = std::max_element(p.begin(), p.end());
        node_cls[static_cast<size_t>(i)] = static_cast<int>(it - p.begin());
        node_prob[static_cast<size_t>(i)] = *it;
    }
    auto probs = softmax_rows(g.edge_logits);
    for (int e = 0; e < g.edges.count(); ++e) {
        auto [i, j] = g.edges.indices[static_cast<size_t>(e)];
        for (int r = 1; r < kNumRelationClasses; ++r) {
            TripletPrediction t;
            t.subj_cls = node_cls[static_cast<size_t>(i)];
            t.obj_cls = node_cls[static_cast<size_t>(j)];
            t.rel = static_cast<RelationClass>(r);
            t.subj_box = g.nodes.boxes[static_cast<size_t>(i)];
            t.obj_box = g.nodes.boxes[static_cast<size_t>(j)];
            t.score = static_cast<double>(
                          probs.val()[static_cast<size_t>(e) * kNumRelationClasses + r]) *
                      node_prob[static_cast<size_t>(i)] * node_prob[static_cast<size_t>(j)];
            out.push_back(t);
        }
    }
    return out;
}

// Per-class layout: channel c marks pixels covered by any object of class c.
inline Layout build_class_layout(const std::vector<Box>& boxes, const std::vector<int>& classes,
                                 int num_classes, int h, int w) {
    Layout l;
    l.h = h;
    l.w = w;
    l.n = num_classes;
    l.grid.assign(static_cast<size_t>(num_classes) * h * w, 0);
    for (size_t i = 0; i < boxes.size(); ++i) {
        auto one = build_layout(std::vector<Box>{boxes[i]}, h, w);
        const int c = classes[i];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (one.at(0, y, x)) l.at(c, y, x) = 1;
    }
    return l;
}

inline Layout build_class_layout(const std::vector<BinaryMask>& masks,
                                 const std::vector<int>& classes, int num_classes, int h, int w) {
    Layout l;
    l.h = h;
    l.w = w;
    l.n = num_classes;
    l.grid.assign(static_cast<size_t>(num_classes) * h * w, 0);
    for (size_t i = 0; i < masks.size(); ++i) {
        auto one = build_layout(std::vector<BinaryMask>{masks[i]}, h, w);
        const int c = classes[i];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (one.at(0, y, x)) l.at(c, y, x) = 1;
    }
    return l;
}

namespace detail {
// global average pooling [B, C, H, W] -> [B, C]
template <class T>
Tensor<T> global_pool(const Tensor<T>& x) {
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    return reshape(mean_dim1(reshape(x, {b * c, h * w})), {b, c});
}
}  // namespace detail

// Small conv trunk shared by both baselines: 3 stride-2 blocks, global pool.
template <class T>
struct ConvTrunk {
    ConvLayer<T> c1, c2, c3;
    int out_dim;

    ConvTrunk() = default;
    ConvTrunk(int in_channels, std::mt19937_64& rng, int base = 16) : out_dim(2 * base) {
        c1 = ConvLayer<T>(in_channels, base, 3, 2, 1, rng);
        c2 = ConvLayer<T>(base, 2 * base, 3, 2, 1, rng);
        c3 = ConvLayer<T>(2 * base, 2 * base, 3, 2, 1, rng);
    }

    Tensor<T> features(const Tensor<T>& x) const {
        return relu(c3.forward(relu(c2.forward(relu(c1.forward(x))))));
    }

    Tensor<T> pooled(const Tensor<T>& x) const { return detail::global_pool(features(x)); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        c1.collect(prefix + ".c1", out);
        c2.collect(prefix + ".c2", out);
        c3.collect(prefix + ".c3", out);
    }
};

// Layout-only criteria classifier: sees object classes and geometry but no
// pixels, so appearance-dependent criteria are invisible to it.
template <class T>
struct LayoutCvs {
    ConvTrunk<T> trunk;
    LinearLayer<T> head;

    LayoutCvs() = default;
    LayoutCvs(uint64_t seed, int num_classes, int base = 16) {
        std::mt19937_64 rng(seed);
        trunk = ConvTrunk<T>(num_classes, rng, base);
        head = LinearLayer<T>(trunk.out_dim, 3, rng);
    }

    Tensor<T> forward(const Tensor<T>& class_layout) const {
        return head.forward(trunk.pooled(class_layout));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        trunk.collect(prefix + ".trunk", out);
        head.collect(prefix + ".head", out);
    }
};

// Image + per-class-layout classifier (3 + C input channels) with an optional
// reconstruction branch: the pooled trunk feature is bottlenecked to size S,
// broadcast into foreground pixels, and decoded alongside the backgroundized
// image by the shared reconstruction decoder.
template <class T>
struct DeepCvs {
    ConvTrunk<T> trunk;
    LinearLayer<T> head;
    LinearLayer<T> bottleneck, to_pixels;  // trunk -> S -> decoder channels
    ReconDecoder<T> recon;
    int num_classes, s_dim, n_max, f_r;
    bool with_recon = false;

    DeepCvs() = default;
    DeepCvs(uint64_t seed, int num_classes_, int n_max_ = 16, int f_n = 64, int f_r_ = 64,
            int base = 16)
        : num_classes(num_classes_), s_dim(n_max_ * f_n), n_max(n_max_), f_r(f_r_) {
        std::mt19937_64 rng(seed);
        trunk = ConvTrunk<T>(3 + num_classes, rng, base);
        head = LinearLayer<T>(trunk.out_dim, 3, rng);
        bottleneck = LinearLayer<T>(trunk.out_dim, s_dim, rng);
        to_pixels = LinearLayer<T>(s_dim, f_r, rng);
        recon = ReconDecoder<T>(derive_seed(seed, "deepcvs-recon"), n_max, f_r, base);
    }

    Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& class_layout) const {
        if (image.dim(2) != class_layout.dim(2) || image.dim(3) != class_layout.dim(3))
            throw std::invalid_argument("deepcvs: image/layout size mismatch");
        return head.forward(trunk.pooled(concat_channels<T>({image, class_layout})));
    }

    // single-sample reconstruction; layout is the per-class layout
    Tensor<T> reconstruct_image(const Tensor<T>& image, const Layout& class_layout) const {
        auto layout_t = layout_to_tensor<T>(class_layout, n_max);
        auto x = concat_channels<T>({image, layout_to_tensor<T>(class_layout, num_classes)});
        auto feat = to_pixels.forward(bottleneck.forward(trunk.pooled(x)));  // [1, f_r]
        // same feature broadcast into every foreground pixel
        Layout fg;
        fg.h = class_layout.h;
        fg.w = class_layout.w;
        fg.n = 1;
        fg.grid.assign(static_cast<size_t>(fg.h) * fg.w, 0);
        const size_t plane = static_cast<size_t>(fg.h) * fg.w;
        for (int c = 0; c < class_layout.n; ++c)
            for (size_t p = 0; p < plane; ++p)
                if (class_layout.grid[static_cast<size_t>(c) * plane + p]) fg.grid[p] = 1;
        auto lfeat = build_feature_layout(fg, feat);
        // foreground of the conditioning image zeroed
        std::vector<T> bg = image.val();
        for (int c = 0; c < 3; ++c)
            for (size_t p = 0; p < plane; ++p)
                if (fg.grid[p]) bg[static_cast<size_t>(c) * plane + p] = T(0);
        auto bg_t = Tensor<T>::from_data(image.shape(), std::move(bg));
        return recon.forward(layout_t, lfeat, bg_t);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        trunk.collect(prefix + ".trunk", out);
        head.collect(prefix + ".head", out);
        if (with_recon) {
            bottleneck.collect(prefix + ".bottleneck", out);
            to_pixels.collect(prefix + ".to_pixels", out);
            recon.collect(prefix + ".recon", out);
        }
    }
};

}  // namespace lgcvs
