#pragma once

// Two-stage optimization: stage 1 trains the graph encoder on relation
// supervision; stage 2 freezes that path, clones the backbone, and fine-tunes
// the criteria head plus an optional reconstruction objective.

#include "lgcvs/metrics.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>

namespace lgcvs {

// ---------------- reconstruction losses ----------------

// Mean SSIM over channels, Gaussian window, valid padding.
template <class T>
Tensor<T> ssim_mean(const Tensor<T>& x, const Tensor<T>& y, int win = 11, double sigma = 1.5,
                    double k1 = 0.01, double k2 = 0.03) {
    if (x.shape() != y.shape()) throw std::invalid_argument("ssim: shape mismatch");
    const int c = x.dim(1);
    std::vector<T> wdata(static_cast<size_t>(c) * win * win);
    double norm = 0;
    std::vector<double> g(static_cast<size_t>(win) * win);
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double dy = i - (win - 1) / 2.0, dx = j - (win - 1) / 2.0;
            g[static_cast<size_t>(i) * win + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            norm += g[static_cast<size_t>(i) * win + j];
        }
    for (int ci = 0; ci < c; ++ci)
        for (size_t k = 0; k < g.size(); ++k)
            wdata[static_cast<size_t>(ci) * g.size() + k] = static_cast<T>(g[k] / norm);
    auto w = Tensor<T>::from_data({c, 1, win, win}, std::move(wdata));
    auto b = Tensor<T>::zeros({c});

    auto blur = [&](const Tensor<T>& t) { return conv2d(t, w, b, 1, 0, c); };
    auto mu_x = blur(x), mu_y = blur(y);
    auto sxx = sub(blur(mul(x, x)), mul(mu_x, mu_x));
    auto syy = sub(blur(mul(y, y)), mul(mu_y, mu_y));
    auto sxy = sub(blur(mul(x, y)), mul(mu_x, mu_y));
    const T c1 = static_cast<T>(k1 * k1), c2 = static_cast<T>(k2 * k2);
    auto num = mul(add_scalar(scale(mul(mu_x, mu_y), T(2)), c1),
                   add_scalar(scale(sxy, T(2)), c2));
    auto den = mul(add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1),
                   add_scalar(add(sxx, syy), c2));
    return mean_all(mul(num, reciprocal(den)));
}

template <class T>
struct ReconLossTerms {
    Tensor<T> total, l1, perceptual, ssim;
};

// L1 + feature-space L1 at two backbone depths + (1 - mean SSIM).
template <class T>
ReconLossTerms<T> recon_loss(const Tensor<T>& target, const Tensor<T>& pred,
                             const Backbone<T>& frozen) {
    ReconLossTerms<T> out;
    out.l1 = mean_all(abs_t(sub(pred, target)));
    auto [t1, t2] = frozen.forward_features(target);
    auto [p1, p2] = frozen.forward_features(pred);
    out.perceptual = add(mean_all(abs_t(sub(p1, t1))), mean_all(abs_t(sub(p2, t2))));
    out.ssim = sub(Tensor<T>::scalar(T(1)), ssim_mean(pred, target));
    out.total = add(add(out.l1, out.perceptual), out.ssim);
    return out;
}

// ---------------- label balancing and box perturbation ----------------

// Positive-term weight (1 - f) / f per criterion from the training split.
inline std::array<double, 3> inverse_freq_weights(const std::vector<std::array<int, 3>>& labels) {
    if (labels.empty()) throw std::invalid_argument("inverse_freq_weights: empty split");
    std::array<double, 3> w{};
    for (int c = 0; c < 3; ++c) {
        double f = 0;
        for (const auto& l : labels) f += l[static_cast<size_t>(c)] != 0;
        f /= static_cast<double>(labels.size());
        if (f == 0.0) throw std::invalid_argument("inverse_freq_weights: degenerate-criterion");
        w[static_cast<size_t>(c)] = (1.0 - f) / f;
    }
    return w;
}

// Each corner shifted by lambda-scaled uniform noise proportional to the box
// extent, then re-sorted and clipped.
inline std::vector<Box> perturb_boxes(const std::vector<Box>& boxes, double lambda, uint64_t seed,
                                      double img_w, double img_h) {
    std::vector<Box> out;
    out.reserve(boxes.size());
    std::mt19937_64 rng(derive_seed(seed, "perturb"));
    for (const Box& b : boxes) {
        if (lambda <= 0) {
            out.push_back(b);
            continue;
        }
        const double w = b.width(), h = b.height();
        std::uniform_real_distribution<double> ux(-w, w), uy(-h, h);
        Box p(b.x1 + lambda * ux(rng), b.y1 + lambda * uy(rng), b.x2 + lambda * ux(rng),
              b.y2 + lambda * uy(rng));
        if (p.x1 > p.x2) std::swap(p.x1, p.x2);
        if (p.y1 > p.y2) std::swap(p.y1, p.y2);
        out.push_back(p.clipped(img_w, img_h));
    }
    return out;
}

// Box-filter downscale by 2^levels.
inline Image downscale_image(const Image& img, int levels) {
    Image cur = img;
    for (int l = 0; l < levels; ++l) {
        Image next(cur.width / 2, cur.height / 2);
        for (int y = 0; y < next.height; ++y)
            for (int x = 0; x < next.width; ++x)
                for (int c = 0; c < 3; ++c)
                    next.at(x, y, c) = 0.25f * (cur.at(2 * x, 2 * y, c) + cur.at(2 * x + 1, 2 * y, c) +
                                                cur.at(2 * x, 2 * y + 1, c) +
                                                cur.at(2 * x + 1, 2 * y + 1, c));
        cur = std::move(next);
    }
    return cur;
}

// Photometric jitter plus optional horizontal flip with full geometry and
// relation resynchronization.
inline SceneRecord augment_record(const SceneRecord& rec, uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "augment"));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SceneRecord out = rec;
    const float brightness = static_cast<float>((u(rng) - 0.5) * 0.2);
    const float contrast = static_cast<float>(1.0 + (u(rng) - 0.5) * 0.2);
    const bool flip = u(rng) < 0.5;
    const int w = rec.image.width, h = rec.image.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = rec.image.at(flip ? w - 1 - x : x, y, c);
                out.image.at(x, y, c) = std::clamp((v - 0.5f) * contrast + 0.5f + brightness, 0.f, 1.f);
            }
    if (flip) {
        for (auto& obj : out.objects) {
            const Box b = obj.box;
            obj.box = Box(w - b.x2, b.y1, w - b.x1, b.y2);
            BinaryMask m = obj.mask;
            for (int y = 0; y < m.height; ++y)
                for (int x = 0; x < m.width; ++x) m.set(x, y, obj.mask.at(m.width - 1 - x, y));
            obj.mask = m;
        }
        out.relations = build_gt_scene_graph(out.objects, 4);
    }
    return out;
}

// ---------------- configs ----------------

struct EncoderConfig {
    int feat_dim = 64, num_classes = 7, max_nodes = 16, edges_per_node = 4, pool_grid = 7;
    int gnn_layers = 2, gnn_hidden = 128, relpn_hidden = 64;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderConfig, feat_dim, num_classes, max_nodes,
                                   edges_per_node, pool_grid, gnn_layers, gnn_hidden, relpn_hidden)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CorruptionConfig, p_drop, jitter, p_confuse, p_spurious)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CvsComponentToggles, visual, boxes, classes)

struct Stage1Config {
    EncoderConfig encoder;
    int epochs = 10, batch_size = 8;
    double lr = 1e-3, weight_decay = 0.0;
    uint64_t seed = 1;
    CorruptionConfig corruption;
    bool augment = false;
    bool edge_loss = true;  // ablation: drop the edge-classification term
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Stage1Config, encoder, epochs, batch_size, lr, weight_decay,
                                   seed, corruption, augment, edge_loss)

struct Stage2Config {
    int epochs = 20, batch_size = 32;
    double lr = 1e-5, weight_decay = 0.0;
    uint64_t seed = 2;
    double lambda_perturb = 0.125, w_recon = 1.0;
    bool use_recon = true;
    int f_n = 64, f_e = 64, f_r = 64, cvs_hidden = 64;
    int recon_half_levels = 1;  // reconstruction at H / 2^levels
    CvsComponentToggles toggles;
    CorruptionConfig corruption;
    bool augment = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Stage2Config, epochs, batch_size, lr, weight_decay, seed,
                                   lambda_perturb, w_recon, use_recon, f_n, f_e, f_r, cvs_hidden,
                                   recon_half_levels, toggles, corruption, augment)

// ---------------- graph encoder (stage-1 model) ----------------

template <class T>
struct GraphEncoder {
    EncoderConfig cfg;
    Backbone<T> backbone;
    RelPn<T> relpn;
    LgGnn<T> gnn;
    EdgeClassifier<T> classifier;

    GraphEncoder() = default;
    GraphEncoder(uint64_t seed, const EncoderConfig& c)
        : cfg(c),
          backbone(derive_seed(seed, "backbone"), c.feat_dim),
          relpn(derive_seed(seed, "relpn"), c.feat_dim, c.num_classes, c.relpn_hidden),
          gnn(derive_seed(seed, "gnn"), c.feat_dim, c.feat_dim, c.gnn_layers, c.gnn_hidden),
          classifier(derive_seed(seed, "edge-classifier"), c.feat_dim) {}

    LatentGraph<T> encode(const FeatureMap<T>& fm, const DetectionSet& det) const {
        auto nodes = init_nodes(det, fm, cfg.pool_grid);
        if (nodes.count() == 0) return {};
        auto scores = relpn.score_pairs(nodes, fm.image_width, fm.image_height);
        std::vector<std::pair<int, int>> idx;
        if (scores.defined()) {
            std::vector<double> sv(scores.val().begin(), scores.val().end());
            idx = sample_edges(sv, nodes.count(), cfg.edges_per_node);
        }
        auto edges = init_edges(nodes, idx, scores, fm, cfg.pool_grid);
        auto [hn, he] = gnn.forward(nodes.feats, edges.feats, edges.indices);
        Tensor<T> logits;
        if (edges.count() > 0) logits = classifier.forward(he);
        return assemble_latent_graph(std::move(nodes), std::move(edges), hn, he, logits);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        backbone.collect(prefix + ".backbone", out);
        relpn.collect(prefix + ".relpn", out);
        gnn.collect(prefix + ".gnn", out);
        classifier.collect(prefix + ".classifier", out);
    }

    void set_requires_grad(bool b) {
        ParamList<T> plist;
        collect("enc", plist);
        for (auto& [name, p] : plist) p.set_requires_grad(b);
    }
};

template <class T, class M>
void copy_params(const M& src, M& dst) {
    ParamList<T> a, b;
    src.collect("x", a);
    dst.collect("x", b);
    if (a.size() != b.size()) throw std::invalid_argument("copy_params: structure mismatch");
    for (size_t i = 0; i < a.size(); ++i) b[i].second.val() = a[i].second.val();
}

// Deterministic per-record detector seed, stable across epochs and models so
// every method sees the same corrupted detections.
inline uint64_t detector_seed(const std::string& split, size_t index) {
    return derive_seed(derive_seed(0x9e3779b97f4a7c15ull, split), "det-" + std::to_string(index));
}

// ---------------- stage 1 ----------------

template <class T>
struct Stage1Losses {
    Tensor<T> total, relpn, edge_cls;
    int images_with_edges = 0;
};

template <class T>
Stage1Losses<T> stage1_loss(const GraphEncoder<T>& enc,
                            const std::vector<const SceneRecord*>& batch,
                            const std::vector<uint64_t>& det_seeds,
                            const CorruptionConfig& corr, bool edge_loss = true) {
    std::vector<const Image*> imgs;
    for (const auto* r : batch) imgs.push_back(&r->image);
    auto x = images_to_batch<T>(imgs);
    auto fmb = enc.backbone.forward(x);

    Stage1Losses<T> out;
    std::vector<Tensor<T>> relpn_terms, cls_terms;
    for (size_t i = 0; i < batch.size(); ++i) {
        const SceneRecord& rec = *batch[i];
        FeatureMap<T> fm{slice_batch(fmb, static_cast<int>(i)), 8, rec.image.width,
                         rec.image.height};
        auto det = oracle_detect(rec, corr, det_seeds[i], enc.cfg.max_nodes, enc.cfg.num_classes);
        auto g = enc.encode(fm, det);
        if (g.edges.count() == 0) continue;
        ++out.images_with_edges;
        std::vector<Box> gt_boxes;
        for (const auto& o : rec.objects) gt_boxes.push_back(o.box);
        auto t = match_edges_to_gt(g.edges.boxes, rec.relations, gt_boxes);
        std::vector<T> pres(t.presence.begin(), t.presence.end());
        auto pres_t = Tensor<T>::from_data({g.edges.count(), 1}, std::move(pres));
        relpn_terms.push_back(bce_with_logits(g.edges.scores, pres_t));
        cls_terms.push_back(cross_entropy_rows(g.edge_logits, t.cls));
    }
    if (out.images_with_edges == 0) {
        out.total = Tensor<T>::scalar(T(0));
        out.relpn = Tensor<T>::scalar(T(0));
        out.edge_cls = Tensor<T>::scalar(T(0));
        return out;
    }
    auto avg = [&](std::vector<Tensor<T>>& terms) {
        auto s = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
        return scale(s, T(1) / static_cast<T>(out.images_with_edges));
    };
    out.relpn = avg(relpn_terms);
    out.edge_cls = avg(cls_terms);
    out.total = edge_loss ? add(out.relpn, out.edge_cls) : out.relpn;
    return out;
}

template <class T>
double eval_recall_at_k(const GraphEncoder<T>& enc, const std::vector<SceneRecord>& recs,
                        const CorruptionConfig& corr, const std::string& split, int k = 10) {
    std::vector<std::vector<TripletPrediction>> preds;
    std::vector<SceneGraphGt> gts;
    for (size_t i = 0; i < recs.size(); ++i) {
        const auto& rec = recs[i];
        SceneGraphGt gt;
        for (const auto& o : rec.objects) {
            gt.boxes.push_back(o.box);
            gt.classes.push_back(o.class_id);
        }
        gt.relations = rec.relations;
        gts.push_back(std::move(gt));
        auto det = oracle_detect(rec, corr, detector_seed(split, i), enc.cfg.max_nodes,
                                 enc.cfg.num_classes);
        auto fm = enc.backbone.feature_map(image_to_tensor<T>(rec.image), 0);
        auto g = enc.encode(fm, det);
        preds.push_back(g.empty() ? std::vector<TripletPrediction>{} : triplets_from_graph(g));
    }
    return recall_at_k(preds, gts, k);
}

// ---------------- stage 2 ----------------

// Frozen quantities that never change during stage-2 training: the corrupted
// detections, the proposed edge set, and the frozen edge class logits.
struct FrozenGraphCache {
    DetectionSet det;
    std::vector<std::pair<int, int>> edge_indices;
    std::vector<float> edge_logits;  // [E * C_E]
};

template <class T>
struct Stage2Model {
    EncoderConfig ecfg;
    Stage2Config cfg;
    GraphEncoder<T> frozen;       // stage-1 weights, never updated
    Backbone<T> backbone;         // trainable clone, initialized from stage 1
    LgGnn<T> gnn;                 // trainable, initialized from stage 1
    CvsDecoder<T> cvs;
    LinearLayer<T> recon_bottleneck;  // feat_dim -> f_r
    ReconDecoder<T> recon;

    Stage2Model() = default;
    Stage2Model(const GraphEncoder<T>& stage1, const Stage2Config& c)
        : ecfg(stage1.cfg), cfg(c) {
        frozen = GraphEncoder<T>(derive_seed(c.seed, "frozen-clone"), ecfg);
        copy_params<T>(stage1, frozen);
        frozen.set_requires_grad(false);
        backbone = Backbone<T>(derive_seed(c.seed, "stage2-backbone"), ecfg.feat_dim);
        copy_params<T>(stage1.backbone, backbone);
        gnn = LgGnn<T>(derive_seed(c.seed, "stage2-gnn"), ecfg.feat_dim, ecfg.feat_dim,
                       ecfg.gnn_layers, ecfg.gnn_hidden);
        copy_params<T>(stage1.gnn, gnn);
        cvs = CvsDecoder<T>(derive_seed(c.seed, "cvs"), ecfg.feat_dim, ecfg.num_classes, c.f_n,
                            c.f_e, c.cvs_hidden);
        cvs.toggles = c.toggles;
        recon_bottleneck = [&] {
            std::mt19937_64 rng(derive_seed(c.seed, "recon-bottleneck"));
            return LinearLayer<T>(ecfg.feat_dim, c.f_r, rng);
        }();
        recon = ReconDecoder<T>(derive_seed(c.seed, "recon"), ecfg.max_nodes, c.f_r, 16);
    }

    // Frozen-path pass, evaluated once per record and cached.
    FrozenGraphCache build_cache(const SceneRecord& rec, uint64_t det_seed) const {
        FrozenGraphCache cache;
        cache.det = oracle_detect(rec, cfg.corruption, det_seed, ecfg.max_nodes, ecfg.num_classes);
        auto fm = frozen.backbone.feature_map(image_to_tensor<T>(rec.image), 0);
        auto g = frozen.encode(fm, cache.det);
        cache.edge_indices = g.edges.indices;
        if (g.edges.count() > 0)
            cache.edge_logits.assign(g.edge_logits.val().begin(), g.edge_logits.val().end());
        return cache;
    }

    struct Forward {
        Tensor<T> cvs_logits;            // [1, 3]
        Tensor<T> recon_image;           // defined when reconstruction ran
        Tensor<T> recon_target;
        LatentGraph<T> graph;
    };

    // feature map comes from the trainable backbone (batched outside)
    Forward forward(const SceneRecord& rec, const FrozenGraphCache& cache, const FeatureMap<T>& fm,
                    bool training, uint64_t sample_seed) const {
        Forward out;
        const double W = rec.image.width, H = rec.image.height;

        std::vector<Box> boxes;
        for (const auto& d : cache.det.items) boxes.push_back(d.box);
        if (training && cfg.lambda_perturb > 0)
            boxes = perturb_boxes(boxes, cfg.lambda_perturb, sample_seed, W, H);

        NodeSet<T> nodes;
        std::vector<Tensor<T>> rows;
        for (size_t i = 0; i < boxes.size(); ++i) {
            nodes.boxes.push_back(boxes[i]);
            nodes.class_probs.push_back(cache.det.items[i].class_probs);
            rows.push_back(pool_region(fm, boxes[i], ecfg.pool_grid));
        }
        if (rows.empty()) {
            // no detections: criteria prediction falls back to the learned
            // empty-graph embedding, reconstruction is skipped
            out.cvs_logits = cvs.forward(out.graph, W, H);
            return out;
        }
        nodes.feats = concat_rows(rows);

        EdgeSet<T> edges;
        edges.indices = cache.edge_indices;
        std::vector<Tensor<T>> erows;
        for (auto [i, j] : edges.indices) {
            Box ub = union_box(boxes[static_cast<size_t>(i)], boxes[static_cast<size_t>(j)]);
            edges.boxes.push_back(ub);
            erows.push_back(pool_region(fm, ub, ecfg.pool_grid));
        }
        if (!erows.empty()) edges.feats = concat_rows(erows);

        auto [hn, he] = gnn.forward(nodes.feats, edges.feats, edges.indices);
        Tensor<T> logits;
        if (!cache.edge_logits.empty()) {
            std::vector<T> lv(cache.edge_logits.begin(), cache.edge_logits.end());
            logits = Tensor<T>::from_data({edges.count(), kNumRelationClasses}, std::move(lv));
        }
        out.graph = assemble_latent_graph(std::move(nodes), std::move(edges), hn, he, logits);
        out.cvs_logits = cvs.forward(out.graph, W, H);

        if (cfg.use_recon && !out.graph.empty()) {
            const int lv = cfg.recon_half_levels;
            const double s = 1.0 / (1 << lv);
            const Image small = downscale_image(rec.image, lv);
            std::vector<Box> sboxes;
            for (const Box& b : boxes)
                sboxes.push_back(Box(b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s));
            auto layout = build_layout(sboxes, small.height, small.width);
            auto layout_t = layout_to_tensor<T>(layout, ecfg.max_nodes);
            auto lfeat = build_feature_layout(layout, recon_bottleneck.forward(hn));
            auto bg = image_to_tensor<T>(
                backgroundize(small, sboxes, derive_seed(sample_seed, "bgize")));
            out.recon_target = image_to_tensor<T>(small);
            out.recon_image = recon.forward(layout_t, lfeat, bg);
        }
        return out;
    }

    void collect_trainable(ParamList<T>& out) const {
        backbone.collect("stage2.backbone", out);
        gnn.collect("stage2.gnn", out);
        cvs.collect("stage2.cvs", out);
        if (cfg.use_recon) {
            recon_bottleneck.collect("stage2.recon_bottleneck", out);
            recon.collect("stage2.recon", out);
        }
    }

    void collect_all(ParamList<T>& out) const {
        frozen.collect("stage1", out);
        collect_trainable(out);
    }
};

template <class T>
struct Stage2Losses {
    Tensor<T> total, cvs, recon;
    int recon_samples = 0;
};

template <class T>
Stage2Losses<T> stage2_loss(const Stage2Model<T>& model,
                            const std::vector<const SceneRecord*>& batch,
                            const std::vector<const FrozenGraphCache*>& caches,
                            const std::array<double, 3>& pos_weights, bool training,
                            uint64_t step_seed) {
    std::vector<const Image*> imgs;
    for (const auto* r : batch) imgs.push_back(&r->image);
    auto x = images_to_batch<T>(imgs);
    auto fmb = model.backbone.forward(x);

    std::vector<Tensor<T>> logit_rows, recon_terms;
    std::vector<T> targets, weights;
    Stage2Losses<T> out;
    for (size_t i = 0; i < batch.size(); ++i) {
        const SceneRecord& rec = *batch[i];
        FeatureMap<T> fm{slice_batch(fmb, static_cast<int>(i)), 8, rec.image.width,
                         rec.image.height};
        auto fwd = model.forward(rec, *caches[i], fm, training,
                                 derive_seed(step_seed, "sample-" + std::to_string(i)));
        logit_rows.push_back(fwd.cvs_logits);
        for (int c = 0; c < 3; ++c) {
            targets.push_back(static_cast<T>(rec.cvs[static_cast<size_t>(c)]));
            weights.push_back(static_cast<T>(rec.cvs[static_cast<size_t>(c)] != 0
                                                 ? pos_weights[static_cast<size_t>(c)]
                                                 : 1.0));
        }
        if (fwd.recon_image.defined()) {
            ++out.recon_samples;
            recon_terms.push_back(
                recon_loss(fwd.recon_target, fwd.recon_image, model.frozen.backbone).total);
        }
    }
    const int b = static_cast<int>(batch.size());
    auto logits = concat_rows(logit_rows);
    auto targets_t = Tensor<T>::from_data({b, 3}, std::move(targets));
    auto weights_t = Tensor<T>::from_data({b, 3}, std::move(weights));
    out.cvs = bce_with_logits(logits, targets_t, &weights_t);
    if (!recon_terms.empty()) {
        auto s = recon_terms[0];
        for (size_t i = 1; i < recon_terms.size(); ++i) s = add(s, recon_terms[i]);
        out.recon = scale(s, T(1) / static_cast<T>(out.recon_samples));
        out.total = add(out.cvs, scale(out.recon, static_cast<T>(model.cfg.w_recon)));
    } else {
        out.recon = Tensor<T>::scalar(T(0));
        out.total = out.cvs;
    }
    return out;
}

// Evaluation logits for a full split: perturbation-free, cache-driven.
template <class T>
std::vector<std::array<double, 3>> stage2_predict(const Stage2Model<T>& model,
                                                  const std::vector<SceneRecord>& recs,
                                                  const std::vector<FrozenGraphCache>& caches) {
    std::vector<std::array<double, 3>> out;
    for (size_t i = 0; i < recs.size(); ++i) {
        auto fm = model.backbone.feature_map(image_to_tensor<T>(recs[i].image), 0);
        auto fwd = model.forward(recs[i], caches[i], fm, false, 0);
        std::array<double, 3> row{};
        for (int c = 0; c < 3; ++c)
            row[static_cast<size_t>(c)] = static_cast<double>(fwd.cvs_logits.val()[static_cast<size_t>(c)]);
        out.push_back(row);
    }
    return out;
}

inline std::vector<std::array<int, 3>> cvs_labels(const std::vector<SceneRecord>& recs) {
    std::vector<std::array<int, 3>> out;
    for (const auto& r : recs) out.push_back(r.cvs);
    return out;
}

// ---------------- fit loops ----------------

struct FitResult {
    std::string checkpoint_path;
    double best_metric = 0;
    int best_epoch = -1;
    std::vector<double> val_curve;
};

template <class T>
FitResult fit_stage1(const Stage1Config& cfg, const std::vector<SceneRecord>& train,
                     const std::vector<SceneRecord>& val, const std::string& out_dir,
                     std::ostream* progress = nullptr, int epoch_offset = 0,
                     const std::string& init_ckpt = "") {
    std::filesystem::create_directories(out_dir);
    GraphEncoder<T> enc(cfg.seed, cfg.encoder);
    ParamList<T> plist;
    enc.collect("stage1", plist);
    if (!init_ckpt.empty()) load_params(init_ckpt, plist);
    AdamW<T> opt(plist, cfg.lr, cfg.weight_decay);

    std::ofstream log(out_dir + "/stage1_log.jsonl",
                      epoch_offset > 0 ? std::ios::app : std::ios::out);
    FitResult result;
    result.checkpoint_path = out_dir + "/stage1_best.ckpt";
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});

    const nlohmann::json cfg_json = cfg;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double ep_total = 0, ep_relpn = 0, ep_cls = 0;
        int steps = 0;
        for (size_t s = 0; s < order.size(); s += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const SceneRecord*> batch;
            std::vector<SceneRecord> augmented;
            std::vector<uint64_t> det_seeds;
            const size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch_size));
            augmented.reserve(e - s);
            for (size_t k = s; k < e; ++k) {
                if (cfg.augment) {
                    augmented.push_back(augment_record(
                        train[order[k]],
                        derive_seed(cfg.seed, "aug-" + std::to_string(epoch) + "-" +
                                                  std::to_string(order[k]))));
                    batch.push_back(&augmented.back());
                } else {
                    batch.push_back(&train[order[k]]);
                }
                det_seeds.push_back(detector_seed("train", order[k]));
            }
            auto losses = stage1_loss(enc, batch, det_seeds, cfg.corruption, cfg.edge_loss);
            if (losses.images_with_edges == 0) continue;
            opt.zero_grad();
            losses.total.backward();
            opt.step();
            ep_total += losses.total.item();
            ep_relpn += losses.relpn.item();
            ep_cls += losses.edge_cls.item();
            ++steps;
        }
        const double recall = eval_recall_at_k(enc, val, cfg.corruption, "val", 10);
        result.val_curve.push_back(recall);
        nlohmann::json line = {{"epoch", epoch + epoch_offset},
                               {"split", "train"},
                               {"loss", steps ? ep_total / steps : 0.0},
                               {"loss_relpn", steps ? ep_relpn / steps : 0.0},
                               {"loss_edge_classifier", steps ? ep_cls / steps : 0.0},
                               {"val_recall_at_10", recall}};
        log << line.dump() << "\n";
        log.flush();
        if (progress) *progress << "stage1 epoch " << epoch << " recall@10 " << recall << "\n";
        if (result.best_epoch < 0 || recall > result.best_metric) {
            result.best_metric = recall;
            result.best_epoch = epoch;
            nlohmann::json snapshot = {{"stage", 1},
                                       {"config", cfg_json},
                                       {"epoch", epoch + epoch_offset},
                                       {"val_recall_at_10", recall}};
            save_params(result.checkpoint_path, plist, snapshot.dump());
        }
    }
    return result;
}

template <class T>
GraphEncoder<T> load_stage1(const std::string& ckpt_path, Stage1Config* cfg_out = nullptr) {
    // build from the embedded config snapshot, then load weights
    std::ifstream probe(ckpt_path, std::ios::binary);
    if (!probe) throw std::runtime_error("cannot open checkpoint: " + ckpt_path);
    GraphEncoder<T> tmp(0, EncoderConfig{});
    ParamList<T> plist;
    tmp.collect("stage1", plist);
    Stage1Config cfg;
    {
        // first pass just to read the config; tensor shapes may mismatch, so
        // parse the header manually
        char magic[4];
        probe.read(magic, 4);
        uint32_t hlen = 0;
        probe.read(reinterpret_cast<char*>(&hlen), 4);
        std::string header(hlen, '\0');
        probe.read(header.data(), hlen);
        auto j = nlohmann::json::parse(header);
        cfg = j.at("config").at("config").get<Stage1Config>();
    }
    GraphEncoder<T> enc(cfg.seed, cfg.encoder);
    ParamList<T> plist2;
    enc.collect("stage1", plist2);
    load_params(ckpt_path, plist2);
    if (cfg_out) *cfg_out = cfg;
    return enc;
}

template <class T>
FitResult fit_stage2(const Stage2Config& cfg, const GraphEncoder<T>& stage1,
                     const std::vector<SceneRecord>& train, const std::vector<SceneRecord>& val,
                     const std::string& out_dir, std::ostream* progress = nullptr,
                     std::vector<double>* recon_curve = nullptr, int epoch_offset = 0,
                     const std::string& init_ckpt = "") {
    std::filesystem::create_directories(out_dir);
    Stage2Model<T> model(stage1, cfg);
    if (!init_ckpt.empty()) {
        ParamList<T> all;
        model.collect_all(all);
        load_params(init_ckpt, all);
    }
    ParamList<T> trainable;
    model.collect_trainable(trainable);
    AdamW<T> opt(trainable, cfg.lr, cfg.weight_decay);
    const auto pos_weights = inverse_freq_weights(cvs_labels(train));

    // frozen path is deterministic: compute once per record
    std::vector<FrozenGraphCache> train_cache, val_cache;
    for (size_t i = 0; i < train.size(); ++i)
        train_cache.push_back(model.build_cache(train[i], detector_seed("train", i)));
    for (size_t i = 0; i < val.size(); ++i)
        val_cache.push_back(model.build_cache(val[i], detector_seed("val", i)));

    std::ofstream log(out_dir + "/stage2_log.jsonl",
                      epoch_offset > 0 ? std::ios::app : std::ios::out);
    FitResult result;
    result.checkpoint_path = out_dir + "/stage2_best.ckpt";
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});

    const nlohmann::json cfg_json = cfg;
    long step_counter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double ep_total = 0, ep_cvs = 0, ep_recon = 0;
        int steps = 0, recon_steps = 0;
        for (size_t s = 0; s < order.size(); s += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const SceneRecord*> batch;
            std::vector<const FrozenGraphCache*> caches;
            const size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch_size));
            for (size_t k = s; k < e; ++k) {
                batch.push_back(&train[order[k]]);
                caches.push_back(&train_cache[order[k]]);
            }
            auto losses = stage2_loss(model, batch, caches, pos_weights, true,
                                      derive_seed(cfg.seed, "step-" + std::to_string(step_counter)));
            ++step_counter;
            opt.zero_grad();
            losses.total.backward();
            opt.step();
            ep_total += losses.total.item();
            ep_cvs += losses.cvs.item();
            if (losses.recon_samples > 0) {
                ep_recon += losses.recon.item();
                ++recon_steps;
            }
            ++steps;
        }
        auto val_logits = stage2_predict(model, val, val_cache);
        const double val_map = cvs_map(val_logits, cvs_labels(val)).map;
        result.val_curve.push_back(val_map);
        if (recon_curve) recon_curve->push_back(recon_steps ? ep_recon / recon_steps : 0.0);
        nlohmann::json line = {{"epoch", epoch + epoch_offset},
                               {"split", "train"},
                               {"loss", steps ? ep_total / steps : 0.0},
                               {"loss_cvs", steps ? ep_cvs / steps : 0.0},
                               {"loss_recon", recon_steps ? ep_recon / recon_steps : 0.0},
                               {"val_map", val_map}};
        log << line.dump() << "\n";
        log.flush();
        if (progress) *progress << "stage2 epoch " << epoch << " val mAP " << val_map << "\n";
        if (result.best_epoch < 0 || val_map > result.best_metric) {
            result.best_metric = val_map;
            result.best_epoch = epoch;
            ParamList<T> all;
            model.collect_all(all);
            nlohmann::json snapshot = {{"stage", 2},
                                       {"config", cfg_json},
                                       {"encoder", nlohmann::json(model.ecfg)},
                                       {"epoch", epoch + epoch_offset},
                                       {"val_map", val_map}};
            save_params(result.checkpoint_path, all, snapshot.dump());
        }
    }
    return result;
}

template <class T>
Stage2Model<T> load_stage2(const std::string& ckpt_path, Stage2Config* cfg_out = nullptr) {
    std::ifstream probe(ckpt_path, std::ios::binary);
    if (!probe) throw std::runtime_error("cannot open checkpoint: " + ckpt_path);
    char magic[4];
    probe.read(magic, 4);
    uint32_t hlen = 0;
    probe.read(reinterpret_cast<char*>(&hlen), 4);
    std::string header(hlen, '\0');
    probe.read(header.data(), hlen);
    auto j = nlohmann::json::parse(header);
    const Stage2Config cfg = j.at("config").at("config").get<Stage2Config>();
    const EncoderConfig ecfg = j.at("config").at("encoder").get<EncoderConfig>();

    GraphEncoder<T> stage1_shell(0, ecfg);
    Stage2Model<T> model(stage1_shell, cfg);
    ParamList<T> all;
    model.collect_all(all);
    load_params(ckpt_path, all);
    if (cfg_out) *cfg_out = cfg;
    return model;
}

// ---------------- layout-only baseline training ----------------

template <class T>
Tensor<T> class_layout_batch(const std::vector<const SceneRecord*>& batch,
                             const std::vector<const DetectionSet*>& dets, int num_classes,
                             int out_h, int out_w) {
    std::vector<T> all;
    all.reserve(batch.size() * static_cast<size_t>(num_classes) * out_h * out_w);
    for (size_t i = 0; i < batch.size(); ++i) {
        const double sx = static_cast<double>(out_w) / batch[i]->image.width;
        const double sy = static_cast<double>(out_h) / batch[i]->image.height;
        std::vector<Box> boxes;
        std::vector<int> classes;
        for (const auto& d : dets[i]->items) {
            boxes.push_back(Box(d.box.x1 * sx, d.box.y1 * sy, d.box.x2 * sx, d.box.y2 * sy));
            const auto it = std::max_element(d.class_probs.begin(), d.class_probs.end());
            classes.push_back(static_cast<int>(it - d.class_probs.begin()));
        }
        auto l = build_class_layout(boxes, classes, num_classes, out_h, out_w);
        for (auto v : l.grid) all.push_back(static_cast<T>(v));
    }
    return Tensor<T>::from_data(
        {static_cast<int>(batch.size()), num_classes, out_h, out_w}, std::move(all));
}

struct LayoutBaselineConfig {
    int epochs = 12, batch_size = 32, layout_size = 32, num_classes = 7;
    double lr = 2e-3, weight_decay = 0.0;
    uint64_t seed = 3;
    CorruptionConfig corruption;
};

template <class T>
std::pair<LayoutCvs<T>, FitResult> fit_layoutcvs(const LayoutBaselineConfig& cfg,
                                                 const std::vector<SceneRecord>& train,
                                                 const std::vector<SceneRecord>& val,
                                                 std::ostream* progress = nullptr) {
    LayoutCvs<T> model(derive_seed(cfg.seed, "layoutcvs"), cfg.num_classes);
    ParamList<T> plist;
    model.collect("layoutcvs", plist);
    AdamW<T> opt(plist, cfg.lr, cfg.weight_decay);
    const auto pos_weights = inverse_freq_weights(cvs_labels(train));

    std::vector<DetectionSet> train_det, val_det;
    for (size_t i = 0; i < train.size(); ++i)
        train_det.push_back(oracle_detect(train[i], cfg.corruption, detector_seed("train", i), 16,
                                          cfg.num_classes));
    for (size_t i = 0; i < val.size(); ++i)
        val_det.push_back(
            oracle_detect(val[i], cfg.corruption, detector_seed("val", i), 16, cfg.num_classes));

    auto predict = [&](const std::vector<SceneRecord>& recs,
                       const std::vector<DetectionSet>& dets) {
        std::vector<std::array<double, 3>> out;
        for (size_t i = 0; i < recs.size(); ++i) {
            auto x = class_layout_batch<T>({&recs[i]}, {&dets[i]}, cfg.num_classes,
                                           cfg.layout_size, cfg.layout_size);
            auto logits = model.forward(x);
            out.push_back({static_cast<double>(logits.val()[0]),
                           static_cast<double>(logits.val()[1]),
                           static_cast<double>(logits.val()[2])});
        }
        return out;
    };

    FitResult result;
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    ParamList<T> best;
    std::vector<std::vector<T>> best_vals;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (size_t s = 0; s < order.size(); s += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const SceneRecord*> batch;
            std::vector<const DetectionSet*> dets;
            std::vector<T> targets, weights;
            const size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch_size));
            for (size_t k = s; k < e; ++k) {
                batch.push_back(&train[order[k]]);
                dets.push_back(&train_det[order[k]]);
                for (int c = 0; c < 3; ++c) {
                    const int y = train[order[k]].cvs[static_cast<size_t>(c)];
                    targets.push_back(static_cast<T>(y));
                    weights.push_back(static_cast<T>(y ? pos_weights[static_cast<size_t>(c)] : 1.0));
                }
            }
            auto x = class_layout_batch<T>(batch, dets, cfg.num_classes, cfg.layout_size,
                                           cfg.layout_size);
            auto logits = model.forward(x);
            auto t = Tensor<T>::from_data({static_cast<int>(batch.size()), 3}, std::move(targets));
            auto w = Tensor<T>::from_data({static_cast<int>(batch.size()), 3}, std::move(weights));
            auto loss = bce_with_logits(logits, t, &w);
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
        const double val_map = cvs_map(predict(val, val_det), cvs_labels(val)).map;
        result.val_curve.push_back(val_map);
        if (progress) *progress << "layoutcvs epoch " << epoch << " val mAP " << val_map << "\n";
        if (result.best_epoch < 0 || val_map > result.best_metric) {
            result.best_metric = val_map;
            result.best_epoch = epoch;
            best_vals.clear();
            for (auto& [name, p] : plist) best_vals.push_back(p.val());
        }
    }
    for (size_t i = 0; i < plist.size(); ++i) plist[i].second.val() = best_vals[i];
    return {model, result};
}

}  // namespace lgcvs
