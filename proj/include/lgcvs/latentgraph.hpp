#pragma once

// Latent graph encoder: node assembly from detections, RelPN edge scoring,
// top-E sampling, union-box edge features, the iterative node/edge GNN,
// edge classification and ground-truth matching.

#include "lgcvs/nn.hpp"
#include "lgcvs/perception.hpp"

#include <nlohmann/json.hpp>

namespace lgcvs {

template <class T>
struct NodeSet {
    std::vector<Box> boxes;
    std::vector<std::vector<double>> class_probs;  // length C each
    Tensor<T> feats;                               // [N, F], undefined when empty
    int count() const { return static_cast<int>(boxes.size()); }
};

template <class T>
struct EdgeSet {
    std::vector<std::pair<int, int>> indices;  // canonical i < j, no duplicates
    std::vector<Box> boxes;                    // union boxes
    Tensor<T> feats;                           // [E, F]
    Tensor<T> scores;                          // [E, 1] RelPN scores of the kept edges
    int count() const { return static_cast<int>(indices.size()); }
};

template <class T>
struct LatentGraph {
    NodeSet<T> nodes;
    EdgeSet<T> edges;
    Tensor<T> node_feats;   // h^LG, [N, F]
    Tensor<T> edge_feats;   // h^LG, [E, F]
    Tensor<T> edge_logits;  // [E, C_E]
    bool empty() const { return nodes.count() == 0; }
};

// Normalized box descriptor (coordinates scaled to [0,1]).
inline std::array<double, 4> box_descriptor(const Box& b, double w, double h) {
    return {b.x1 / w, b.y1 / h, b.x2 / w, b.y2 / h};
}

template <class T>
NodeSet<T> init_nodes(const DetectionSet& det, const FeatureMap<T>& fm, int pool_grid = 7) {
    NodeSet<T> nodes;
    std::vector<Tensor<T>> rows;
    for (const auto& d : det.items) {
        nodes.boxes.push_back(d.box);
        nodes.class_probs.push_back(d.class_probs);
        rows.push_back(pool_region(fm, d.box, pool_grid));
    }
    if (!rows.empty()) nodes.feats = concat_rows(rows);
    return nodes;
}

// Per-node descriptor matrix (h_i, c_i, b_i) used by the RelPN.
template <class T>
Tensor<T> node_descriptors(const NodeSet<T>& nodes, double img_w, double img_h) {
    const int n = nodes.count();
    const int c = static_cast<int>(nodes.class_probs[0].size());
    std::vector<T> aux(static_cast<size_t>(n) * (c + 4));
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < c; ++k)
            aux[static_cast<size_t>(i) * (c + 4) + k] = static_cast<T>(nodes.class_probs[i][k]);
        auto bd = box_descriptor(nodes.boxes[i], img_w, img_h);
        for (int k = 0; k < 4; ++k)
            aux[static_cast<size_t>(i) * (c + 4) + c + k] = static_cast<T>(bd[k]);
    }
    auto aux_t = Tensor<T>::from_data({n, c + 4}, std::move(aux));
    return concat_cols<T>({nodes.feats, aux_t});
}

// RelPN: 2-layer perceptron over concatenated pair descriptors, symmetrized
// by averaging both orderings.
template <class T>
struct RelPn {
    Mlp<T> mlp;
    int feat_dim, num_classes;

    RelPn() = default;
    RelPn(uint64_t seed, int f, int c, int hidden = 64) : feat_dim(f), num_classes(c) {
        std::mt19937_64 rng(seed);
        mlp = Mlp<T>(2 * (f + c + 4), hidden, 1, rng);
    }

    // Scores for all unordered pairs (i<j, lexicographic), shape [P, 1].
    Tensor<T> score_pairs(const NodeSet<T>& nodes, double img_w, double img_h) const {
        const int n = nodes.count();
        if (n < 2) return Tensor<T>();
        auto x = node_descriptors(nodes, img_w, img_h);
        std::vector<int> left, right;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                left.push_back(i);
                right.push_back(j);
            }
        const int p = static_cast<int>(left.size());
        // both orderings in one batch: rows [0,P) are (i,j), rows [P,2P) are (j,i)
        std::vector<int> a(left), b(right);
        a.insert(a.end(), right.begin(), right.end());
        b.insert(b.end(), left.begin(), left.end());
        auto pair_desc = concat_cols<T>({gather_rows(x, a), gather_rows(x, b)});
        auto s = mlp.forward(pair_desc);  // [2P, 1]
        std::vector<int> fwd(p), bwd(p);
        for (int k = 0; k < p; ++k) {
            fwd[k] = k;
            bwd[k] = p + k;
        }
        return scale(add(gather_rows(s, fwd), gather_rows(s, bwd)), T(0.5));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        mlp.collect(prefix + ".mlp", out);
    }
};

inline int pair_index(int i, int j, int n) {
    // index of (i<j) in lexicographic enumeration of unordered pairs
    return i * n - i * (i + 1) / 2 + (j - i - 1);
}

// Per node, its top-E partners by score (ties by lower partner index); union
// over nodes, canonical i<j, deduplicated, sorted.
inline std::vector<std::pair<int, int>> sample_edges(const std::vector<double>& pair_scores, int n,
                                                     int e) {
    std::vector<std::pair<int, int>> out;
    if (n < 2 || e < 1) return out;
    std::vector<std::vector<bool>> seen(n, std::vector<bool>(n, false));
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> ranked;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const int p = i < j ? pair_index(i, j, n) : pair_index(j, i, n);
            ranked.push_back({pair_scores[static_cast<size_t>(p)], j});
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int k = 0; k < std::min<int>(e, static_cast<int>(ranked.size())); ++k) {
            int a = i, b = ranked[k].second;
            if (a > b) std::swap(a, b);
            if (!seen[a][b]) {
                seen[a][b] = true;
                out.push_back({a, b});
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

template <class T>
EdgeSet<T> init_edges(const NodeSet<T>& nodes, const std::vector<std::pair<int, int>>& indices,
                      const Tensor<T>& pair_scores, const FeatureMap<T>& fm, int pool_grid = 7) {
    EdgeSet<T> edges;
    edges.indices = indices;
    std::vector<Tensor<T>> rows;
    std::vector<int> score_rows;
    const int n = nodes.count();
    for (auto [i, j] : indices) {
        Box ub = union_box(nodes.boxes[static_cast<size_t>(i)], nodes.boxes[static_cast<size_t>(j)]);
        edges.boxes.push_back(ub);
        rows.push_back(pool_region(fm, ub, pool_grid));
        score_rows.push_back(pair_index(i, j, n));
    }
    if (!rows.empty()) {
        edges.feats = concat_rows(rows);
        if (pair_scores.defined()) edges.scores = gather_rows(pair_scores, score_rows);
    }
    return edges;
}

// Iterative node/edge message passing: per edge, an MLP over
// concat(h_i, h_edge, h_j) emits (delta_i, new_edge, delta_j); node updates
// are the mean of incident deltas; skip connections and GraphNorm per layer.
template <class T>
struct LgGnn {
    std::vector<Mlp<T>> edge_mlps;
    std::vector<GraphNorm<T>> norms;
    int node_dim, edge_dim;

    LgGnn() = default;
    LgGnn(uint64_t seed, int node_dim_, int edge_dim_, int layers = 2, int hidden = 128)
        : node_dim(node_dim_), edge_dim(edge_dim_) {
        std::mt19937_64 rng(seed);
        for (int l = 0; l < layers; ++l) {
            edge_mlps.emplace_back(2 * node_dim + edge_dim, hidden, 2 * node_dim + edge_dim, rng);
            norms.emplace_back(node_dim);
        }
    }

    std::pair<Tensor<T>, Tensor<T>> forward(Tensor<T> node_feats, Tensor<T> edge_feats,
                                            const std::vector<std::pair<int, int>>& indices) const {
        const int n = node_feats.dim(0);
        std::vector<int> src, dst, incident;
        for (auto [i, j] : indices) {
            src.push_back(i);
            dst.push_back(j);
        }
        for (auto [i, j] : indices) {
            incident.push_back(i);
            incident.push_back(j);
        }
        for (size_t l = 0; l < edge_mlps.size(); ++l) {
            if (!indices.empty()) {
                auto hi = gather_rows(node_feats, src);
                auto hj = gather_rows(node_feats, dst);
                auto triplet = concat_cols<T>({hi, edge_feats, hj});
                auto out = edge_mlps[l].forward(triplet);
                auto delta_i = slice_cols(out, 0, node_dim);
                auto new_edge = slice_cols(out, node_dim, node_dim + edge_dim);
                auto delta_j = slice_cols(out, node_dim + edge_dim, 2 * node_dim + edge_dim);
                // interleave (delta_i, delta_j) per edge to match `incident`
                std::vector<Tensor<T>> deltas;
                for (int e = 0; e < static_cast<int>(indices.size()); ++e) {
                    deltas.push_back(gather_rows(delta_i, {e}));
                    deltas.push_back(gather_rows(delta_j, {e}));
                }
                auto node_delta = scatter_mean_rows(concat_rows(deltas), incident, n);
                node_feats = add(node_feats, node_delta);       // skip connection
                edge_feats = add(edge_feats, relu(new_edge));   // skip connection
            }
            node_feats = norms[l].forward(node_feats);
        }
        return {node_feats, edge_feats};
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (size_t l = 0; l < edge_mlps.size(); ++l) {
            edge_mlps[l].collect(prefix + ".edge_mlp" + std::to_string(l), out);
            norms[l].collect(prefix + ".norm" + std::to_string(l), out);
        }
    }
};

template <class T>
struct EdgeClassifier {
    Mlp<T> mlp;

    EdgeClassifier() = default;
    EdgeClassifier(uint64_t seed, int f) {
        std::mt19937_64 rng(seed);
        mlp = Mlp<T>(f, f, kNumRelationClasses, rng);
    }

    Tensor<T> forward(const Tensor<T>& edge_feats) const { return mlp.forward(edge_feats); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        mlp.collect(prefix + ".mlp", out);
    }
};

struct EdgeTargets {
    std::vector<double> presence;  // 0/1 per predicted edge
    std::vector<int> cls;          // relation class id, 0 when unmatched
};

// gIoU >= 0.5 matching of predicted edge union boxes against ground-truth
// edge union boxes; positives inherit the matched relation class.
inline EdgeTargets match_edges_to_gt(const std::vector<Box>& pred_edge_boxes,
                                     const std::vector<Relation>& gt_relations,
                                     const std::vector<Box>& gt_boxes) {
    EdgeTargets t;
    std::vector<Box> gt_edge_boxes;
    for (const auto& r : gt_relations)
        gt_edge_boxes.push_back(union_box(gt_boxes[static_cast<size_t>(r.i)],
                                          gt_boxes[static_cast<size_t>(r.j)]));
    for (const auto& pb : pred_edge_boxes) {
        double best = -2.0;
        int best_k = -1;
        for (size_t k = 0; k < gt_edge_boxes.size(); ++k) {
            const double g = giou(pb, gt_edge_boxes[k]);
            if (g > best) {
                best = g;
                best_k = static_cast<int>(k);
            }
        }
        if (best_k >= 0 && best >= 0.5) {
            t.presence.push_back(1.0);
            t.cls.push_back(static_cast<int>(gt_relations[static_cast<size_t>(best_k)].cls));
        } else {
            t.presence.push_back(0.0);
            t.cls.push_back(0);
        }
    }
    return t;
}

template <class T>
LatentGraph<T> assemble_latent_graph(NodeSet<T> nodes, EdgeSet<T> edges, Tensor<T> node_feats,
                                     Tensor<T> edge_feats, Tensor<T> edge_logits) {
    LatentGraph<T> g;
    g.nodes = std::move(nodes);
    g.edges = std::move(edges);
    g.node_feats = std::move(node_feats);
    g.edge_feats = std::move(edge_feats);
    g.edge_logits = std::move(edge_logits);
    return g;
}

// ---- debug serialization (JSON, float32 features as base64) ----

namespace detail_b64 {
inline const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(const std::vector<float>& data) {
    const uint8_t* p = reinterpret_cast<const uint8_t*>(data.data());
    const size_t n = data.size() * sizeof(float);
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (size_t i = 0; i < n; i += 3) {
        uint32_t v = static_cast<uint32_t>(p[i]) << 16;
        if (i + 1 < n) v |= static_cast<uint32_t>(p[i + 1]) << 8;
        if (i + 2 < n) v |= p[i + 2];
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += i + 1 < n ? tbl[(v >> 6) & 63] : '=';
        out += i + 2 < n ? tbl[v & 63] : '=';
    }
    return out;
}

inline std::vector<float> decode(const std::string& s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<uint8_t> bytes;
    uint32_t buf = 0;
    int bits = 0;
    for (char c : s) {
        const int v = val(c);
        if (v < 0) continue;
        buf = (buf << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            bytes.push_back(static_cast<uint8_t>((buf >> bits) & 0xff));
        }
    }
    std::vector<float> out(bytes.size() / sizeof(float));
    std::memcpy(out.data(), bytes.data(), out.size() * sizeof(float));
    return out;
}
}  // namespace detail_b64

template <class T>
nlohmann::json latent_graph_to_json(const LatentGraph<T>& g) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    const int f = g.empty() ? 0 : g.node_feats.dim(1);
    for (int i = 0; i < g.nodes.count(); ++i) {
        nlohmann::json jn;
        const Box& b = g.nodes.boxes[static_cast<size_t>(i)];
        jn["bbox"] = {b.x1, b.y1, b.x2, b.y2};
        jn["class_probs"] = g.nodes.class_probs[static_cast<size_t>(i)];
        std::vector<float> feat(static_cast<size_t>(f));
        for (int k = 0; k < f; ++k)
            feat[static_cast<size_t>(k)] = static_cast<float>(g.node_feats.val()[static_cast<size_t>(i) * f + k]);
        jn["feature"] = detail_b64::encode(feat);
        j["nodes"].push_back(jn);
    }
    j["edges"] = nlohmann::json::array();
    for (int e = 0; e < g.edges.count(); ++e) {
        nlohmann::json je;
        je["i"] = g.edges.indices[static_cast<size_t>(e)].first;
        je["j"] = g.edges.indices[static_cast<size_t>(e)].second;
        const Box& b = g.edges.boxes[static_cast<size_t>(e)];
        je["bbox"] = {b.x1, b.y1, b.x2, b.y2};
        std::vector<double> logits(kNumRelationClasses);
        for (int k = 0; k < kNumRelationClasses; ++k)
            logits[static_cast<size_t>(k)] =
                static_cast<double>(g.edge_logits.val()[static_cast<size_t>(e) * kNumRelationClasses + k]);
        je["class_logits"] = logits;
        std::vector<float> feat(static_cast<size_t>(f));
        for (int k = 0; k < f; ++k)
            feat[static_cast<size_t>(k)] = static_cast<float>(g.edge_feats.val()[static_cast<size_t>(e) * f + k]);
        je["feature"] = detail_b64::encode(feat);
        j["edges"].push_back(je);
    }
    return j;
}

}  // namespace lgcvs
