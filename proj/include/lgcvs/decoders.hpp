#pragma once

// Graph decoders: pixel layouts, layout-conditioned image reconstruction with
// spatially-predicted normalization, and the criteria prediction head.

#include "lgcvs/latentgraph.hpp"

namespace lgcvs {

// Per-node pixel occupancy, channel i marks pixels covered by node i.
struct Layout {
    int h = 0, w = 0, n = 0;
    std::vector<uint8_t> grid;  // [n][h][w]

    uint8_t at(int i, int y, int x) const {
        return grid[(static_cast<size_t>(i) * h + y) * w + x];
    }
    uint8_t& at(int i, int y, int x) { return grid[(static_cast<size_t>(i) * h + y) * w + x]; }
};

// Box membership: integer pixel (x, y) belongs to the box iff
// x1 <= x < x2 and y1 <= y < y2.
inline Layout build_layout(const std::vector<Box>& boxes, int h, int w) {
    Layout l;
    l.h = h;
    l.w = w;
    l.n = static_cast<int>(boxes.size());
    l.grid.assign(static_cast<size_t>(l.n) * h * w, 0);
    for (int i = 0; i < l.n; ++i) {
        const Box& b = boxes[static_cast<size_t>(i)];
        const int x0 = std::max(0, static_cast<int>(std::ceil(b.x1)));
        const int x1 = std::min(w, static_cast<int>(std::ceil(b.x2)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(b.y1)));
        const int y1 = std::min(h, static_cast<int>(std::ceil(b.y2)));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) l.at(i, y, x) = 1;
    }
    return l;
}

inline BinaryMask resize_mask_nearest(const BinaryMask& m, int out_w, int out_h) {
    BinaryMask r(out_w, out_h);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(m.width - 1, x * m.width / out_w);
            const int sy = std::min(m.height - 1, y * m.height / out_h);
            r.set(x, y, m.at(sx, sy));
        }
    return r;
}

inline Layout build_layout(const std::vector<BinaryMask>& masks, int h, int w) {
    Layout l;
    l.h = h;
    l.w = w;
    l.n = static_cast<int>(masks.size());
    l.grid.assign(static_cast<size_t>(l.n) * h * w, 0);
    for (int i = 0; i < l.n; ++i) {
        const BinaryMask& m = masks[static_cast<size_t>(i)].width == w &&
                                      masks[static_cast<size_t>(i)].height == h
                                  ? masks[static_cast<size_t>(i)]
                                  : resize_mask_nearest(masks[static_cast<size_t>(i)], w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (m.at(x, y)) l.at(i, y, x) = 1;
    }
    return l;
}

// Layout as a constant tensor, zero-padded to n_max channels.
template <class T>
Tensor<T> layout_to_tensor(const Layout& l, int n_max) {
    if (l.n > n_max) throw std::invalid_argument("layout_to_tensor: more nodes than n_max");
    std::vector<T> v(static_cast<size_t>(n_max) * l.h * l.w, T(0));
    for (size_t k = 0; k < l.grid.size(); ++k) v[k] = static_cast<T>(l.grid[k]);
    return Tensor<T>::from_data({1, n_max, l.h, l.w}, std::move(v));
}

// Per-pixel sum of node features over the nodes covering that pixel:
// out[:, p] = sum_i L[i, p] * feats[i, :].  Differentiable in feats.
template <class T>
Tensor<T> build_feature_layout(const Layout& l, const Tensor<T>& feats) {
    const int f = feats.dim(1);
    if (feats.dim(0) != l.n) throw std::invalid_argument("build_feature_layout: node count");
    auto out = detail::make_op<T>({1, f, l.h, l.w}, {feats.node()});
    auto fn = feats.node(), on = out.node();
    const size_t plane = static_cast<size_t>(l.h) * l.w;
    std::fill(on->val.begin(), on->val.end(), T(0));
    for (int i = 0; i < l.n; ++i)
        for (size_t p = 0; p < plane; ++p) {
            if (!l.grid[static_cast<size_t>(i) * plane + p]) continue;
            for (int k = 0; k < f; ++k)
                on->val[static_cast<size_t>(k) * plane + p] += fn->val[static_cast<size_t>(i) * f + k];
        }
    const Layout lc = l;
    on->backfn = [fn, on = on.get(), lc, f, plane] {
        if (!fn->requires_grad) return;
        fn->ensure_grad();
        for (int i = 0; i < lc.n; ++i)
            for (size_t p = 0; p < plane; ++p) {
                if (!lc.grid[static_cast<size_t>(i) * plane + p]) continue;
                for (int k = 0; k < f; ++k)
                    fn->grad[static_cast<size_t>(i) * f + k] +=
                        on->grad[static_cast<size_t>(k) * plane + p];
            }
    };
    return out;
}

// Replace every pixel inside a foreground box with clipped unit Gaussian noise.
inline Image backgroundize(const Image& img, const std::vector<Box>& fg_boxes, uint64_t seed) {
    Image out = img;
    Layout l = build_layout(fg_boxes, img.height, img.width);
    std::mt19937_64 rng(derive_seed(seed, "backgroundize"));
    std::normal_distribution<float> gauss(0.f, 1.f);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            bool fg = false;
            for (int i = 0; i < l.n && !fg; ++i) fg = l.at(i, y, x);
            if (!fg) continue;
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = std::clamp(gauss(rng), 0.f, 1.f);
        }
    return out;
}

namespace detail {
template <class T>
Tensor<T> instance_normalize(const Tensor<T>& x, T eps = T(1e-5)) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto flat = reshape(x, {n * c, h * w});
    auto mu = mean_dim1(flat);
    auto centered = colwise(flat, mu, BcastMode::Sub);
    auto var = mean_dim1(square(centered));
    auto inv = reciprocal(sqrt_t(add_scalar(var, eps)));
    return reshape(colwise(centered, inv, BcastMode::Mul), {n, c, h, w});
}
}  // namespace detail

// Normalization whose scale and shift maps are predicted per pixel from the
// conditioning stack resized to the working resolution.
template <class T>
struct SpadeNorm {
    ConvLayer<T> shared, to_gamma, to_beta;

    SpadeNorm() = default;
    SpadeNorm(int channels, int cond_channels, std::mt19937_64& rng, int hidden = 16) {
        shared = ConvLayer<T>(cond_channels, hidden, 3, 1, 1, rng);
        to_gamma = ConvLayer<T>(hidden, channels, 3, 1, 1, rng);
        to_beta = ConvLayer<T>(hidden, channels, 3, 1, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond) const {
        auto a = relu(shared.forward(cond));
        auto g = to_gamma.forward(a);
        auto b = to_beta.forward(a);
        return add(mul(detail::instance_normalize(x), add_scalar(g, T(1))), b);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        shared.collect(prefix + ".shared", out);
        to_gamma.collect(prefix + ".gamma", out);
        to_beta.collect(prefix + ".beta", out);
    }
};

// Conditional image decoder: 3 stride-2 down blocks, 3 nearest-upsample up
// blocks, every normalization conditioned on the pooled conditioning stack.
template <class T>
struct ReconDecoder {
    int n_max, f_r;
    ConvLayer<T> d1, d2, d3, u1, u2, u3, out_conv;
    SpadeNorm<T> s1, s2, s3, s4, s5, s6;

    ReconDecoder() = default;
    ReconDecoder(uint64_t seed, int n_max_, int f_r_, int base = 32)
        : n_max(n_max_), f_r(f_r_) {
        std::mt19937_64 rng(seed);
        const int cc = n_max + f_r + 3;  // conditioning channels
        d1 = ConvLayer<T>(cc, base, 3, 2, 1, rng);
        d2 = ConvLayer<T>(base, 2 * base, 3, 2, 1, rng);
        d3 = ConvLayer<T>(2 * base, 2 * base, 3, 2, 1, rng);
        u1 = ConvLayer<T>(2 * base, 2 * base, 3, 1, 1, rng);
        u2 = ConvLayer<T>(2 * base, base, 3, 1, 1, rng);
        u3 = ConvLayer<T>(base, base, 3, 1, 1, rng);
        out_conv = ConvLayer<T>(base, 3, 3, 1, 1, rng);
        s1 = SpadeNorm<T>(base, cc, rng);
        s2 = SpadeNorm<T>(2 * base, cc, rng);
        s3 = SpadeNorm<T>(2 * base, cc, rng);
        s4 = SpadeNorm<T>(2 * base, cc, rng);
        s5 = SpadeNorm<T>(base, cc, rng);
        s6 = SpadeNorm<T>(base, cc, rng);
    }

    // layout: zero-padded occupancy [1, n_max, H, W]; feature_layout
    // [1, f_r, H, W]; background [1, 3, H, W].  Returns [1, 3, H, W] in [0,1].
    Tensor<T> forward(const Tensor<T>& layout, const Tensor<T>& feature_layout,
                      const Tensor<T>& background) const {
        if (layout.dim(1) != n_max || feature_layout.dim(1) != f_r ||
            layout.dim(2) != background.dim(2) || layout.dim(3) != background.dim(3) ||
            feature_layout.dim(2) != background.dim(2))
            throw std::invalid_argument("reconstruct: conditioning shape mismatch");
        auto cond = concat_channels<T>({layout, feature_layout, background});
        auto cond2 = avg_pool2(cond);
        auto cond4 = avg_pool2(cond2);
        auto cond8 = avg_pool2(cond4);

        auto x = relu(s1.forward(d1.forward(cond), cond2));
        x = relu(s2.forward(d2.forward(x), cond4));
        x = relu(s3.forward(d3.forward(x), cond8));
        x = relu(s4.forward(u1.forward(upsample_nearest2(x)), cond4));
        x = relu(s5.forward(u2.forward(upsample_nearest2(x)), cond2));
        x = relu(s6.forward(u3.forward(upsample_nearest2(x)), cond));
        return sigmoid(out_conv.forward(x));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        d1.collect(prefix + ".d1", out);
        d2.collect(prefix + ".d2", out);
        d3.collect(prefix + ".d3", out);
        u1.collect(prefix + ".u1", out);
        u2.collect(prefix + ".u2", out);
        u3.collect(prefix + ".u3", out);
        out_conv.collect(prefix + ".out", out);
        s1.collect(prefix + ".s1", out);
        s2.collect(prefix + ".s2", out);
        s3.collect(prefix + ".s3", out);
        s4.collect(prefix + ".s4", out);
        s5.collect(prefix + ".s5", out);
        s6.collect(prefix + ".s6", out);
    }
};

struct CvsComponentToggles {
    bool visual = true, boxes = true, classes = true;
};

// Criteria head: bottlenecked node/edge features plus geometry and class
// evidence, a 2-layer graph net, mean pooling and a linear readout to the
// three criteria logits.  An empty graph falls back to a learned embedding.
template <class T>
struct CvsDecoder {
    int num_classes, f_n, f_e, hidden;
    LinearLayer<T> node_bottleneck, edge_bottleneck, node_in, edge_in, head;
    LgGnn<T> gnn;
    Tensor<T> empty_embedding;  // [1, hidden]
    CvsComponentToggles toggles;

    CvsDecoder() = default;
    CvsDecoder(uint64_t seed, int feat_dim, int num_classes_, int f_n_ = 64, int f_e_ = 64,
               int hidden_ = 64)
        : num_classes(num_classes_), f_n(f_n_), f_e(f_e_), hidden(hidden_) {
        std::mt19937_64 rng(seed);
        node_bottleneck = LinearLayer<T>(feat_dim, f_n, rng);
        edge_bottleneck = LinearLayer<T>(feat_dim, f_e, rng);
        node_in = LinearLayer<T>(f_n + 4 + num_classes, hidden, rng);
        edge_in = LinearLayer<T>(f_e + 4 + kNumRelationClasses, hidden, rng);
        head = LinearLayer<T>(hidden, 3, rng);
        gnn = LgGnn<T>(derive_seed(seed, "cvs-gnn"), hidden, hidden, 2, 2 * hidden);
        empty_embedding = Tensor<T>::zeros({1, hidden}, true);
        std::normal_distribution<T> g(T(0), T(0.1));
        for (auto& v : empty_embedding.val()) v = g(rng);
    }

    Tensor<T> forward(const LatentGraph<T>& g, double img_w, double img_h) const {
        if (!toggles.visual && !toggles.boxes && !toggles.classes)
            throw std::invalid_argument("cvs_decode: all input components disabled");
        if (g.empty()) return head.forward(empty_embedding);

        const int n = g.nodes.count();
        auto nb = node_bottleneck.forward(g.node_feats);
        if (!toggles.visual) nb = scale(nb, T(0));
        std::vector<T> ngeom(static_cast<size_t>(n) * (4 + num_classes), T(0));
        for (int i = 0; i < n; ++i) {
            T* row = ngeom.data() + static_cast<size_t>(i) * (4 + num_classes);
            if (toggles.boxes) {
                auto bd = box_descriptor(g.nodes.boxes[static_cast<size_t>(i)], img_w, img_h);
                for (int k = 0; k < 4; ++k) row[k] = static_cast<T>(bd[static_cast<size_t>(k)]);
            }
            if (toggles.classes)
                for (int k = 0; k < num_classes; ++k)
                    row[4 + k] = static_cast<T>(g.nodes.class_probs[static_cast<size_t>(i)][static_cast<size_t>(k)]);
        }
        auto node_x = node_in.forward(concat_cols<T>(
            {nb, Tensor<T>::from_data({n, 4 + num_classes}, std::move(ngeom))}));

        Tensor<T> edge_x;
        if (g.edges.count() > 0) {
            const int m = g.edges.count();
            auto eb = edge_bottleneck.forward(g.edge_feats);
            if (!toggles.visual) eb = scale(eb, T(0));
            std::vector<T> egeom(static_cast<size_t>(m) * 4, T(0));
            for (int e = 0; e < m; ++e)
                if (toggles.boxes) {
                    auto bd = box_descriptor(g.edges.boxes[static_cast<size_t>(e)], img_w, img_h);
                    for (int k = 0; k < 4; ++k)
                        egeom[static_cast<size_t>(e) * 4 + k] = static_cast<T>(bd[static_cast<size_t>(k)]);
                }
            auto eprobs = softmax_rows(g.edge_logits);
            if (!toggles.classes) eprobs = scale(eprobs, T(0));
            edge_x = edge_in.forward(concat_cols<T>(
                {eb, Tensor<T>::from_data({m, 4}, std::move(egeom)), eprobs}));
        }
        auto [hn, he] = gnn.forward(node_x, edge_x, g.edges.indices);
        // skip connection around the GNN: its per-graph normalization makes the
        // pooled GNN output mean-free, so the raw node encoding keeps
        // graph-level presence information in the pooled feature
        return head.forward(mean_dim0(add(hn, relu(node_x))));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        node_bottleneck.collect(prefix + ".node_bottleneck", out);
        edge_bottleneck.collect(prefix + ".edge_bottleneck", out);
        node_in.collect(prefix + ".node_in", out);
        edge_in.collect(prefix + ".edge_in", out);
        head.collect(prefix + ".head", out);
        gnn.collect(prefix + ".gnn", out);
        out.push_back({prefix + ".empty_embedding", empty_embedding});
    }
};

}  // namespace lgcvs
