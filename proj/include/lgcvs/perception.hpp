#pragma once

// Visual front-end: small trainable conv backbone, RoIAlign-style region
// pooling, and an oracle detector with a configurable corruption model.

#include "lgcvs/conv.hpp"
#include "lgcvs/image.hpp"
#include "lgcvs/nn.hpp"
#include "lgcvs/scenegen.hpp"

#include <optional>

namespace lgcvs {

template <class T>
struct FeatureMap {
    Tensor<T> grid;  // [1, F, H', W']
    int stride = 8;
    int image_width = 0, image_height = 0;
};

struct Detection {
    Box box;
    std::vector<double> class_probs;  // length C, sums to 1
    std::optional<BinaryMask> mask;
    double score = 1.0;
};

struct DetectionSet {
    std::vector<Detection> items;
    int count() const { return static_cast<int>(items.size()); }
};

struct CorruptionConfig {
    double p_drop = 0.0;
    double jitter = 0.0;
    double p_confuse = 0.0;
    double p_spurious = 0.0;
};

template <class T>
Tensor<T> image_to_tensor(const Image& img) {
    std::vector<T> v(static_cast<size_t>(3) * img.height * img.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                v[(static_cast<size_t>(c) * img.height + y) * img.width + x] =
                    static_cast<T>(img.at(x, y, c));
    return Tensor<T>::from_data({1, 3, img.height, img.width}, std::move(v));
}

template <class T>
Tensor<T> images_to_batch(const std::vector<const Image*>& imgs) {
    std::vector<Tensor<T>> parts;
    std::vector<T> all;
    const int h = imgs[0]->height, w = imgs[0]->width;
    all.reserve(imgs.size() * 3 * h * w);
    for (const Image* img : imgs) {
        auto t = image_to_tensor<T>(*img);
        all.insert(all.end(), t.val().begin(), t.val().end());
    }
    return Tensor<T>::from_data({static_cast<int>(imgs.size()), 3, h, w}, std::move(all));
}

// 4 conv blocks (3 stride-2 then 1 stride-1): total stride 8, output F channels.
template <class T>
struct Backbone {
    ConvLayer<T> c1, c2, c3, c4;
    InstanceNorm<T> n1, n2, n3, n4;
    int feat_dim;

    Backbone() = default;
    Backbone(uint64_t seed, int f = 64) : feat_dim(f) {
        std::mt19937_64 rng(seed);
        c1 = ConvLayer<T>(3, 16, 3, 2, 1, rng);
        c2 = ConvLayer<T>(16, 32, 3, 2, 1, rng);
        c3 = ConvLayer<T>(32, f, 3, 2, 1, rng);
        c4 = ConvLayer<T>(f, f, 3, 1, 1, rng);
        n1 = InstanceNorm<T>(16);
        n2 = InstanceNorm<T>(32);
        n3 = InstanceNorm<T>(f);
        n4 = InstanceNorm<T>(f);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto h1 = relu(n1.forward(c1.forward(x)));
        auto h2 = relu(n2.forward(c2.forward(h1)));
        auto h3 = relu(n3.forward(c3.forward(h2)));
        return relu(n4.forward(c4.forward(h3)));
    }

    // Activations at two depths, for the perceptual loss.
    std::pair<Tensor<T>, Tensor<T>> forward_features(const Tensor<T>& x) const {
        auto h1 = relu(n1.forward(c1.forward(x)));
        auto h2 = relu(n2.forward(c2.forward(h1)));
        return {h1, h2};
    }

    FeatureMap<T> feature_map(const Tensor<T>& image_batch, int sample) const {
        auto fm = forward(image_batch);
        return FeatureMap<T>{slice_batch(fm, sample), 8, image_batch.dim(3), image_batch.dim(2)};
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        c1.collect(prefix + ".c1", out);
        c2.collect(prefix + ".c2", out);
        c3.collect(prefix + ".c3", out);
        c4.collect(prefix + ".c4", out);
        n1.collect(prefix + ".n1", out);
        n2.collect(prefix + ".n2", out);
        n3.collect(prefix + ".n3", out);
        n4.collect(prefix + ".n4", out);
    }

    void set_requires_grad(bool b) {
        ParamList<T> plist;
        collect("bb", plist);
        for (auto& [name, p] : plist) p.set_requires_grad(b);
    }
};

// Average of bilinear samples on a grid x grid lattice inside the box.
// The box is clipped to the image before sampling.
template <class T>
Tensor<T> pool_region(const FeatureMap<T>& fm, const Box& box, int grid = 7) {
    const Box clipped = box.clipped(fm.image_width, fm.image_height);
    return roialign_pool(fm.grid, clipped, static_cast<double>(fm.stride), grid);
}

// Ground-truth-derived detector with drop / jitter / class-confusion /
// spurious-injection corruption. Deterministic given (record, config, seed).
inline DetectionSet oracle_detect(const SceneRecord& record, const CorruptionConfig& cfg,
                                  uint64_t seed, int max_detections = 16, int num_classes = 7) {
    std::mt19937_64 rng(derive_seed(seed, "oracle-detector"));
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    const double W = record.image.width, H = record.image.height;

    DetectionSet det;
    for (const auto& obj : record.objects) {
        if (uni(0, 1) < cfg.p_drop) continue;
        Detection d;
        Box b = obj.box;
        if (cfg.jitter > 0) {
            const double jw = cfg.jitter * b.width(), jh = cfg.jitter * b.height();
            b.x1 += uni(-jw, jw);
            b.x2 += uni(-jw, jw);
            b.y1 += uni(-jh, jh);
            b.y2 += uni(-jh, jh);
            if (b.x1 > b.x2) std::swap(b.x1, b.x2);
            if (b.y1 > b.y2) std::swap(b.y1, b.y2);
            b = b.clipped(W, H);
        }
        d.box = b;
        int cls = obj.class_id;
        if (uni(0, 1) < cfg.p_confuse) {
            // swap to a random other foreground class
            cls = 1 + static_cast<int>(uni(0, 1) * (num_classes - 1));
            if (cls >= num_classes) cls = num_classes - 1;
            if (cls == obj.class_id) cls = 1 + cls % (num_classes - 1);
        }
        // smoothed one-hot; the reported class always keeps the max
        const double smooth = 0.5 * cfg.p_confuse;
        d.class_probs.assign(static_cast<size_t>(num_classes), smooth / num_classes);
        d.class_probs[static_cast<size_t>(cls)] += 1.0 - smooth;
        d.mask = obj.mask;
        d.score = 1.0 - 0.1 * uni(0, 1);
        det.items.push_back(std::move(d));
    }
    if (uni(0, 1) < cfg.p_spurious) {
        Detection d;
        const double x = uni(0, W * 0.8), y = uni(0, H * 0.8);
        d.box = Box(x, y, x + uni(4, W * 0.2), y + uni(4, H * 0.2)).clipped(W, H);
        const int cls = 1 + static_cast<int>(uni(0, 1) * (num_classes - 1));
        const double smooth = 0.5 * cfg.p_confuse;
        d.class_probs.assign(static_cast<size_t>(num_classes), smooth / num_classes);
        d.class_probs[static_cast<size_t>(std::min(cls, num_classes - 1))] += 1.0 - smooth;
        d.score = 0.5 + 0.3 * uni(0, 1);
        det.items.push_back(std::move(d));
    }
    if (det.count() > max_detections) {
        std::stable_sort(det.items.begin(), det.items.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        det.items.resize(static_cast<size_t>(max_detections));
    }
    return det;
}

}  // namespace lgcvs
