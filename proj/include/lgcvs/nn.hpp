#pragma once

#include "lgcvs/conv.hpp"
#include "lgcvs/tensor.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

namespace lgcvs {

// Stable seed derivation: every module draws its init stream from the root
// seed and its own name, so adding a module never reshuffles the others.
inline uint64_t derive_seed(uint64_t root, const std::string& name) {
    uint64_t h = 1469598103934665603ull ^ root;
    for (char c : name) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
    }
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}

template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
struct LinearLayer {
    Tensor<T> w, b;

    LinearLayer() = default;
    LinearLayer(int in, int out, std::mt19937_64& rng, bool zero_init = false) {
        w = Tensor<T>::zeros({out, in}, true);
        b = Tensor<T>::zeros({out}, true);
        if (!zero_init) kaiming_init(w, rng, in);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w, b); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

template <class T>
struct ConvLayer {
    Tensor<T> w, b;
    int stride = 1, pad = 0, groups = 1;

    ConvLayer() = default;
    ConvLayer(int in, int out, int k, int stride_, int pad_, std::mt19937_64& rng, int groups_ = 1)
        : stride(stride_), pad(pad_), groups(groups_) {
        w = Tensor<T>::zeros({out, in / groups, k, k}, true);
        b = Tensor<T>::zeros({out}, true);
        kaiming_init(w, rng, (in / groups) * k * k);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad, groups); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

// Two-layer perceptron with ReLU. Final layer optionally zero-initialized.
template <class T>
struct Mlp {
    LinearLayer<T> fc1, fc2;

    Mlp() = default;
    Mlp(int in, int hidden, int out, std::mt19937_64& rng, bool zero_last = false)
        : fc1(in, hidden, rng), fc2(hidden, out, rng, zero_last) {}

    Tensor<T> forward(const Tensor<T>& x) const { return fc2.forward(relu(fc1.forward(x))); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
    }
};

// Per-graph feature normalization with a learnable mean scale:
// xhat = gamma * (x - alpha*mu) / sigma + beta, sigma floored for degenerate
// single-node graphs.
template <class T>
struct GraphNorm {
    Tensor<T> gamma, beta, alpha;
    T eps = T(1e-10);  // sigma floor 1e-5

    GraphNorm() = default;
    explicit GraphNorm(int dim) {
        gamma = Tensor<T>::from_data({1, dim}, std::vector<T>(dim, T(1)), true);
        beta = Tensor<T>::zeros({1, dim}, true);
        alpha = Tensor<T>::from_data({1, dim}, std::vector<T>(dim, T(1)), true);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto mu = mean_dim0(x);
        auto shifted = rowwise(x, mul(mu, alpha), BcastMode::Sub);
        auto var = mean_dim0(square(shifted));
        auto inv = reciprocal(sqrt_t(add_scalar(var, eps)));
        auto scaled = rowwise(shifted, mul(inv, gamma), BcastMode::Mul);
        return rowwise(scaled, beta, BcastMode::Add);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
        out.push_back({prefix + ".alpha", alpha});
    }
};

// Per-channel affine over NCHW.
template <class T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.size() != static_cast<size_t>(c) || beta.size() != static_cast<size_t>(c))
        throw std::invalid_argument("channel_affine: shape");
    auto out = detail::make_op<T>(x.shape(), {x.node(), gamma.node(), beta.node()});
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    const size_t plane = static_cast<size_t>(h) * w;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
            for (size_t k = 0; k < plane; ++k)
                on->val[off + k] = xn->val[off + k] * gn->val[ci] + bn->val[ci];
        }
    on->backfn = [xn, gn, bn, on = on.get(), n, c, plane] {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    for (size_t k = 0; k < plane; ++k)
                        xn->grad[off + k] += on->grad[off + k] * gn->val[ci];
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (size_t k = 0; k < plane; ++k)
                        gn->grad[ci] += on->grad[off + k] * xn->val[off + k];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (size_t k = 0; k < plane; ++k) bn->grad[ci] += on->grad[off + k];
                }
            }
    };
    return out;
}

// Instance normalization over NCHW (stats per sample per channel), then a
// learnable per-channel affine.
template <class T>
struct InstanceNorm {
    Tensor<T> gamma, beta;
    T eps = T(1e-5);

    InstanceNorm() = default;
    explicit InstanceNorm(int channels) {
        gamma = Tensor<T>::from_data({channels}, std::vector<T>(channels, T(1)), true);
        beta = Tensor<T>::zeros({channels}, true);
    }

    Tensor<T> normalize_only(const Tensor<T>& x) const {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        auto flat = reshape(x, {n * c, h * w});
        auto mu = mean_dim1(flat);
        auto centered = colwise(flat, mu, BcastMode::Sub);
        auto var = mean_dim1(square(centered));
        auto inv = reciprocal(sqrt_t(add_scalar(var, eps)));
        return reshape(colwise(centered, inv, BcastMode::Mul), {n, c, h, w});
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return channel_affine(normalize_only(x), gamma, beta);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// ---- optimizer ----

template <class T>
struct AdamW {
    struct State {
        std::vector<T> m, v;
    };
    std::vector<Tensor<T>> params;
    std::vector<State> states;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
    long step_count = 0;

    explicit AdamW(const ParamList<T>& plist, double lr_ = 1e-3, double wd = 0.0)
        : lr(lr_), weight_decay(wd) {
        for (auto& [name, p] : plist) {
            if (!p.requires_grad()) continue;
            params.push_back(p);
            states.push_back({std::vector<T>(p.size(), T(0)), std::vector<T>(p.size(), T(0))});
        }
    }

    void zero_grad() {
        for (auto& p : params) p.zero_grad();
    }

    void step() {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, step_count);
        const double bc2 = 1.0 - std::pow(beta2, step_count);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            auto& st = states[pi];
            auto& v = p.val();
            auto& g = p.grad();
            for (size_t i = 0; i < v.size(); ++i) {
                st.m[i] = static_cast<T>(beta1 * st.m[i] + (1 - beta1) * g[i]);
                st.v[i] = static_cast<T>(beta2 * st.v[i] + (1 - beta2) * g[i] * g[i]);
                const double mhat = st.m[i] / bc1, vhat = st.v[i] / bc2;
                v[i] -= static_cast<T>(lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * v[i]));
            }
        }
    }
};

// ---- checkpoint serialization ----
// Layout: magic "LGCK", u32 header length, header JSON (tensor names, shapes,
// offsets, plus an arbitrary config snapshot), then raw float32 data.

template <class T>
void save_params(const std::string& path, const ParamList<T>& plist,
                 const std::string& config_json = "{}") {
    std::string header = "{\"config\":" + config_json + ",\"tensors\":[";
    size_t offset = 0;
    for (size_t i = 0; i < plist.size(); ++i) {
        const auto& [name, p] = plist[i];
        header += (i ? ",{" : "{");
        header += "\"name\":\"" + name + "\",\"shape\":[";
        for (int d = 0; d < p.ndim(); ++d) header += (d ? "," : "") + std::to_string(p.dim(d));
        header += "],\"offset\":" + std::to_string(offset) + "}";
        offset += p.size() * sizeof(float);
    }
    header += "]}";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
    f.write("LGCK", 4);
    const uint32_t hlen = static_cast<uint32_t>(header.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(header.data(), hlen);
    for (auto& [name, p] : plist) {
        std::vector<float> buf(p.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.val()[i]);
        f.write(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
    }
}

// Loads values into an existing parameter list by name; returns the embedded
// config JSON string. Missing or shape-mismatched tensors are an error.
template <class T>
std::string load_params(const std::string& path, ParamList<T>& plist) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "LGCK", 4) != 0) throw std::runtime_error("bad checkpoint magic");
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string header(hlen, '\0');
    f.read(header.data(), hlen);
    const size_t data_start = 8 + hlen;

    // minimal scan of the header for name/offset pairs (header is machine-written)
    std::map<std::string, size_t> offsets;
    size_t pos = 0;
    while ((pos = header.find("\"name\":\"", pos)) != std::string::npos) {
        pos += 8;
        const size_t end = header.find('"', pos);
        const std::string name = header.substr(pos, end - pos);
        size_t op = header.find("\"offset\":", end) + 9;
        offsets[name] = std::stoull(header.substr(op));
        pos = end;
    }
    for (auto& [name, p] : plist) {
        auto it = offsets.find(name);
        if (it == offsets.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
        f.seekg(static_cast<std::streamoff>(data_start + it->second));
        std::vector<float> buf(p.size());
        f.read(reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float));
        if (!f) throw std::runtime_error("checkpoint truncated at tensor: " + name);
        for (size_t i = 0; i < buf.size(); ++i) p.val()[i] = static_cast<T>(buf[i]);
    }
    const size_t c0 = header.find("\"config\":") + 9;
    const size_t c1 = header.rfind(",\"tensors\":");
    return header.substr(c0, c1 - c0);
}

}  // namespace lgcvs
