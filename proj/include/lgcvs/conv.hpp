#pragma once

// Spatial ops over NCHW tensors: conv2d (im2col + Eigen), pooling,
// nearest-neighbour upsampling, channel concat and RoIAlign-style pooling.

#include "lgcvs/geometry.hpp"
#include "lgcvs/tensor.hpp"

namespace lgcvs {

namespace detail {

template <class T>
void im2col(const T* src, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, T* col) {
    // col is [c*kh*kw, ho*wo]
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col + (static_cast<size_t>(ci) * kh * kw + ky * kw + kx) *
                                   (static_cast<size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        *dst++ = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                     ? src[(static_cast<size_t>(ci) * h + iy) * w + ix]
                                     : T(0);
                    }
                }
            }
}

template <class T>
void col2im_accum(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                  int ho, int wo, T* dst) {
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = col + (static_cast<size_t>(ci) * kh * kw + ky * kw + kx) *
                                         (static_cast<size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            dst[(static_cast<size_t>(ci) * h + iy) * w + ix] += src[oy * wo + ox];
                    }
                }
            }
}

}  // namespace detail

// x [N, C, H, W], w [O, C/groups, kh, kw], b [O].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int pad = 0, int groups = 1) {
    if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: need 4D");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int o = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (c != cg * groups || o % groups != 0 || b.size() != static_cast<size_t>(o))
        throw std::invalid_argument("conv2d: channel mismatch");
    const int og = o / groups;
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    auto out = detail::make_op<T>({n, o, ho, wo}, {x.node(), w.node(), b.node()});
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();

    const size_t colsz = static_cast<size_t>(cg) * kh * kw * ho * wo;
    std::vector<T> col(colsz);
    const size_t xplane = static_cast<size_t>(c) * h * wd;
    const size_t oplane = static_cast<size_t>(o) * ho * wo;
    for (int ni = 0; ni < n; ++ni)
        for (int g = 0; g < groups; ++g) {
            detail::im2col(xn->val.data() + ni * xplane + static_cast<size_t>(g) * cg * h * wd, cg,
                           h, wd, kh, kw, stride, pad, ho, wo, col.data());
            detail::ECMap<T> W(wn->val.data() + static_cast<size_t>(g) * og * cg * kh * kw, og,
                               cg * kh * kw);
            detail::ECMap<T> Cm(col.data(), cg * kh * kw, ho * wo);
            detail::EMap<T> O(on->val.data() + ni * oplane + static_cast<size_t>(g) * og * ho * wo,
                              og, ho * wo);
            O.noalias() = W * Cm;
        }
    for (int ni = 0; ni < n; ++ni)
        for (int oi = 0; oi < o; ++oi) {
            T* dst = on->val.data() + ni * oplane + static_cast<size_t>(oi) * ho * wo;
            const T bias = bn->val[oi];
            for (int k = 0; k < ho * wo; ++k) dst[k] += bias;
        }

    on->backfn = [=, on = on.get()] {
        std::vector<T> col(colsz), dcol(colsz);
        for (int ni = 0; ni < n; ++ni)
            for (int g = 0; g < groups; ++g) {
                detail::ECMap<T> W(wn->val.data() + static_cast<size_t>(g) * og * cg * kh * kw, og,
                                   cg * kh * kw);
                detail::ECMap<T> G(on->grad.data() + ni * oplane + static_cast<size_t>(g) * og * ho * wo,
                                   og, ho * wo);
                if (wn->requires_grad || xn->requires_grad)
                    detail::im2col(xn->val.data() + ni * xplane + static_cast<size_t>(g) * cg * h * wd,
                                   cg, h, wd, kh, kw, stride, pad, ho, wo, col.data());
                if (wn->requires_grad) {
                    wn->ensure_grad();
                    detail::EMap<T> GW(wn->grad.data() + static_cast<size_t>(g) * og * cg * kh * kw,
                                       og, cg * kh * kw);
                    detail::ECMap<T> Cm(col.data(), cg * kh * kw, ho * wo);
                    GW.noalias() += G * Cm.transpose();
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    detail::EMap<T> DC(dcol.data(), cg * kh * kw, ho * wo);
                    DC.noalias() = W.transpose() * G;
                    detail::col2im_accum(dcol.data(), cg, h, wd, kh, kw, stride, pad, ho, wo,
                                         xn->grad.data() + ni * xplane +
                                             static_cast<size_t>(g) * cg * h * wd);
                }
            }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int ni = 0; ni < n; ++ni)
                for (int oi = 0; oi < o; ++oi) {
                    const T* g = on->grad.data() + ni * oplane + static_cast<size_t>(oi) * ho * wo;
                    T s = 0;
                    for (int k = 0; k < ho * wo; ++k) s += g[k];
                    bn->grad[oi] += s;
                }
        }
    };
    return out;
}

// 2x2 average pooling, stride 2. Odd trailing rows/cols are dropped.
template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("avg_pool2: need 4D");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h / 2, wo = w / 2;
    auto out = detail::make_op<T>({n, c, ho, wo}, {x.node()});
    auto xn = x.node(), on = out.node();
    for (int p = 0; p < n * c; ++p) {
        const T* src = xn->val.data() + static_cast<size_t>(p) * h * w;
        T* dst = on->val.data() + static_cast<size_t>(p) * ho * wo;
        for (int y = 0; y < ho; ++y)
            for (int x2 = 0; x2 < wo; ++x2)
                dst[y * wo + x2] = (src[(2 * y) * w + 2 * x2] + src[(2 * y) * w + 2 * x2 + 1] +
                                    src[(2 * y + 1) * w + 2 * x2] + src[(2 * y + 1) * w + 2 * x2 + 1]) *
                                   T(0.25);
    }
    on->backfn = [xn, on = on.get(), n, c, h, w, ho, wo] {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int p = 0; p < n * c; ++p) {
            T* dst = xn->grad.data() + static_cast<size_t>(p) * h * w;
            const T* g = on->grad.data() + static_cast<size_t>(p) * ho * wo;
            for (int y = 0; y < ho; ++y)
                for (int x2 = 0; x2 < wo; ++x2) {
                    const T gv = g[y * wo + x2] * T(0.25);
                    dst[(2 * y) * w + 2 * x2] += gv;
                    dst[(2 * y) * w + 2 * x2 + 1] += gv;
                    dst[(2 * y + 1) * w + 2 * x2] += gv;
                    dst[(2 * y + 1) * w + 2 * x2 + 1] += gv;
                }
        }
    };
    return out;
}

template <class T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2: need 4D");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h * 2, wo = w * 2;
    auto out = detail::make_op<T>({n, c, ho, wo}, {x.node()});
    auto xn = x.node(), on = out.node();
    for (int p = 0; p < n * c; ++p) {
        const T* src = xn->val.data() + static_cast<size_t>(p) * h * w;
        T* dst = on->val.data() + static_cast<size_t>(p) * ho * wo;
        for (int y = 0; y < ho; ++y)
            for (int x2 = 0; x2 < wo; ++x2) dst[y * wo + x2] = src[(y / 2) * w + x2 / 2];
    }
    on->backfn = [xn, on = on.get(), n, c, h, w, ho, wo] {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int p = 0; p < n * c; ++p) {
            T* dst = xn->grad.data() + static_cast<size_t>(p) * h * w;
            const T* g = on->grad.data() + static_cast<size_t>(p) * ho * wo;
            for (int y = 0; y < ho; ++y)
                for (int x2 = 0; x2 < wo; ++x2) dst[(y / 2) * w + x2 / 2] += g[y * wo + x2];
        }
    };
    return out;
}

// Concatenate 4D tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty");
    const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int c = 0;
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (auto& p : parts) {
        if (p.ndim() != 4 || p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
            throw std::invalid_argument("concat_channels: shape");
        c += p.dim(1);
        nodes.push_back(p.node());
    }
    auto out = detail::make_op<T>({n, c, h, w}, nodes);
    auto on = out.node();
    const size_t plane = static_cast<size_t>(h) * w;
    for (int ni = 0; ni < n; ++ni) {
        size_t off = static_cast<size_t>(ni) * c * plane;
        for (auto& pn : nodes) {
            const size_t pc = pn->size() / (static_cast<size_t>(n) * plane);
            std::copy(pn->val.begin() + ni * pc * plane, pn->val.begin() + (ni + 1) * pc * plane,
                      on->val.begin() + off);
            off += pc * plane;
        }
    }
    on->backfn = [nodes, on = on.get(), n, c, plane] {
        for (int ni = 0; ni < n; ++ni) {
            size_t off = static_cast<size_t>(ni) * c * plane;
            for (auto& pn : nodes) {
                const size_t pc = pn->size() / (static_cast<size_t>(n) * plane);
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (size_t i = 0; i < pc * plane; ++i)
                        pn->grad[ni * pc * plane + i] += on->grad[off + i];
                }
                off += pc * plane;
            }
        }
    };
    return out;
}

// Select one sample from a batch, keeping the batch axis: [N,C,H,W] -> [1,C,H,W].
template <class T>
Tensor<T> slice_batch(const Tensor<T>& x, int i) {
    if (x.ndim() != 4 || i < 0 || i >= x.dim(0)) throw std::invalid_argument("slice_batch");
    const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t plane = static_cast<size_t>(c) * h * w;
    auto out = detail::make_op<T>({1, c, h, w}, {x.node()});
    auto xn = x.node(), on = out.node();
    std::copy(xn->val.begin() + i * plane, xn->val.begin() + (i + 1) * plane, on->val.begin());
    on->backfn = [xn, on = on.get(), i, plane] {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t k = 0; k < plane; ++k) xn->grad[i * plane + k] += on->grad[k];
    };
    return out;
}

// RoIAlign-style pooling: bilinearly sample the feature map at grid x grid
// points inside `box` (image coordinates, divided by `stride`), average to a
// [1, C] vector. A zero-area box samples the box center point.
template <class T>
Tensor<T> roialign_pool(const Tensor<T>& fm, const Box& box, double stride, int grid) {
    if (fm.ndim() != 4 || fm.dim(0) != 1) throw std::invalid_argument("roialign_pool: need [1,C,H,W]");
    const int c = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
    const double bx1 = box.x1 / stride, by1 = box.y1 / stride;
    const double bw = std::max(box.width() / stride, 0.0);
    const double bh = std::max(box.height() / stride, 0.0);
    const int g = (bw > 0 && bh > 0) ? grid : 1;

    struct Sample {
        int x0, y0;
        T wx, wy;
    };
    std::vector<Sample> samples;
    samples.reserve(static_cast<size_t>(g) * g);
    for (int sy = 0; sy < g; ++sy)
        for (int sx = 0; sx < g; ++sx) {
            // -0.5 aligns continuous coordinates with pixel centers
            double px = bx1 + (g > 1 || bw > 0 ? (sx + 0.5) * bw / g : 0.5 * bw) - 0.5;
            double py = by1 + (g > 1 || bh > 0 ? (sy + 0.5) * bh / g : 0.5 * bh) - 0.5;
            px = std::clamp(px, 0.0, static_cast<double>(w - 1));
            py = std::clamp(py, 0.0, static_cast<double>(h - 1));
            const int x0 = std::min(static_cast<int>(px), w - 2 >= 0 ? w - 2 : 0);
            const int y0 = std::min(static_cast<int>(py), h - 2 >= 0 ? h - 2 : 0);
            samples.push_back({x0, y0, static_cast<T>(px - x0), static_cast<T>(py - y0)});
        }
    const T inv = T(1) / static_cast<T>(samples.size());

    auto out = detail::make_op<T>({1, c}, {fm.node()});
    auto fn = fm.node(), on = out.node();
    for (int ci = 0; ci < c; ++ci) {
        const T* plane = fn->val.data() + static_cast<size_t>(ci) * h * w;
        T acc = 0;
        for (const auto& s : samples) {
            const int x1i = std::min(s.x0 + 1, w - 1), y1i = std::min(s.y0 + 1, h - 1);
            const T v00 = plane[s.y0 * w + s.x0], v01 = plane[s.y0 * w + x1i];
            const T v10 = plane[y1i * w + s.x0], v11 = plane[y1i * w + x1i];
            acc += (T(1) - s.wy) * ((T(1) - s.wx) * v00 + s.wx * v01) +
                   s.wy * ((T(1) - s.wx) * v10 + s.wx * v11);
        }
        on->val[ci] = acc * inv;
    }
    on->backfn = [fn, on = on.get(), samples, inv, c, h, w] {
        if (!fn->requires_grad) return;
        fn->ensure_grad();
        for (int ci = 0; ci < c; ++ci) {
            T* plane = fn->grad.data() + static_cast<size_t>(ci) * h * w;
            const T g = on->grad[ci] * inv;
            for (const auto& s : samples) {
                const int x1i = std::min(s.x0 + 1, w - 1), y1i = std::min(s.y0 + 1, h - 1);
                plane[s.y0 * w + s.x0] += g * (T(1) - s.wy) * (T(1) - s.wx);
                plane[s.y0 * w + x1i] += g * (T(1) - s.wy) * s.wx;
                plane[y1i * w + s.x0] += g * s.wy * (T(1) - s.wx);
                plane[y1i * w + x1i] += g * s.wy * s.wx;
            }
        }
    };
    return out;
}

}  // namespace lgcvs
