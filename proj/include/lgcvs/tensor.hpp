#pragma once

// Minimal reverse-mode autodiff over dense row-major tensors, templated on
// the scalar type so the same graph code runs in float for training and in
// double for finite-difference checks.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace lgcvs {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

template <class T>
struct TensorNode {
    std::vector<T> val;
    std::vector<T> grad;
    Shape shape;
    bool requires_grad = false;
    std::function<void()> backfn;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;

    size_t size() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    }
};

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = shape;
        n->val.assign(shape_numel(shape), T(0));
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false) {
        if (data.size() != shape_numel(shape)) throw std::invalid_argument("shape/data mismatch");
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = shape;
        n->val = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t size() const { return node_->size(); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    std::vector<T>& val() { return node_->val; }
    const std::vector<T>& val() const { return node_->val; }
    std::vector<T>& grad() { node_->ensure_grad(); return node_->grad; }
    T item() const { return node_->val.at(0); }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

    // Reverse-mode sweep from this (scalar) tensor.
    void backward() const {
        if (size() != 1) throw std::logic_error("backward() requires a scalar");
        std::vector<TensorNode<T>*> order;
        std::unordered_set<TensorNode<T>*> seen;
        std::function<void(TensorNode<T>*)> visit = [&](TensorNode<T>* n) {
            if (seen.count(n)) return;
            seen.insert(n);
            for (auto& p : n->parents) visit(p.get());
            order.push_back(n);
        };
        visit(node_.get());
        for (auto* n : order) n->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backfn) (*it)->backfn();
    }

    void zero_grad() { node_->grad.assign(node_->val.size(), T(0)); }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <class T>
Tensor<T> make_op(const Shape& shape, std::vector<std::shared_ptr<TensorNode<T>>> parents) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = shape;
    n->val.assign(shape_numel(shape), T(0));
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    return Tensor<T>(n);
}

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

// ---- elementwise binary ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()});
    auto an = a.node(), bn = b.node(), on = out.node();
    for (size_t i = 0; i < on->size(); ++i) on->val[i] = an->val[i] + bn->val[i];
    on->backfn = [an, bn, on = on.get()] {
        if (an->requires_grad) { an->ensure_grad(); for (size_t i = 0; i < on->size(); ++i) an->grad[i] += on->grad[i]; }
        if (bn->requires_grad) { bn->ensure_grad(); for (size_t i = 0; i < on->size(); ++i) bn->grad[i] += on->grad[i]; }
    };
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()});
    auto an = a.node(), bn = b.node(), on = out.node();
    for (size_t i = 0; i < on->size(); ++i) on->val[i] = an->val[i] - bn->val[i];
    on->backfn = [an, bn, on = on.get()] {
        if (an->requires_grad) { an->ensure_grad(); for (size_t i = 0; i < on->size(); ++i) an->grad[i] += on->grad[i]; }
        if (bn->requires_grad) { bn->ensure_grad(); for (size_t i = 0; i < on->size(); ++i) bn->grad[i] -= on->grad[i]; }
    };
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()});
    auto an = a.node(), bn = b.node(), on = out.node();
    for (size_t i = 0; i < on->size(); ++i) on->val[i] = an->val[i] * bn->val[i];
    on->backfn = [an, bn, on = on.get()] {
        if (an->requires_grad) { an->ensure_grad(); for (size_t i = 0; i < on->size(); ++i) an->grad[i] += on->grad[i] * bn->val[i]; }
        if (bn->requires_grad) { bn->ensure_grad(); for (size_t i = 0; i < on->size(); ++i) bn->grad[i] += on->grad[i] * an->val[i]; }
    };
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    auto out = detail::make_op<T>(a.shape(), {a.node()});
    auto an = a.node(), on = out.node();
    for (size_t i = 0; i < on->size(); ++i) on->val[i] = an->val[i] * s;
    on->backfn = [an, on = on.get(), s] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < on->size(); ++i) an->grad[i] += on->grad[i] * s;
    };
    return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    auto out = detail::make_op<T>(a.shape(), {a.node()});
    auto an = a.node(), on = out.node();
    for (size_t i = 0; i < on->size(); ++i) on->val[i] = an->val[i] + s;
    on->backfn = [an, on = on.get()] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < on->size(); ++i) an->grad[i] += on->grad[i];
    };
    return out;
}

// ---- elementwise unary ----

template <class T, class F, class DF>
Tensor<T> unary_op(const Tensor<T>& a, F f, DF df) {
    auto out = detail::make_op<T>(a.shape(), {a.node()});
    auto an = a.node(), on = out.node();
    for (size_t i = 0; i < on->size(); ++i) on->val[i] = f(an->val[i]);
    on->backfn = [an, on = on.get(), df] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < on->size(); ++i) an->grad[i] += on->grad[i] * df(an->val[i], on->val[i]);
    };
    return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return x > 0 ? x : T(0); },
                    [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.1)) {
    return unary_op(a, [slope](T x) { return x > 0 ? x : slope * x; },
                    [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op(a,
                    [](T x) { return x >= 0 ? T(1) / (T(1) + std::exp(-x))
                                            : std::exp(x) / (T(1) + std::exp(x)); },
                    [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh_t(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::tanh(x); },
                    [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> exp_t(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log_t(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> sqrt_t(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::sqrt(x); },
                    [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Tensor<T> abs_t(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::abs(x); },
                    [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

// Numerically stable log(1 + exp(x)).
template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary_op(a,
                    [](T x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
                    [](T x, T) { return x >= 0 ? T(1) / (T(1) + std::exp(-x))
                                               : std::exp(x) / (T(1) + std::exp(x)); });
}

template <class T>
Tensor<T> reciprocal(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return T(1) / x; }, [](T x, T) { return -T(1) / (x * x); });
}

// ---- reductions ----

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    auto out = detail::make_op<T>({1}, {a.node()});
    auto an = a.node(), on = out.node();
    T s = 0;
    for (T v : an->val) s += v;
    on->val[0] = s;
    on->backfn = [an, on = on.get()] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < an->size(); ++i) an->grad[i] += on->grad[0];
    };
    return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// Mean over rows of an [M, N] matrix, yielding [1, N].
template <class T>
Tensor<T> mean_dim0(const Tensor<T>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("mean_dim0: need 2D");
    const int m = a.dim(0), n = a.dim(1);
    auto out = detail::make_op<T>({1, n}, {a.node()});
    auto an = a.node(), on = out.node();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) on->val[j] += an->val[static_cast<size_t>(i) * n + j];
    for (int j = 0; j < n; ++j) on->val[j] /= static_cast<T>(m);
    on->backfn = [an, on = on.get(), m, n] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                an->grad[static_cast<size_t>(i) * n + j] += on->grad[j] / static_cast<T>(m);
    };
    return out;
}

// Mean over columns of an [M, N] matrix, yielding [M, 1].
template <class T>
Tensor<T> mean_dim1(const Tensor<T>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("mean_dim1: need 2D");
    const int m = a.dim(0), n = a.dim(1);
    auto out = detail::make_op<T>({m, 1}, {a.node()});
    auto an = a.node(), on = out.node();
    for (int i = 0; i < m; ++i) {
        T s = 0;
        for (int j = 0; j < n; ++j) s += an->val[static_cast<size_t>(i) * n + j];
        on->val[i] = s / static_cast<T>(n);
    }
    on->backfn = [an, on = on.get(), m, n] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                an->grad[static_cast<size_t>(i) * n + j] += on->grad[i] / static_cast<T>(n);
    };
    return out;
}

// ---- broadcast: b is [1, N] applied across the rows of a [M, N] ----

enum class BcastMode { Add, Sub, Mul };

template <class T>
Tensor<T> rowwise(const Tensor<T>& a, const Tensor<T>& b, BcastMode mode) {
    if (a.ndim() != 2 || b.size() != static_cast<size_t>(a.dim(1)))
        throw std::invalid_argument("rowwise: shape mismatch");
    const int m = a.dim(0), n = a.dim(1);
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()});
    auto an = a.node(), bn = b.node(), on = out.node();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const size_t k = static_cast<size_t>(i) * n + j;
            switch (mode) {
                case BcastMode::Add: on->val[k] = an->val[k] + bn->val[j]; break;
                case BcastMode::Sub: on->val[k] = an->val[k] - bn->val[j]; break;
                case BcastMode::Mul: on->val[k] = an->val[k] * bn->val[j]; break;
            }
        }
    on->backfn = [an, bn, on = on.get(), m, n, mode] {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const size_t k = static_cast<size_t>(i) * n + j;
                const T g = on->grad[k];
                if (an->requires_grad) {
                    an->ensure_grad();
                    an->grad[k] += mode == BcastMode::Mul ? g * bn->val[j] : g;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    switch (mode) {
                        case BcastMode::Add: bn->grad[j] += g; break;
                        case BcastMode::Sub: bn->grad[j] -= g; break;
                        case BcastMode::Mul: bn->grad[j] += g * an->val[k]; break;
                    }
                }
            }
    };
    return out;
}

// b is [M, 1] (or [M]) applied across the columns of a [M, N].
template <class T>
Tensor<T> colwise(const Tensor<T>& a, const Tensor<T>& b, BcastMode mode) {
    if (a.ndim() != 2 || b.size() != static_cast<size_t>(a.dim(0)))
        throw std::invalid_argument("colwise: shape mismatch");
    const int m = a.dim(0), n = a.dim(1);
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()});
    auto an = a.node(), bn = b.node(), on = out.node();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const size_t k = static_cast<size_t>(i) * n + j;
            switch (mode) {
                case BcastMode::Add: on->val[k] = an->val[k] + bn->val[i]; break;
                case BcastMode::Sub: on->val[k] = an->val[k] - bn->val[i]; break;
                case BcastMode::Mul: on->val[k] = an->val[k] * bn->val[i]; break;
            }
        }
    on->backfn = [an, bn, on = on.get(), m, n, mode] {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const size_t k = static_cast<size_t>(i) * n + j;
                const T g = on->grad[k];
                if (an->requires_grad) {
                    an->ensure_grad();
                    an->grad[k] += mode == BcastMode::Mul ? g * bn->val[i] : g;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    switch (mode) {
                        case BcastMode::Add: bn->grad[i] += g; break;
                        case BcastMode::Sub: bn->grad[i] -= g; break;
                        case BcastMode::Mul: bn->grad[i] += g * an->val[k]; break;
                    }
                }
            }
    };
    return out;
}

// ---- matmul / linear ----

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: shape mismatch");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = detail::make_op<T>({m, n}, {a.node(), b.node()});
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::ECMap<T> A(an->val.data(), m, k), B(bn->val.data(), k, n);
    detail::EMap<T> O(on->val.data(), m, n);
    O.noalias() = A * B;
    on->backfn = [an, bn, on = on.get(), m, k, n] {
        detail::ECMap<T> A(an->val.data(), m, k), B(bn->val.data(), k, n),
            G(on->grad.data(), m, n);
        if (an->requires_grad) {
            an->ensure_grad();
            detail::EMap<T> GA(an->grad.data(), m, k);
            GA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            detail::EMap<T> GB(bn->grad.data(), k, n);
            GB.noalias() += A.transpose() * G;
        }
    };
    return out;
}

// y = x W^T + b with x [M, in], W [out, in], b [out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1) ||
        b.size() != static_cast<size_t>(w.dim(0)))
        throw std::invalid_argument("linear: shape mismatch");
    const int m = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    auto out = detail::make_op<T>({m, out_dim}, {x.node(), w.node(), b.node()});
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    detail::ECMap<T> X(xn->val.data(), m, in), W(wn->val.data(), out_dim, in);
    detail::EMap<T> O(on->val.data(), m, out_dim);
    O.noalias() = X * W.transpose();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < out_dim; ++j) on->val[static_cast<size_t>(i) * out_dim + j] += bn->val[j];
    on->backfn = [xn, wn, bn, on = on.get(), m, in, out_dim] {
        detail::ECMap<T> X(xn->val.data(), m, in), W(wn->val.data(), out_dim, in),
            G(on->grad.data(), m, out_dim);
        if (xn->requires_grad) {
            xn->ensure_grad();
            detail::EMap<T> GX(xn->grad.data(), m, in);
            GX.noalias() += G * W;
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            detail::EMap<T> GW(wn->grad.data(), out_dim, in);
            GW.noalias() += G.transpose() * X;
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < out_dim; ++j)
                    bn->grad[j] += on->grad[static_cast<size_t>(i) * out_dim + j];
        }
    };
    return out;
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
    if (shape_numel(shape) != a.size()) throw std::invalid_argument("reshape: numel mismatch");
    auto out = detail::make_op<T>(shape, {a.node()});
    auto an = a.node(), on = out.node();
    on->val = an->val;
    on->backfn = [an, on = on.get()] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < on->size(); ++i) an->grad[i] += on->grad[i];
    };
    return out;
}

// Concatenate 2D tensors along columns (all must share dim 0).
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int m = parts[0].dim(0);
    int n = 0;
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != m) throw std::invalid_argument("concat_cols: shape");
        n += p.dim(1);
        nodes.push_back(p.node());
    }
    auto out = detail::make_op<T>({m, n}, nodes);
    auto on = out.node();
    int off = 0;
    for (auto& pn : nodes) {
        const int pw = static_cast<int>(pn->size()) / m;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pw; ++j)
                on->val[static_cast<size_t>(i) * n + off + j] = pn->val[static_cast<size_t>(i) * pw + j];
        off += pw;
    }
    on->backfn = [nodes, on = on.get(), m, n] {
        int off = 0;
        for (auto& pn : nodes) {
            const int pw = static_cast<int>(pn->size()) / m;
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pw; ++j)
                        pn->grad[static_cast<size_t>(i) * pw + j] +=
                            on->grad[static_cast<size_t>(i) * n + off + j];
            }
            off += pw;
        }
    };
    return out;
}

// Stack 2D tensors along rows (all must share dim 1).
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const int n = parts[0].dim(1);
    int m = 0;
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (auto& p : parts) {
        if (p.ndim() != 2 || p.dim(1) != n) throw std::invalid_argument("concat_rows: shape");
        m += p.dim(0);
        nodes.push_back(p.node());
    }
    auto out = detail::make_op<T>({m, n}, nodes);
    auto on = out.node();
    size_t off = 0;
    for (auto& pn : nodes) {
        std::copy(pn->val.begin(), pn->val.end(), on->val.begin() + off);
        off += pn->size();
    }
    on->backfn = [nodes, on = on.get()] {
        size_t off = 0;
        for (auto& pn : nodes) {
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (size_t i = 0; i < pn->size(); ++i) pn->grad[i] += on->grad[off + i];
            }
            off += pn->size();
        }
    };
    return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
    if (a.ndim() != 2 || c0 < 0 || c1 > a.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    const int m = a.dim(0), n = a.dim(1), w = c1 - c0;
    auto out = detail::make_op<T>({m, w}, {a.node()});
    auto an = a.node(), on = out.node();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            on->val[static_cast<size_t>(i) * w + j] = an->val[static_cast<size_t>(i) * n + c0 + j];
    on->backfn = [an, on = on.get(), m, n, w, c0] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                an->grad[static_cast<size_t>(i) * n + c0 + j] += on->grad[static_cast<size_t>(i) * w + j];
    };
    return out;
}

// Gather rows of a [M, N] matrix by index, yielding [K, N]. Indices may repeat.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& idx) {
    if (a.ndim() != 2) throw std::invalid_argument("gather_rows: need 2D");
    const int n = a.dim(1), k = static_cast<int>(idx.size());
    auto out = detail::make_op<T>({k, n}, {a.node()});
    auto an = a.node(), on = out.node();
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j)
            on->val[static_cast<size_t>(i) * n + j] = an->val[static_cast<size_t>(idx[i]) * n + j];
    on->backfn = [an, on = on.get(), idx, n, k] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < n; ++j)
                an->grad[static_cast<size_t>(idx[i]) * n + j] += on->grad[static_cast<size_t>(i) * n + j];
    };
    return out;
}

// Scatter rows of a [K, N] matrix into [M, N] output, averaging rows that
// share a target index. Rows with no contribution stay zero.
template <class T>
Tensor<T> scatter_mean_rows(const Tensor<T>& a, const std::vector<int>& idx, int m) {
    if (a.ndim() != 2 || static_cast<size_t>(a.dim(0)) != idx.size())
        throw std::invalid_argument("scatter_mean_rows: shape mismatch");
    const int n = a.dim(1), k = a.dim(0);
    std::vector<int> counts(static_cast<size_t>(m), 0);
    for (int i : idx) counts[static_cast<size_t>(i)]++;
    auto out = detail::make_op<T>({m, n}, {a.node()});
    auto an = a.node(), on = out.node();
    for (int i = 0; i < k; ++i) {
        const T inv = T(1) / static_cast<T>(counts[static_cast<size_t>(idx[i])]);
        for (int j = 0; j < n; ++j)
            on->val[static_cast<size_t>(idx[i]) * n + j] += an->val[static_cast<size_t>(i) * n + j] * inv;
    }
    on->backfn = [an, on = on.get(), idx, counts, n, k] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < k; ++i) {
            const T inv = T(1) / static_cast<T>(counts[static_cast<size_t>(idx[i])]);
            for (int j = 0; j < n; ++j)
                an->grad[static_cast<size_t>(i) * n + j] += on->grad[static_cast<size_t>(idx[i]) * n + j] * inv;
        }
    };
    return out;
}

// ---- softmax family (rows of a 2D tensor) ----

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("log_softmax_rows: need 2D");
    const int m = a.dim(0), n = a.dim(1);
    auto out = detail::make_op<T>(a.shape(), {a.node()});
    auto an = a.node(), on = out.node();
    for (int i = 0; i < m; ++i) {
        const T* row = an->val.data() + static_cast<size_t>(i) * n;
        T mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T s = 0;
        for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        const T lse = mx + std::log(s);
        for (int j = 0; j < n; ++j) on->val[static_cast<size_t>(i) * n + j] = row[j] - lse;
    }
    on->backfn = [an, on = on.get(), m, n] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            T gsum = 0;
            for (int j = 0; j < n; ++j) gsum += on->grad[static_cast<size_t>(i) * n + j];
            for (int j = 0; j < n; ++j) {
                const size_t k = static_cast<size_t>(i) * n + j;
                an->grad[k] += on->grad[k] - std::exp(on->val[k]) * gsum;
            }
        }
    };
    return out;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    return exp_t(log_softmax_rows(a));
}

// Pick one element per row: out[i] = a[i, cols[i]], shape [M, 1].
template <class T>
Tensor<T> pick_cols(const Tensor<T>& a, const std::vector<int>& cols) {
    if (a.ndim() != 2 || static_cast<size_t>(a.dim(0)) != cols.size())
        throw std::invalid_argument("pick_cols: shape mismatch");
    const int m = a.dim(0), n = a.dim(1);
    auto out = detail::make_op<T>({m, 1}, {a.node()});
    auto an = a.node(), on = out.node();
    for (int i = 0; i < m; ++i) on->val[i] = an->val[static_cast<size_t>(i) * n + cols[i]];
    on->backfn = [an, on = on.get(), cols, m, n] {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i) an->grad[static_cast<size_t>(i) * n + cols[i]] += on->grad[i];
    };
    return out;
}

// Stops gradient flow; value is copied.
template <class T>
Tensor<T> detach(const Tensor<T>& a) {
    return Tensor<T>::from_data(a.shape(), a.val(), false);
}

// ---- losses ----

// mean over elements of [ softplus(x) - y*x ] == BCE-with-logits, optionally
// elementwise-weighted before the mean.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets,
                          const Tensor<T>* weights = nullptr) {
    auto per = sub(softplus(logits), mul(targets, logits));
    if (weights) per = mul(per, *weights);
    return mean_all(per);
}

// Cross entropy of row-logits against integer class targets (mean over rows).
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets) {
    auto lp = log_softmax_rows(logits);
    auto picked = pick_cols(lp, targets);
    return scale(mean_all(picked), T(-1));
}

// ---- init helpers ----

template <class T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, T lo, T hi) {
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.val()) v = static_cast<T>(d(rng));
}

template <class T>
void kaiming_init(Tensor<T>& w, std::mt19937_64& rng, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    fill_uniform(w, rng, static_cast<T>(-bound), static_cast<T>(bound));
}

}  // namespace lgcvs
