#pragma once

// Dense n-dimensional tensors with reverse-mode automatic differentiation.
//
// Layout is channels-last, row-major. Storage is 64-bit float by default
// (TensorT<double>, aliased to Tensor); a 32-bit instantiation exists behind
// the same template. Ops build entries on the active Tape; Tape::backward
// replays the entries in reverse creation order, which is a valid topological
// order by construction, so two backward passes over identical graphs are
// bit-identical. There is no broadcasting beyond trailing-dimension bias adds
// and the explicit per-example ops below.

#include <cassert>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sid/common.hpp"
#include "sid/kernels.hpp"

namespace sid {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;        // empty until touched by backward
    bool requires_grad = false; // leaf parameter flag
    bool needs_grad = false;    // true for leaves with requires_grad and tape outputs
};

template <typename T>
class TapeT;

template <typename T>
inline TapeT<T>*& active_tape() {
    thread_local TapeT<T>* tape = nullptr;
    return tape;
}

template <typename T>
class TensorT {
public:
    using Node = TensorNode<T>;

    TensorT() = default;

    static TensorT zeros(Shape shape) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->data.assign(static_cast<size_t>(sid::numel(t.node_->shape)), T(0));
        return t;
    }

    static TensorT full(Shape shape, T value) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.node_->data) v = value;
        return t;
    }

    static TensorT from_data(Shape shape, std::vector<T> data) {
        if (static_cast<size_t>(sid::numel(shape)) != data.size()) {
            throw DimensionError("from_data: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " elements");
        }
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        return t;
    }

    static TensorT scalar(T value) { return from_data({1}, {value}); }

    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1)) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.node_->data) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return sid::numel(node_->shape); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    size_t rank() const { return node_->shape.size(); }

    std::span<const T> data() const { return {node_->data.data(), node_->data.size()}; }
    // Parameters are mutated in place by the optimizer between steps only.
    std::span<T> mutable_data() { return {node_->data.data(), node_->data.size()}; }

    bool requires_grad() const { return node_->requires_grad; }
    TensorT& set_requires_grad(bool v) {
        node_->requires_grad = v;
        node_->needs_grad = v || node_->needs_grad;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw DimensionError("item: tensor is not a scalar");
        return node_->data[0];
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

// Ordered record of (inputs, output, backward-rule) entries. Reverse replay
// accumulates gradients; a tape is confined to one logical execution.
template <typename T>
class TapeT {
public:
    TapeT() : prev_(active_tape<T>()) { active_tape<T>() = this; }
    ~TapeT() { active_tape<T>() = prev_; }
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    struct Entry {
        std::shared_ptr<TensorNode<T>> out;
        std::function<void()> backward;
        const char* op;
    };

    void push(std::shared_ptr<TensorNode<T>> out, std::function<void()> backward, const char* op) {
        entries_.push_back(Entry{std::move(out), std::move(backward), op});
    }

    size_t size() const { return entries_.size(); }

    void backward(const TensorT<T>& loss) {
        if (replayed_) throw Error("tape: backward() may run once per recorded graph");
        if (loss.numel() != 1) throw DimensionError("backward: loss must be scalar");
        replayed_ = true;
        loss.node()->grad.assign(1, T(1));
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (it->out->grad.empty()) continue;  // dead branch
            it->backward();
        }
    }

private:
    std::vector<Entry> entries_;
    TapeT<T>* prev_;
    bool replayed_ = false;
};

using Tape = TapeT<double>;

namespace detail {

template <typename T>
inline std::vector<T>& grad_buf(const std::shared_ptr<TensorNode<T>>& n) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), T(0));
    return n->grad;
}

template <typename T>
inline bool any_needs_grad(std::initializer_list<const TensorT<T>*> ins) {
    for (const auto* t : ins) {
        if (t->node()->needs_grad) return true;
    }
    return false;
}

// Record `backward` for `out` if grads must flow. `backward` must check each
// input's needs_grad before accumulating into it.
template <typename T, typename F>
inline void record(std::initializer_list<const TensorT<T>*> ins, TensorT<T>& out, const char* op,
                   F&& backward) {
    TapeT<T>* tape = active_tape<T>();
    if (tape == nullptr || !any_needs_grad<T>(ins)) return;
    out.node()->needs_grad = true;
    tape->push(out.node(), std::function<void()>(std::forward<F>(backward)), op);
}

template <typename T>
inline TensorT<T> uninit(Shape shape) {
    return TensorT<T>::zeros(std::move(shape));
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "add");
    auto out = detail::uninit<T>(a.shape());
    kern::ops<T>().add(a.data().data(), b.data().data(), out.mutable_data().data(),
                       a.data().size());
    detail::record<T>({&a, &b}, out, "add", [an = a.node(), bn = b.node(), on = out.node()] {
        const auto& g = on->grad;
        if (an->needs_grad) kern::ops<T>().axpy(T(1), g.data(), detail::grad_buf(an).data(), g.size());
        if (bn->needs_grad) kern::ops<T>().axpy(T(1), g.data(), detail::grad_buf(bn).data(), g.size());
    });
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "sub");
    auto out = detail::uninit<T>(a.shape());
    kern::ops<T>().sub(a.data().data(), b.data().data(), out.mutable_data().data(),
                       a.data().size());
    detail::record<T>({&a, &b}, out, "sub", [an = a.node(), bn = b.node(), on = out.node()] {
        const auto& g = on->grad;
        if (an->needs_grad) kern::ops<T>().axpy(T(1), g.data(), detail::grad_buf(an).data(), g.size());
        if (bn->needs_grad) kern::ops<T>().axpy(T(-1), g.data(), detail::grad_buf(bn).data(), g.size());
    });
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "mul");
    auto out = detail::uninit<T>(a.shape());
    kern::ops<T>().mul(a.data().data(), b.data().data(), out.mutable_data().data(),
                       a.data().size());
    detail::record<T>({&a, &b}, out, "mul", [an = a.node(), bn = b.node(), on = out.node()] {
        const auto& g = on->grad;
        const size_t n = g.size();
        if (an->needs_grad) {
            auto& ga = detail::grad_buf(an);
            for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->data[i];
        }
        if (bn->needs_grad) {
            auto& gb = detail::grad_buf(bn);
            for (size_t i = 0; i < n; ++i) gb[i] += g[i] * an->data[i];
        }
    });
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c) {
    auto out = detail::uninit<T>(x.shape());
    kern::ops<T>().scale(x.data().data(), c, out.mutable_data().data(), x.data().size());
    detail::record<T>({&x}, out, "scale", [xn = x.node(), on = out.node(), c] {
        if (xn->needs_grad)
            kern::ops<T>().axpy(c, on->grad.data(), detail::grad_buf(xn).data(), on->grad.size());
    });
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
    auto out = detail::uninit<T>(x.shape());
    auto yd = out.mutable_data();
    auto xd = x.data();
    for (size_t i = 0; i < xd.size(); ++i) {
        T s = static_cast<T>(sigmoid(static_cast<double>(xd[i])));
        yd[i] = xd[i] * s;
    }
    detail::record<T>({&x}, out, "silu", [xn = x.node(), on = out.node()] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const auto& g = on->grad;
        for (size_t i = 0; i < g.size(); ++i) {
            T s = static_cast<T>(sigmoid(static_cast<double>(xn->data[i])));
            gx[i] += g[i] * s * (T(1) + xn->data[i] * (T(1) - s));
        }
    });
    return out;
}

// y = x + b with b matching a trailing suffix of x's shape (bias add,
// positional embeddings). Gradient of b sums over the leading dims.
template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b) {
    const Shape& xs = x.shape();
    const Shape& bs = b.shape();
    if (bs.size() > xs.size() ||
        !std::equal(bs.begin(), bs.end(), xs.end() - static_cast<int64_t>(bs.size()))) {
        throw DimensionError("add_bias: bias " + shape_str(bs) + " is not a trailing suffix of " +
                             shape_str(xs));
    }
    const size_t m = static_cast<size_t>(sid::numel(bs));
    const size_t rows = x.data().size() / m;
    auto out = detail::uninit<T>(xs);
    auto yd = out.mutable_data();
    auto xd = x.data();
    auto bd = b.data();
    for (size_t r = 0; r < rows; ++r) {
        kern::ops<T>().add(xd.data() + r * m, bd.data(), yd.data() + r * m, m);
    }
    detail::record<T>({&x, &b}, out, "add_bias", [xn = x.node(), bn = b.node(), on = out.node(), m, rows] {
        const auto& g = on->grad;
        if (xn->needs_grad) kern::ops<T>().axpy(T(1), g.data(), detail::grad_buf(xn).data(), g.size());
        if (bn->needs_grad) {
            auto& gb = detail::grad_buf(bn);
            for (size_t r = 0; r < rows; ++r)
                kern::ops<T>().axpy(T(1), g.data() + r * m, gb.data(), m);
        }
    });
    return out;
}

// y[n, ...] = w[n] * x[n, ...] with w a plain (non-differentiable) vector,
// one entry per example. Used to apply per-example loss weights.
template <typename T>
TensorT<T> scale_per_example(const TensorT<T>& x, const std::vector<T>& w) {
    if (x.rank() < 1 || x.dim(0) != static_cast<int64_t>(w.size())) {
        throw DimensionError("scale_per_example: weight count " + std::to_string(w.size()) +
                             " vs batch " + shape_str(x.shape()));
    }
    const size_t n = w.size();
    const size_t m = x.data().size() / n;
    auto out = detail::uninit<T>(x.shape());
    for (size_t i = 0; i < n; ++i) {
        kern::ops<T>().scale(x.data().data() + i * m, w[i], out.mutable_data().data() + i * m, m);
    }
    detail::record<T>({&x}, out, "scale_per_example", [xn = x.node(), on = out.node(), w, m] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        for (size_t i = 0; i < w.size(); ++i)
            kern::ops<T>().axpy(w[i], on->grad.data() + i * m, gx.data() + i * m, m);
    });
    return out;
}

// Feature-wise modulation: y[n,p,c] = x[n,p,c] * (1 + s[n,c]) + h[n,c] for
// x [N,...,C], s and h [N,C]. Identity when s and h come from a zero-
// initialized projection.
template <typename T>
TensorT<T> film(const TensorT<T>& x, const TensorT<T>& s, const TensorT<T>& h) {
    if (x.rank() < 2) throw DimensionError("film: input must have rank >= 2");
    const int64_t n = x.dim(0);
    const int64_t c = x.dim(x.rank() - 1);
    Shape want{n, c};
    detail::check_same_shape(s.shape(), want, "film(scale)");
    detail::check_same_shape(h.shape(), want, "film(shift)");
    const int64_t p = x.numel() / (n * c);
    auto out = detail::uninit<T>(x.shape());
    auto yd = out.mutable_data();
    auto xd = x.data();
    auto sd = s.data();
    auto hd = h.data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < p; ++j) {
            const size_t off = static_cast<size_t>((i * p + j) * c);
            for (int64_t k = 0; k < c; ++k) {
                yd[off + k] = xd[off + k] * (T(1) + sd[i * c + k]) + hd[i * c + k];
            }
        }
    }
    detail::record<T>({&x, &s, &h}, out, "film",
                      [xn = x.node(), sn = s.node(), hn = h.node(), on = out.node(), n, p, c] {
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < p; ++j) {
                const size_t off = static_cast<size_t>((i * p + j) * c);
                for (int64_t k = 0; k < c; ++k) {
                    const T gv = g[off + k];
                    if (xn->needs_grad)
                        detail::grad_buf(xn)[off + k] += gv * (T(1) + sn->data[i * c + k]);
                    if (sn->needs_grad) detail::grad_buf(sn)[i * c + k] += gv * xn->data[off + k];
                    if (hn->needs_grad) detail::grad_buf(hn)[i * c + k] += gv;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
    if (sid::numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    auto out = TensorT<T>::from_data(std::move(shape),
                                     std::vector<T>(x.data().begin(), x.data().end()));
    detail::record<T>({&x}, out, "reshape", [xn = x.node(), on = out.node()] {
        if (xn->needs_grad)
            kern::ops<T>().axpy(T(1), on->grad.data(), detail::grad_buf(xn).data(), on->grad.size());
    });
    return out;
}

// swap two axes
template <typename T>
TensorT<T> transpose(const TensorT<T>& x, size_t axis_a, size_t axis_b) {
    const size_t r = x.rank();
    if (axis_a >= r || axis_b >= r) throw DimensionError("transpose: axis out of range");
    Shape out_shape = x.shape();
    std::swap(out_shape[axis_a], out_shape[axis_b]);
    auto out = detail::uninit<T>(out_shape);

    const Shape& xs = x.shape();
    std::vector<int64_t> xstr(r, 1);
    for (size_t i = r - 1; i > 0; --i) xstr[i - 1] = xstr[i] * xs[i];
    std::vector<int64_t> perm(r);
    for (size_t i = 0; i < r; ++i) perm[i] = static_cast<int64_t>(i);
    std::swap(perm[axis_a], perm[axis_b]);

    auto run = [out_shape, xstr, perm, r](const std::vector<T>& src, std::vector<T>& dst,
                                          bool forward) {
        std::vector<int64_t> idx(r, 0);
        const int64_t total = sid::numel(out_shape);
        for (int64_t o = 0; o < total; ++o) {
            int64_t xoff = 0;
            for (size_t i = 0; i < r; ++i) xoff += idx[i] * xstr[static_cast<size_t>(perm[i])];
            if (forward) {
                dst[static_cast<size_t>(o)] = src[static_cast<size_t>(xoff)];
            } else {
                dst[static_cast<size_t>(xoff)] += src[static_cast<size_t>(o)];
            }
            for (size_t i = r; i-- > 0;) {
                if (++idx[i] < out_shape[i]) break;
                idx[i] = 0;
            }
        }
    };
    run(x.node()->data, out.node()->data, true);
    detail::record<T>({&x}, out, "transpose", [xn = x.node(), on = out.node(), run] {
        if (xn->needs_grad) run(on->grad, detail::grad_buf(xn), false);
    });
    return out;
}

// y = x[:, h0:h0+hh, w0:w0+ww, :] on NHWC
template <typename T>
TensorT<T> slice_spatial(const TensorT<T>& x, int64_t h0, int64_t w0, int64_t hh, int64_t ww) {
    if (x.rank() != 4) throw DimensionError("slice_spatial: expected NHWC");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h0 < 0 || w0 < 0 || h0 + hh > h || w0 + ww > w) {
        throw DimensionError("slice_spatial: window out of bounds");
    }
    auto out = detail::uninit<T>({n, hh, ww, c});
    auto yd = out.mutable_data();
    auto xd = x.data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t r = 0; r < hh; ++r) {
            const T* src = xd.data() + ((i * h + h0 + r) * w + w0) * c;
            T* dst = yd.data() + ((i * hh + r) * ww) * c;
            std::memcpy(dst, src, sizeof(T) * static_cast<size_t>(ww * c));
        }
    }
    detail::record<T>({&x}, out, "slice_spatial",
                      [xn = x.node(), on = out.node(), n, h, w, c, h0, w0, hh, ww] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t r = 0; r < hh; ++r) {
                const T* src = g.data() + ((i * hh + r) * ww) * c;
                T* dst = gx.data() + ((i * h + h0 + r) * w + w0) * c;
                kern::ops<T>().axpy(T(1), src, dst, static_cast<size_t>(ww * c));
            }
        }
    });
    return out;
}

// concat along the channel axis of NHWC or N,L,C
template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != b.rank() || a.rank() < 2) throw DimensionError("concat_channels: rank mismatch");
    for (size_t i = 0; i + 1 < a.rank(); ++i) {
        if (a.dim(i) != b.dim(i)) {
            throw DimensionError("concat_channels: leading dims differ: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        }
    }
    const int64_t ca = a.dim(a.rank() - 1), cb = b.dim(b.rank() - 1);
    Shape out_shape = a.shape();
    out_shape.back() = ca + cb;
    const int64_t rows = a.numel() / ca;
    auto out = detail::uninit<T>(out_shape);
    auto yd = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r) {
        std::memcpy(yd.data() + r * (ca + cb), a.data().data() + r * ca, sizeof(T) * static_cast<size_t>(ca));
        std::memcpy(yd.data() + r * (ca + cb) + ca, b.data().data() + r * cb, sizeof(T) * static_cast<size_t>(cb));
    }
    detail::record<T>({&a, &b}, out, "concat_channels",
                      [an = a.node(), bn = b.node(), on = out.node(), rows, ca, cb] {
        const auto& g = on->grad;
        for (int64_t r = 0; r < rows; ++r) {
            if (an->needs_grad)
                kern::ops<T>().axpy(T(1), g.data() + r * (ca + cb), detail::grad_buf(an).data() + r * ca,
                                    static_cast<size_t>(ca));
            if (bn->needs_grad)
                kern::ops<T>().axpy(T(1), g.data() + r * (ca + cb) + ca,
                                    detail::grad_buf(bn).data() + r * cb, static_cast<size_t>(cb));
        }
    });
    return out;
}

// [N,H,W,C] -> [N,H/p,W/p,C*p*p]; exact inverse of depth_to_space
template <typename T>
TensorT<T> space_to_depth(const TensorT<T>& x, int64_t p) {
    if (x.rank() != 4) throw DimensionError("space_to_depth: expected NHWC");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (p < 1 || h % p != 0 || w % p != 0) {
        throw DimensionError("space_to_depth: spatial dims " + shape_str(x.shape()) +
                             " not divisible by patch " + std::to_string(p));
    }
    auto out = detail::uninit<T>({n, h / p, w / p, c * p * p});
    auto yd = out.mutable_data();
    auto xd = x.data();
    const int64_t ho = h / p, wo = w / p;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < ho; ++r)
            for (int64_t s = 0; s < wo; ++s)
                for (int64_t dr = 0; dr < p; ++dr)
                    for (int64_t ds = 0; ds < p; ++ds) {
                        const T* src = xd.data() + (((i * h + r * p + dr) * w + s * p + ds) * c);
                        T* dst = yd.data() + (((i * ho + r) * wo + s) * c * p * p + (dr * p + ds) * c);
                        std::memcpy(dst, src, sizeof(T) * static_cast<size_t>(c));
                    }
    detail::record<T>({&x}, out, "space_to_depth",
                      [xn = x.node(), on = out.node(), n, h, w, c, p, ho, wo] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t r = 0; r < ho; ++r)
                for (int64_t s = 0; s < wo; ++s)
                    for (int64_t dr = 0; dr < p; ++dr)
                        for (int64_t ds = 0; ds < p; ++ds) {
                            const T* src = g.data() + (((i * ho + r) * wo + s) * c * p * p + (dr * p + ds) * c);
                            T* dst = gx.data() + (((i * h + r * p + dr) * w + s * p + ds) * c);
                            kern::ops<T>().axpy(T(1), src, dst, static_cast<size_t>(c));
                        }
    });
    return out;
}

// [N,H,W,C] -> [N,H*p,W*p,C/(p*p)]
template <typename T>
TensorT<T> depth_to_space(const TensorT<T>& x, int64_t p) {
    if (x.rank() != 4) throw DimensionError("depth_to_space: expected NHWC");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (p < 1 || c % (p * p) != 0) {
        throw DimensionError("depth_to_space: channels " + std::to_string(c) +
                             " not divisible by patch^2");
    }
    const int64_t co = c / (p * p);
    auto out = detail::uninit<T>({n, h * p, w * p, co});
    auto yd = out.mutable_data();
    auto xd = x.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < h; ++r)
            for (int64_t s = 0; s < w; ++s)
                for (int64_t dr = 0; dr < p; ++dr)
                    for (int64_t ds = 0; ds < p; ++ds) {
                        const T* src = xd.data() + (((i * h + r) * w + s) * c + (dr * p + ds) * co);
                        T* dst = yd.data() + (((i * h * p + r * p + dr) * w * p + s * p + ds) * co);
                        std::memcpy(dst, src, sizeof(T) * static_cast<size_t>(co));
                    }
    detail::record<T>({&x}, out, "depth_to_space",
                      [xn = x.node(), on = out.node(), n, h, w, c, p, co] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t r = 0; r < h; ++r)
                for (int64_t s = 0; s < w; ++s)
                    for (int64_t dr = 0; dr < p; ++dr)
                        for (int64_t ds = 0; ds < p; ++ds) {
                            const T* src = g.data() + (((i * h * p + r * p + dr) * w * p + s * p + ds) * co);
                            T* dst = gx.data() + (((i * h + r) * w + s) * c + (dr * p + ds) * co);
                            kern::ops<T>().axpy(T(1), src, dst, static_cast<size_t>(co));
                        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// pooling / upsampling
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> avg_pool2(const TensorT<T>& x) {
    if (x.rank() != 4) throw DimensionError("avg_pool2: expected NHWC");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("avg_pool2: spatial dims " + shape_str(x.shape()) + " not even");
    }
    auto out = detail::uninit<T>({n, h / 2, w / 2, c});
    auto yd = out.mutable_data();
    auto xd = x.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < h / 2; ++r)
            for (int64_t s = 0; s < w / 2; ++s)
                for (int64_t k = 0; k < c; ++k) {
                    auto at = [&](int64_t dr, int64_t ds) {
                        return xd[((i * h + 2 * r + dr) * w + 2 * s + ds) * c + k];
                    };
                    yd[((i * (h / 2) + r) * (w / 2) + s) * c + k] =
                        (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * T(0.25);
                }
    detail::record<T>({&x}, out, "avg_pool2", [xn = x.node(), on = out.node(), n, h, w, c] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t r = 0; r < h / 2; ++r)
                for (int64_t s = 0; s < w / 2; ++s)
                    for (int64_t k = 0; k < c; ++k) {
                        const T gv = g[((i * (h / 2) + r) * (w / 2) + s) * c + k] * T(0.25);
                        for (int64_t dr = 0; dr < 2; ++dr)
                            for (int64_t ds = 0; ds < 2; ++ds)
                                gx[((i * h + 2 * r + dr) * w + 2 * s + ds) * c + k] += gv;
                    }
    });
    return out;
}

template <typename T>
TensorT<T> nearest_upsample2(const TensorT<T>& x) {
    if (x.rank() != 4) throw DimensionError("nearest_upsample2: expected NHWC");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    auto out = detail::uninit<T>({n, h * 2, w * 2, c});
    auto yd = out.mutable_data();
    auto xd = x.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < h; ++r)
            for (int64_t s = 0; s < w; ++s) {
                const T* src = xd.data() + ((i * h + r) * w + s) * c;
                for (int64_t dr = 0; dr < 2; ++dr)
                    for (int64_t ds = 0; ds < 2; ++ds) {
                        T* dst = yd.data() + ((i * 2 * h + 2 * r + dr) * 2 * w + 2 * s + ds) * c;
                        std::memcpy(dst, src, sizeof(T) * static_cast<size_t>(c));
                    }
            }
    detail::record<T>({&x}, out, "nearest_upsample2", [xn = x.node(), on = out.node(), n, h, w, c] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t r = 0; r < h; ++r)
                for (int64_t s = 0; s < w; ++s) {
                    T* dst = gx.data() + ((i * h + r) * w + s) * c;
                    for (int64_t dr = 0; dr < 2; ++dr)
                        for (int64_t ds = 0; ds < 2; ++ds) {
                            const T* src = g.data() + ((i * 2 * h + 2 * r + dr) * 2 * w + 2 * s + ds) * c;
                            kern::ops<T>().axpy(T(1), src, dst, static_cast<size_t>(c));
                        }
                }
    });
    return out;
}

// ---------------------------------------------------------------------------
// matmul / linear / conv
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    // c[m,n] += a[m,k] * b[k,n]; caller zero-initializes c when needed
    for (int64_t i = 0; i < m; ++i) {
        kern::ops<T>().madd_rows(c + i * n, a + i * k, b, static_cast<size_t>(k),
                                 static_cast<size_t>(n));
    }
}

template <typename T>
std::vector<T> transpose2d(const T* a, int64_t rows, int64_t cols) {
    std::vector<T> t(static_cast<size_t>(rows * cols));
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) t[static_cast<size_t>(j * rows + i)] = a[i * cols + j];
    return t;
}

}  // namespace detail

// rank-2 [M,K]x[K,N], or rank-3 batched [B,M,K]x[B,K,N]
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const bool batched = a.rank() == 3;
    if ((batched && b.rank() != 3) || (!batched && (a.rank() != 2 || b.rank() != 2))) {
        throw DimensionError("matmul: ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const int64_t nb = batched ? a.dim(0) : 1;
    const int64_t m = a.dim(batched ? 1 : 0);
    const int64_t k = a.dim(batched ? 2 : 1);
    if (b.dim(batched ? 1 : 0) != k || (batched && b.dim(0) != nb)) {
        throw DimensionError("matmul: inner dims disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const int64_t n = b.dim(batched ? 2 : 1);
    Shape out_shape = batched ? Shape{nb, m, n} : Shape{m, n};
    auto out = detail::uninit<T>(out_shape);
    for (int64_t i = 0; i < nb; ++i) {
        detail::gemm(a.data().data() + i * m * k, b.data().data() + i * k * n,
                     out.mutable_data().data() + i * m * n, m, k, n);
    }
    detail::record<T>({&a, &b}, out, "matmul",
                      [an = a.node(), bn = b.node(), on = out.node(), nb, m, k, n] {
        const auto& g = on->grad;
        for (int64_t i = 0; i < nb; ++i) {
            const T* gi = g.data() + i * m * n;
            if (an->needs_grad) {
                // dA = g * B^T
                auto bt = detail::transpose2d(bn->data.data() + i * k * n, k, n);
                detail::gemm(gi, bt.data(), detail::grad_buf(an).data() + i * m * k, m, n, k);
            }
            if (bn->needs_grad) {
                // dB = A^T * g
                auto at = detail::transpose2d(an->data.data() + i * m * k, m, k);
                detail::gemm(at.data(), gi, detail::grad_buf(bn).data() + i * k * n, k, m, n);
            }
        }
    });
    return out;
}

// x [..., K] * w [K, N] (+ bias [N]); flattens leading dims
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias) {
    if (w.rank() != 2) throw DimensionError("linear: weight must be rank 2");
    const int64_t k = w.dim(0);
    if (x.dim(x.rank() - 1) != k) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = w.dim(1);
    auto flat = reshape(x, {x.numel() / k, k});
    auto y = matmul(flat, w);
    if (bias.defined()) y = add_bias(y, bias);
    return reshape(y, out_shape);
}

template <typename T>
TensorT<T> linear_nobias(const TensorT<T>& x, const TensorT<T>& w) {
    return linear(x, w, TensorT<T>());
}

// 3x3 cross-correlation with zero same-padding, NHWC; kernel [3,3,Cin,Cout]
template <typename T>
TensorT<T> conv2d_3x3(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& bias) {
    if (x.rank() != 4 || k.rank() != 4 || k.dim(0) != 3 || k.dim(1) != 3) {
        throw DimensionError("conv2d_3x3: expected NHWC input and [3,3,Cin,Cout] kernel");
    }
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), ci = x.dim(3);
    const int64_t co = k.dim(3);
    if (k.dim(2) != ci) {
        throw DimensionError("conv2d_3x3: channel mismatch: input " + shape_str(x.shape()) +
                             " kernel " + shape_str(k.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co)) {
        throw DimensionError("conv2d_3x3: bias shape " + shape_str(bias.shape()));
    }
    auto out = detail::uninit<T>({n, h, w, co});
    auto yd = out.mutable_data();
    auto xd = x.data();
    auto kd = k.data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t r = 0; r < h; ++r) {
            for (int64_t s = 0; s < w; ++s) {
                T* acc = yd.data() + ((i * h + r) * w + s) * co;
                if (bias.defined()) {
                    std::memcpy(acc, bias.data().data(), sizeof(T) * static_cast<size_t>(co));
                }
                for (int64_t dr = 0; dr < 3; ++dr) {
                    const int64_t rr = r + dr - 1;
                    if (rr < 0 || rr >= h) continue;
                    for (int64_t ds = 0; ds < 3; ++ds) {
                        const int64_t ss = s + ds - 1;
                        if (ss < 0 || ss >= w) continue;
                        const T* xrow = xd.data() + ((i * h + rr) * w + ss) * ci;
                        const T* krow = kd.data() + (dr * 3 + ds) * ci * co;
                        kern::ops<T>().madd_rows(acc, xrow, krow, static_cast<size_t>(ci),
                                                 static_cast<size_t>(co));
                    }
                }
            }
        }
    }
    detail::record<T>({&x, &k, &bias}, out, "conv2d_3x3",
                      [xn = x.node(), kn = k.node(), bn = bias.defined() ? bias.node() : nullptr,
                       on = out.node(), n, h, w, ci, co] {
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t r = 0; r < h; ++r) {
                for (int64_t s = 0; s < w; ++s) {
                    const T* gp = g.data() + ((i * h + r) * w + s) * co;
                    if (bn && bn->needs_grad) {
                        kern::ops<T>().axpy(T(1), gp, detail::grad_buf(bn).data(),
                                            static_cast<size_t>(co));
                    }
                    for (int64_t dr = 0; dr < 3; ++dr) {
                        const int64_t rr = r + dr - 1;
                        if (rr < 0 || rr >= h) continue;
                        for (int64_t ds = 0; ds < 3; ++ds) {
                            const int64_t ss = s + ds - 1;
                            if (ss < 0 || ss >= w) continue;
                            const int64_t xoff = ((i * h + rr) * w + ss) * ci;
                            const int64_t koff = (dr * 3 + ds) * ci * co;
                            if (xn->needs_grad) {
                                auto& gx = detail::grad_buf(xn);
                                for (int64_t a = 0; a < ci; ++a) {
                                    T acc = T(0);
                                    const T* krow = kn->data.data() + koff + a * co;
                                    for (int64_t b = 0; b < co; ++b) acc += krow[b] * gp[b];
                                    gx[xoff + a] += acc;
                                }
                            }
                            if (kn->needs_grad) {
                                auto& gk = detail::grad_buf(kn);
                                for (int64_t a = 0; a < ci; ++a) {
                                    kern::ops<T>().axpy(xn->data[xoff + a], gp,
                                                        gk.data() + koff + a * co,
                                                        static_cast<size_t>(co));
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-6)) {
    const int64_t c = x.dim(x.rank() - 1);
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("layer_norm: gamma/beta must match last dim " + std::to_string(c));
    }
    const int64_t rows = x.numel() / c;
    auto out = detail::uninit<T>(x.shape());
    // cache per-row mean and inverse std for the backward rule
    auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * 2));
    auto yd = out.mutable_data();
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xd.data() + r * c;
        T mean = T(0);
        for (int64_t j = 0; j < c; ++j) mean += xr[j];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int64_t j = 0; j < c; ++j) {
            const T d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(2 * r)] = mean;
        (*stats)[static_cast<size_t>(2 * r + 1)] = inv;
        T* yr = yd.data() + r * c;
        for (int64_t j = 0; j < c; ++j) yr[j] = (xr[j] - mean) * inv * gd[j] + bd[j];
    }
    detail::record<T>({&x, &gamma, &beta}, out, "layer_norm",
                      [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(), stats,
                       rows, c] {
        const auto& g = on->grad;
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xn->data.data() + r * c;
            const T* gr = g.data() + r * c;
            const T mean = (*stats)[static_cast<size_t>(2 * r)];
            const T inv = (*stats)[static_cast<size_t>(2 * r + 1)];
            if (bn->needs_grad) {
                auto& gb = detail::grad_buf(bn);
                for (int64_t j = 0; j < c; ++j) gb[j] += gr[j];
            }
            if (gn->needs_grad) {
                auto& gg = detail::grad_buf(gn);
                for (int64_t j = 0; j < c; ++j) gg[j] += gr[j] * (xr[j] - mean) * inv;
            }
            if (xn->needs_grad) {
                // dxhat = g*gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                T sum_dxh = T(0), sum_dxh_xh = T(0);
                for (int64_t j = 0; j < c; ++j) {
                    const T xh = (xr[j] - mean) * inv;
                    const T dxh = gr[j] * gn->data[static_cast<size_t>(j)];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                }
                sum_dxh /= static_cast<T>(c);
                sum_dxh_xh /= static_cast<T>(c);
                auto& gx = detail::grad_buf(xn);
                for (int64_t j = 0; j < c; ++j) {
                    const T xh = (xr[j] - mean) * inv;
                    const T dxh = gr[j] * gn->data[static_cast<size_t>(j)];
                    gx[r * c + j] += inv * (dxh - sum_dxh - xh * sum_dxh_xh);
                }
            }
        }
    });
    return out;
}

template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
    const int64_t c = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / c;
    auto out = detail::uninit<T>(x.shape());
    auto yd = out.mutable_data();
    auto xd = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xd.data() + r * c;
        T* yr = yd.data() + r * c;
        T mx = xr[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (int64_t j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int64_t j = 0; j < c; ++j) yr[j] *= inv;
    }
    detail::record<T>({&x}, out, "softmax", [xn = x.node(), on = out.node(), rows, c] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const auto& g = on->grad;
        for (int64_t r = 0; r < rows; ++r) {
            const T* yr = on->data.data() + r * c;
            const T* gr = g.data() + r * c;
            T dot = T(0);
            for (int64_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
            for (int64_t j = 0; j < c; ++j) gx[r * c + j] += yr[j] * (gr[j] - dot);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    auto out = TensorT<T>::scalar(acc);
    detail::record<T>({&x}, out, "sum_all", [xn = x.node(), on = out.node()] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        const T g = on->grad[0];
        for (auto& v : gx) v += g;
    });
    return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

namespace detail {

template <typename T>
TensorT<T> reduce_except_batch(const TensorT<T>& x, bool mean, const char* op) {
    if (x.rank() < 1) throw DimensionError("reduce: rank 0");
    const int64_t n = x.dim(0);
    const int64_t m = x.numel() / n;
    const T f = mean ? T(1) / static_cast<T>(m) : T(1);
    auto out = uninit<T>({n});
    auto yd = out.mutable_data();
    auto xd = x.data();
    for (int64_t i = 0; i < n; ++i) {
        T acc = T(0);
        const T* row = xd.data() + i * m;
        for (int64_t j = 0; j < m; ++j) acc += row[j];
        yd[i] = acc * f;
    }
    record<T>({&x}, out, op, [xn = x.node(), on = out.node(), n, m, f] {
        if (!xn->needs_grad) return;
        auto& gx = grad_buf(xn);
        for (int64_t i = 0; i < n; ++i) {
            const T g = on->grad[static_cast<size_t>(i)] * f;
            T* row = gx.data() + i * m;
            for (int64_t j = 0; j < m; ++j) row[j] += g;
        }
    });
    return out;
}

}  // namespace detail

// [N, ...] -> [N], mean over non-batch dims
template <typename T>
TensorT<T> mean_except_batch(const TensorT<T>& x) {
    return detail::reduce_except_batch(x, true, "mean_except_batch");
}

template <typename T>
TensorT<T> sum_except_batch(const TensorT<T>& x) {
    return detail::reduce_except_batch(x, false, "sum_except_batch");
}

// ---------------------------------------------------------------------------
// embedding lookup / dropout / haar
// ---------------------------------------------------------------------------

// rows of table [K, C] selected by idx [N] -> [N, C]
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& table, const std::vector<int64_t>& idx) {
    if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2");
    const int64_t k = table.dim(0), c = table.dim(1);
    for (int64_t i : idx) {
        if (i < 0 || i >= k) throw DimensionError("gather_rows: index out of range");
    }
    auto out = detail::uninit<T>({static_cast<int64_t>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(out.mutable_data().data() + static_cast<int64_t>(i) * c,
                    table.data().data() + idx[i] * c, sizeof(T) * static_cast<size_t>(c));
    }
    detail::record<T>({&table}, out, "gather_rows", [tn = table.node(), on = out.node(), idx, c] {
        if (!tn->needs_grad) return;
        auto& gt = detail::grad_buf(tn);
        for (size_t i = 0; i < idx.size(); ++i) {
            kern::ops<T>().axpy(T(1), on->grad.data() + static_cast<int64_t>(i) * c,
                                gt.data() + idx[i] * c, static_cast<size_t>(c));
        }
    });
    return out;
}

// Inverted dropout with an explicit RNG stream; identity when rate == 0.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
    const T keep = static_cast<T>(1.0 - rate);
    auto mask = std::make_shared<std::vector<T>>(x.data().size());
    for (auto& m : *mask) m = rng.uniform() < rate ? T(0) : T(1) / keep;
    auto out = detail::uninit<T>(x.shape());
    kern::ops<T>().mul(x.data().data(), mask->data(), out.mutable_data().data(), x.data().size());
    detail::record<T>({&x}, out, "dropout", [xn = x.node(), on = out.node(), mask] {
        if (!xn->needs_grad) return;
        auto& gx = detail::grad_buf(xn);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * (*mask)[i];
    });
    return out;
}

namespace detail {

// One orthonormal Haar pass along W (axis==2) or H (axis==1) of NHWC.
// Output keeps the shape; first half = smooth, second half = detail.
template <typename T>
TensorT<T> haar_pass(const TensorT<T>& x, int axis, const char* op) {
    if (x.rank() != 4) throw DimensionError("haar: expected NHWC");
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t len = axis == 1 ? h : w;
    if (len % 2 != 0) {
        throw DimensionError("haar: axis length " + std::to_string(len) + " not even");
    }
    const T r = static_cast<T>(std::sqrt(0.5));
    auto out = uninit<T>(x.shape());
    auto yd = out.mutable_data();
    auto xd = x.data();
    auto index = [h, w, c, axis](int64_t i, int64_t a, int64_t b, int64_t k) {
        return axis == 1 ? ((i * h + a) * w + b) * c + k : ((i * h + b) * w + a) * c + k;
    };
    const int64_t other = axis == 1 ? w : h;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < len / 2; ++j)
            for (int64_t b = 0; b < other; ++b)
                for (int64_t k = 0; k < c; ++k) {
                    const T e = xd[index(i, 2 * j, b, k)];
                    const T o = xd[index(i, 2 * j + 1, b, k)];
                    yd[index(i, j, b, k)] = (e + o) * r;
                    yd[index(i, len / 2 + j, b, k)] = (e - o) * r;
                }
    record<T>({&x}, out, op, [xn = x.node(), on = out.node(), n, h, w, c, axis, len, other, r, index] {
        if (!xn->needs_grad) return;
        auto& gx = grad_buf(xn);
        const auto& g = on->grad;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < len / 2; ++j)
                for (int64_t b = 0; b < other; ++b)
                    for (int64_t k = 0; k < c; ++k) {
                        const T gs = g[index(i, j, b, k)];
                        const T gd = g[index(i, len / 2 + j, b, k)];
                        gx[index(i, 2 * j, b, k)] += (gs + gd) * r;
                        gx[index(i, 2 * j + 1, b, k)] += (gs - gd) * r;
                    }
    });
    return out;
}

}  // namespace detail

// pairs adjacent elements along each row (W axis): left half smooth, right detail
template <typename T>
TensorT<T> haar_rows(const TensorT<T>& x) {
    return detail::haar_pass(x, 2, "haar_rows");
}

// pairs adjacent elements along each column (H axis): top half smooth, bottom detail
template <typename T>
TensorT<T> haar_cols(const TensorT<T>& x) {
    return detail::haar_pass(x, 1, "haar_cols");
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionParamsT {
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;  // [C,C] weights, [C] biases
    int num_heads = 1;
};

using AttentionParams = AttentionParamsT<double>;

// softmax(Q K^T / sqrt(d)) V with learned projections; x is [N, L, C]
template <typename T>
TensorT<T> self_attention(const TensorT<T>& x, const AttentionParamsT<T>& p) {
    if (x.rank() != 3) throw DimensionError("self_attention: expected [N, L, C]");
    const int64_t n = x.dim(0), l = x.dim(1), c = x.dim(2);
    if (l == 0) throw DimensionError("self_attention: empty sequence");
    const int64_t heads = p.num_heads;
    if (heads < 1 || c % heads != 0) {
        throw DimensionError("self_attention: head count " + std::to_string(heads) +
                             " does not divide channels " + std::to_string(c));
    }
    const int64_t d = c / heads;
    auto q = linear(x, p.wq, p.bq);
    auto k = linear(x, p.wk, p.bk);
    auto v = linear(x, p.wv, p.bv);
    // [N,L,H,d] -> [N,H,L,d] -> [N*H, L, d]
    auto split = [&](const TensorT<T>& t) {
        return reshape(transpose(reshape(t, {n, l, heads, d}), 1, 2), {n * heads, l, d});
    };
    q = split(q);
    k = split(k);
    v = split(v);
    auto scores = scale(matmul(q, transpose(k, 1, 2)), static_cast<T>(1.0 / std::sqrt(double(d))));
    auto attn = softmax_lastdim(scores);
    auto ctx = matmul(attn, v);  // [N*H, L, d]
    auto merged = reshape(transpose(reshape(ctx, {n, heads, l, d}), 1, 2), {n, l, c});
    return linear(merged, p.wo, p.bo);
}

}  // namespace sid
