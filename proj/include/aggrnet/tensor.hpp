#pragma once

// Dense row-major tensors with reverse-mode autodiff. Every op builds a
// fresh node graph (define-by-run); tensors already on a tape are never
// mutated in place. Leaf data may only change between training steps.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <thread>
#include <unordered_set>

#include "aggrnet/common.hpp"

namespace aggrnet {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // accumulates into parents' grads

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        node_->shape = std::move(shape);
        node_->data.assign(numel(node_->shape), fill);
        node_->requires_grad = requires_grad;
    }

    static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel(shape) != values.size())
            throw ShapeError("from_data: " + shape_str(shape) + " holds " +
                             std::to_string(numel(shape)) + " elements, got " +
                             std::to_string(values.size()));
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor zeros(Shape shape, bool rg = false) { return Tensor(std::move(shape), T(0), rg); }
    static Tensor ones(Shape shape, bool rg = false) { return Tensor(std::move(shape), T(1), rg); }
    static Tensor scalar(T v, bool rg = false) { return Tensor(Shape{1}, v, rg); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

    bool all_finite() const {
        for (T v : node_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // New leaf with copied data, cut off from the graph.
    Tensor detach() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        t.node_->requires_grad = false;
        return t;
    }

    // Reverse pass from a scalar output; fills grad of every requires_grad
    // node reachable through the tape.
    void backward() const {
        if (size() != 1) throw ShapeError("backward() requires a scalar output");
        std::vector<TensorNode<T>*> order;
        std::unordered_set<TensorNode<T>*> seen;
        topo(node_.get(), seen, order);
        node_->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode<T>* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

    static Tensor make_op(Shape shape, std::vector<T> values,
                          std::vector<Tensor> inputs,
                          std::function<void(TensorNode<T>&)> backward_fn) {
        Tensor out = from_data(std::move(shape), std::move(values));
        bool rg = false;
        for (const Tensor& in : inputs) {
            rg = rg || in.node_->requires_grad;
            out.node_->parents.push_back(in.node_);
        }
        out.node_->requires_grad = rg;
        if (rg) out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

private:
    static void topo(TensorNode<T>* n, std::unordered_set<TensorNode<T>*>& seen,
                     std::vector<TensorNode<T>*>& order) {
        if (seen.count(n)) return;
        seen.insert(n);
        for (auto& p : n->parents) topo(p.get(), seen, order);
        order.push_back(n);
    }

    std::shared_ptr<TensorNode<T>> node_;
};

// ---------------------------------------------------------------------------
// Broadcasting

// Shapes broadcast numpy-style: right-aligned, extent 1 stretches.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides into `src` when iterating a broadcast result of shape `dst`.
inline std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& dst) {
    auto st = row_major_strides(src);
    std::vector<std::size_t> out(dst.size(), 0);
    std::size_t off = dst.size() - src.size();
    for (std::size_t i = 0; i < src.size(); ++i)
        out[off + i] = (src[i] == 1 && dst[off + i] != 1) ? 0 : st[i];
    return out;
}

namespace detail {

template <typename T>
void for_each_index(const Shape& shape, T&& fn) {
    std::size_t n = numel(shape);
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        fn(flat, idx);
        for (std::size_t ax = shape.size(); ax-- > 0;) {
            if (++idx[ax] < shape[ax]) break;
            idx[ax] = 0;
        }
    }
}

inline std::size_t dot_index(const std::vector<std::size_t>& idx,
                             const std::vector<std::size_t>& strides) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) off += idx[i] * strides[i];
    return off;
}

}  // namespace detail

// Generic broadcast binary op. fwd(a,b) -> value; dfa/dfb give the local
// derivative wrt each operand at (a,b).
template <typename T, typename F, typename Da, typename Db>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F fwd, Da dfa, Db dfb) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    std::vector<T> out(numel(out_shape));
    detail::for_each_index(out_shape, [&](std::size_t flat, const std::vector<std::size_t>& idx) {
        out[flat] = fwd(a.data()[detail::dot_index(idx, sa)], b.data()[detail::dot_index(idx, sb)]);
    });
    auto an = a.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        out_shape, std::move(out), {a, b},
        [an, bn, sa, sb, out_shape, dfa, dfb](TensorNode<T>& self) {
            bool need_a = an->requires_grad || an->backward_fn;
            bool need_b = bn->requires_grad || bn->backward_fn;
            if (need_a) an->ensure_grad();
            if (need_b) bn->ensure_grad();
            detail::for_each_index(out_shape, [&](std::size_t flat, const std::vector<std::size_t>& idx) {
                T g = self.grad[flat];
                std::size_t ia = detail::dot_index(idx, sa);
                std::size_t ib = detail::dot_index(idx, sb);
                T va = an->data[ia], vb = bn->data[ib];
                if (need_a) an->grad[ia] += g * dfa(va, vb);
                if (need_b) bn->grad[ib] += g * dfb(va, vb);
            });
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// Unary elementwise op with value-level derivative d(out)/d(in) as a
// function of the input value.
template <typename T, typename F, typename D>
Tensor<T> unary_op(const Tensor<T>& x, F fwd, D dfx) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x.data()[i]);
    auto xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn, dfx](TensorNode<T>& self) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i)
            xn->grad[i] += self.grad[i] * dfx(xn->data[i]);
    });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return -v; }, [](T) { return T(-1); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return unary_op(x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
    return unary_op(x, [c](T v) { return v * c; }, [c](T) { return c; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return std::sqrt(v); },
                    [](T v) { return T(0.5) / std::sqrt(v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                    [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto sig = [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    };
    return unary_op(x, sig, [sig](T v) {
        T s = sig(v);
        return s * (T(1) - s);
    });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    auto sig = [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    };
    return unary_op(x, [sig](T v) { return v * sig(v); }, [sig](T v) {
        T s = sig(v);
        return s + v * s * (T(1) - s);
    });
}

// ---------------------------------------------------------------------------
// Reductions

// Sum over `axes` (deduplicated); keepdim retains reduced extents as 1.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<std::size_t> axes, bool keepdim = false) {
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (std::size_t ax : axes)
        if (ax >= x.rank()) throw ShapeError("sum axis out of range");
    Shape kept = x.shape();
    for (std::size_t ax : axes) kept[ax] = 1;
    auto out_strides = broadcast_strides(kept, x.shape());
    std::vector<T> out(numel(kept), T(0));
    detail::for_each_index(x.shape(), [&](std::size_t flat, const std::vector<std::size_t>& idx) {
        out[detail::dot_index(idx, out_strides)] += x.data()[flat];
    });
    Shape out_shape = kept;
    if (!keepdim) {
        out_shape.clear();
        for (std::size_t i = 0; i < x.rank(); ++i)
            if (std::find(axes.begin(), axes.end(), i) == axes.end())
                out_shape.push_back(x.shape()[i]);
        if (out_shape.empty()) out_shape = {1};
    }
    auto xn = x.node();
    Shape xshape = x.shape();
    return Tensor<T>::make_op(out_shape, std::move(out), {x},
                              [xn, xshape, out_strides](TensorNode<T>& self) {
                                  xn->ensure_grad();
                                  detail::for_each_index(
                                      xshape, [&](std::size_t flat, const std::vector<std::size_t>& idx) {
                                          xn->grad[flat] += self.grad[detail::dot_index(idx, out_strides)];
                                      });
                              });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return sum(x, axes, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<std::size_t> axes, bool keepdim = false) {
    std::size_t n = 1;
    for (std::size_t ax : axes) n *= x.shape().at(ax);
    return mul_scalar(sum(x, std::move(axes), keepdim), T(1) / T(n));
}

// Max over one axis; ties resolve to the first (row-major) maximum.
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& x, std::size_t axis, bool keepdim = true) {
    if (axis >= x.rank()) throw ShapeError("reduce_max axis out of range");
    Shape kept = x.shape();
    kept[axis] = 1;
    auto out_strides = broadcast_strides(kept, x.shape());
    std::size_t out_n = numel(kept);
    std::vector<T> out(out_n, -std::numeric_limits<T>::infinity());
    std::vector<std::size_t> argmax(out_n, 0);
    detail::for_each_index(x.shape(), [&](std::size_t flat, const std::vector<std::size_t>& idx) {
        std::size_t o = detail::dot_index(idx, out_strides);
        if (x.data()[flat] > out[o]) {
            out[o] = x.data()[flat];
            argmax[o] = flat;
        }
    });
    Shape out_shape = kept;
    if (!keepdim) {
        out_shape.clear();
        for (std::size_t i = 0; i < x.rank(); ++i)
            if (i != axis) out_shape.push_back(x.shape()[i]);
        if (out_shape.empty()) out_shape = {1};
    }
    auto xn = x.node();
    return Tensor<T>::make_op(out_shape, std::move(out), {x}, [xn, argmax](TensorNode<T>& self) {
        xn->ensure_grad();
        for (std::size_t o = 0; o < self.data.size(); ++o) xn->grad[argmax[o]] += self.grad[o];
    });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    auto xn = x.node();
    return Tensor<T>::make_op(std::move(new_shape), std::vector<T>(x.data()), {x},
                              [xn](TensorNode<T>& self) {
                                  xn->ensure_grad();
                                  for (std::size_t i = 0; i < self.data.size(); ++i)
                                      xn->grad[i] += self.grad[i];
                              });
}

// Permutes axes; materializes the result.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::vector<std::size_t> perm) {
    if (perm.size() != x.rank()) throw ShapeError("transpose: perm rank mismatch");
    Shape out_shape(x.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape().at(perm[i]);
    auto in_strides = row_major_strides(x.shape());
    std::vector<std::size_t> gather(x.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) gather[i] = in_strides[perm[i]];
    std::vector<T> out(x.size());
    std::vector<std::size_t> src_of(x.size());
    detail::for_each_index(out_shape, [&](std::size_t flat, const std::vector<std::size_t>& idx) {
        std::size_t src = detail::dot_index(idx, gather);
        out[flat] = x.data()[src];
        src_of[flat] = src;
    });
    auto xn = x.node();
    return Tensor<T>::make_op(out_shape, std::move(out), {x}, [xn, src_of](TensorNode<T>& self) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) xn->grad[src_of[i]] += self.grad[i];
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Shape out_shape = parts[0].shape();
    if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
    std::size_t total = parts[0].shape()[axis];
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != out_shape[i])
                throw ShapeError("concat extent mismatch at axis " + std::to_string(i));
        total += s[axis];
    }
    out_shape[axis] = total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

    std::vector<T> out(numel(out_shape));
    std::vector<std::size_t> extents;
    for (auto& p : parts) extents.push_back(p.shape()[axis]);
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        std::size_t e = extents[p];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(parts[p].data().begin() + o * e * inner, e * inner,
                        out.begin() + (o * total + off) * inner);
        off += e;
    }
    std::vector<std::shared_ptr<TensorNode<T>>> pnodes;
    for (auto& p : parts) pnodes.push_back(p.node());
    return Tensor<T>::make_op(
        out_shape, std::move(out), parts,
        [pnodes, extents, outer, inner, total](TensorNode<T>& self) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < pnodes.size(); ++p) {
                auto& n = pnodes[p];
                std::size_t e = extents[p];
                n->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < e * inner; ++i)
                        n->grad[o * e * inner + i] += self.grad[(o * total + off) * inner + i];
                off += e;
            }
        });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, std::size_t parts) {
    if (axis >= x.rank()) throw ShapeError("split axis out of range");
    std::size_t e = x.shape()[axis];
    if (parts == 0 || e % parts != 0)
        throw ShapeError("split: extent " + std::to_string(e) + " not divisible by " +
                         std::to_string(parts));
    std::size_t part_e = e / parts;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];

    std::vector<Tensor<T>> out;
    auto xn = x.node();
    for (std::size_t p = 0; p < parts; ++p) {
        Shape s = x.shape();
        s[axis] = part_e;
        std::vector<T> vals(numel(s));
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.data().begin() + (o * e + p * part_e) * inner, part_e * inner,
                        vals.begin() + o * part_e * inner);
        std::size_t off = p * part_e;
        out.push_back(Tensor<T>::make_op(
            s, std::move(vals), {x}, [xn, off, outer, inner, part_e, e](TensorNode<T>& self) {
                xn->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < part_e * inner; ++i)
                        xn->grad[(o * e + off) * inner + i] += self.grad[o * part_e * inner + i];
            }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matmul (rank 2, or rank 3 batched; a rank-2 operand broadcasts over batch)

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    auto interpret = [](const Shape& s) -> std::array<std::size_t, 3> {
        if (s.size() == 2) return {1, s[0], s[1]};
        if (s.size() == 3) return {s[0], s[1], s[2]};
        throw ShapeError("matmul expects rank 2 or 3, got " + shape_str(s));
    };
    auto [ba, m, ka] = interpret(a.shape());
    auto [bb, kb, n] = interpret(b.shape());
    if (ka != kb)
        throw ShapeError("matmul inner extents: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::size_t batch = std::max(ba, bb);
    if (ba != bb && ba != 1 && bb != 1) throw ShapeError("matmul batch mismatch");
    std::size_t k = ka;

    std::vector<T> out(batch * m * n, T(0));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* A = ad + (ba == 1 ? 0 : bi * m * k);
        const T* B = bd + (bb == 1 ? 0 : bi * k * n);
        T* C = out.data() + bi * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                T av = A[i * k + p];
                for (std::size_t j = 0; j < n; ++j) C[i * n + j] += av * B[p * n + j];
            }
    }
    Shape out_shape = (a.rank() == 2 && b.rank() == 2) ? Shape{m, n} : Shape{batch, m, n};
    auto an = a.node();
    auto bn = b.node();
    std::size_t ba_ = ba, bb_ = bb;
    return Tensor<T>::make_op(
        out_shape, std::move(out), {a, b},
        [an, bn, batch, m, n, k, ba_, bb_](TensorNode<T>& self) {
            an->ensure_grad();
            bn->ensure_grad();
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const T* A = an->data.data() + (ba_ == 1 ? 0 : bi * m * k);
                const T* B = bn->data.data() + (bb_ == 1 ? 0 : bi * k * n);
                T* dA = an->grad.data() + (ba_ == 1 ? 0 : bi * m * k);
                T* dB = bn->grad.data() + (bb_ == 1 ? 0 : bi * k * n);
                const T* dC = self.grad.data() + bi * m * n;
                // dA = dC * B^T ; dB = A^T * dC
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        T g = dC[i * n + j];
                        for (std::size_t p = 0; p < k; ++p) {
                            dA[i * k + p] += g * B[p * n + j];
                            dB[p * n + j] += A[i * k + p] * g;
                        }
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Softmax (max-subtracted) along one axis

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) throw ShapeError("softmax axis out of range");
    std::size_t e = x.shape()[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];

    std::vector<T> out(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < e; ++j)
                mx = std::max(mx, x.data()[(o * e + j) * inner + in]);
            T denom = T(0);
            for (std::size_t j = 0; j < e; ++j) {
                T v = std::exp(x.data()[(o * e + j) * inner + in] - mx);
                out[(o * e + j) * inner + in] = v;
                denom += v;
            }
            for (std::size_t j = 0; j < e; ++j) out[(o * e + j) * inner + in] /= denom;
        }
    auto xn = x.node();
    return Tensor<T>::make_op(
        x.shape(), std::move(out), {x}, [xn, e, outer, inner](TensorNode<T>& self) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    T dot = T(0);
                    for (std::size_t j = 0; j < e; ++j) {
                        std::size_t ix = (o * e + j) * inner + in;
                        dot += self.grad[ix] * self.data[ix];
                    }
                    for (std::size_t j = 0; j < e; ++j) {
                        std::size_t ix = (o * e + j) * inner + in;
                        xn->grad[ix] += self.data[ix] * (self.grad[ix] - dot);
                    }
                }
        });
}

}  // namespace aggrnet
