#pragma once

// NCHW convolution, pooling, and the classification loss. Direct loops;
// conv2d forward may shard the batch across threads (results identical to
// the serial path since batch items are independent).

#include <thread>

#include "aggrnet/tensor.hpp"

namespace aggrnet {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
    if (in + 2 * pad < k) throw ShapeError("window larger than padded input");
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1, std::size_t pad = 0) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d expects NCHW input and OIHW weights");
    std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    std::size_t O = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (w.extent(1) != C)
        throw ShapeError("conv2d channels: input " + std::to_string(C) + " vs weight " +
                         std::to_string(w.extent(1)));
    if (b.size() != O) throw ShapeError("conv2d bias extent");
    if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
    std::size_t Ho = conv_out_extent(H, kh, stride, pad);
    std::size_t Wo = conv_out_extent(W, kw, stride, pad);

    std::vector<T> out(N * O * Ho * Wo);
    auto run = [&](std::size_t n0, std::size_t n1) {
        for (std::size_t n = n0; n < n1; ++n)
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        T acc = b.data()[o];
                        for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t i = 0; i < kh; ++i) {
                                std::ptrdiff_t ih = std::ptrdiff_t(oh * stride + i) -
                                                    std::ptrdiff_t(pad);
                                if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
                                for (std::size_t j = 0; j < kw; ++j) {
                                    std::ptrdiff_t iw = std::ptrdiff_t(ow * stride + j) -
                                                        std::ptrdiff_t(pad);
                                    if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
                                    acc += x.data()[((n * C + c) * H + ih) * W + iw] *
                                           w.data()[((o * C + c) * kh + i) * kw + j];
                                }
                            }
                        out[((n * O + o) * Ho + oh) * Wo + ow] = acc;
                    }
    };
    int threads = std::min<int>(max_threads(), int(N));
    if (threads <= 1) {
        run(0, N);
    } else {
        std::vector<std::thread> pool;
        std::size_t chunk = (N + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            std::size_t n0 = t * chunk, n1 = std::min(N, n0 + chunk);
            if (n0 < n1) pool.emplace_back(run, n0, n1);
        }
        for (auto& th : pool) th.join();
    }

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        Shape{N, O, Ho, Wo}, std::move(out), {x, w, b},
        [xn, wn, bn, N, C, H, W, O, kh, kw, Ho, Wo, stride, pad](TensorNode<T>& self) {
            xn->ensure_grad();
            wn->ensure_grad();
            bn->ensure_grad();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t oh = 0; oh < Ho; ++oh)
                        for (std::size_t ow = 0; ow < Wo; ++ow) {
                            T g = self.grad[((n * O + o) * Ho + oh) * Wo + ow];
                            bn->grad[o] += g;
                            for (std::size_t c = 0; c < C; ++c)
                                for (std::size_t i = 0; i < kh; ++i) {
                                    std::ptrdiff_t ih = std::ptrdiff_t(oh * stride + i) -
                                                        std::ptrdiff_t(pad);
                                    if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
                                    for (std::size_t j = 0; j < kw; ++j) {
                                        std::ptrdiff_t iw = std::ptrdiff_t(ow * stride + j) -
                                                            std::ptrdiff_t(pad);
                                        if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
                                        std::size_t xi = ((n * C + c) * H + ih) * W + iw;
                                        std::size_t wi = ((o * C + c) * kh + i) * kw + j;
                                        xn->grad[xi] += g * wn->data[wi];
                                        wn->grad[wi] += g * xn->data[xi];
                                    }
                                }
                        }
        });
}

// Max pooling; padding cells never win. Gradient routes to the first
// (row-major) maximal element of each window.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad = 0) {
    if (x.rank() != 4) throw ShapeError("maxpool2d expects NCHW");
    std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    std::size_t Ho = conv_out_extent(H, k, stride, pad);
    std::size_t Wo = conv_out_extent(W, k, stride, pad);
    std::vector<T> out(N * C * Ho * Wo);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_ix = 0;
                    for (std::size_t i = 0; i < k; ++i) {
                        std::ptrdiff_t ih = std::ptrdiff_t(oh * stride + i) - std::ptrdiff_t(pad);
                        if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
                        for (std::size_t j = 0; j < k; ++j) {
                            std::ptrdiff_t iw = std::ptrdiff_t(ow * stride + j) -
                                                std::ptrdiff_t(pad);
                            if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
                            std::size_t xi = ((n * C + c) * H + ih) * W + iw;
                            if (x.data()[xi] > best) {
                                best = x.data()[xi];
                                best_ix = xi;
                            }
                        }
                    }
                    std::size_t oi = ((n * C + c) * Ho + oh) * Wo + ow;
                    out[oi] = best;
                    argmax[oi] = best_ix;
                }
    auto xn = x.node();
    return Tensor<T>::make_op(Shape{N, C, Ho, Wo}, std::move(out), {x},
                              [xn, argmax](TensorNode<T>& self) {
                                  xn->ensure_grad();
                                  for (std::size_t o = 0; o < self.data.size(); ++o)
                                      xn->grad[argmax[o]] += self.grad[o];
                              });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW");
    return mean(x, {2, 3}, true);
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("global_max_pool expects NCHW");
    return reduce_max(reduce_max(x, 3, true), 2, true);
}

// Mean cross-entropy of logits against integer labels; log-sum-exp stabilized.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int64_t>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects (N,K) logits");
    std::size_t N = logits.extent(0), K = logits.extent(1);
    if (labels.size() != N) throw DataError("cross_entropy: label count mismatch");
    std::vector<T> probs(N * K);
    T loss = T(0);
    for (std::size_t n = 0; n < N; ++n) {
        std::int64_t y = labels[n];
        if (y < 0 || std::size_t(y) >= K)
            throw DataError("label " + std::to_string(y) + " out of range for K=" +
                            std::to_string(K));
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, logits.data()[n * K + j]);
        T denom = T(0);
        for (std::size_t j = 0; j < K; ++j) denom += std::exp(logits.data()[n * K + j] - mx);
        for (std::size_t j = 0; j < K; ++j)
            probs[n * K + j] = std::exp(logits.data()[n * K + j] - mx) / denom;
        loss += -(logits.data()[n * K + y] - mx - std::log(denom));
    }
    loss /= T(N);
    auto ln = logits.node();
    return Tensor<T>::make_op(Shape{1}, {loss}, {logits},
                              [ln, probs, labels, N, K](TensorNode<T>& self) {
                                  ln->ensure_grad();
                                  T g = self.grad[0] / T(N);
                                  for (std::size_t n = 0; n < N; ++n)
                                      for (std::size_t j = 0; j < K; ++j)
                                          ln->grad[n * K + j] +=
                                              g * (probs[n * K + j] -
                                                   (std::size_t(labels[n]) == j ? T(1) : T(0)));
                              });
}

}  // namespace aggrnet
