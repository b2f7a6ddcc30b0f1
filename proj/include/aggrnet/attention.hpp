#pragma once

// CBAM-style channel and spatial attention, plus single-head scaled
// dot-product attention. Both attention maps are returned as pre-sigmoid
// logits; callers gate where their formulation demands it.

#include "aggrnet/nn_ops.hpp"
#include "aggrnet/random.hpp"

namespace aggrnet {

template <typename T>
struct ChannelAttentionParams {
    Tensor<T> mlp_w1;  // (C/r, C)
    Tensor<T> mlp_w2;  // (C, C/r)
    std::size_t reduction = 16;

    static ChannelAttentionParams init(std::size_t channels, Rng& rng, std::size_t reduction = 16,
                                       std::size_t min_hidden = 4) {
        std::size_t hidden = std::max<std::size_t>(min_hidden, channels / reduction);
        hidden = std::min(hidden, channels);
        ChannelAttentionParams p;
        p.reduction = reduction;
        p.mlp_w1 = rng.kaiming_tensor<T>({hidden, channels}, channels, true);
        p.mlp_w2 = rng.kaiming_tensor<T>({channels, hidden}, hidden, true);
        return p;
    }

    std::size_t channels() const { return mlp_w1.extent(1); }
};

template <typename T>
struct SpatialAttentionParams {
    Tensor<T> conv_w;  // (1, 2, k, k), k odd
    Tensor<T> conv_b;  // (1)

    static SpatialAttentionParams init(Rng& rng, std::size_t k = 7) {
        if (k % 2 == 0) throw ConfigError("spatial attention kernel must be odd");
        SpatialAttentionParams p;
        p.conv_w = rng.kaiming_tensor<T>({1, 2, k, k}, 2 * k * k, true);
        p.conv_b = Tensor<T>::zeros({1}, true);
        return p;
    }

    std::size_t kernel() const { return conv_w.extent(2); }
};

// Shared-MLP channel attention over global avg + max pools; returns
// pre-sigmoid logits of shape (N,C,1,1).
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const ChannelAttentionParams<T>& p) {
    if (x.rank() != 4) throw ShapeError("channel_attention expects NCHW");
    std::size_t N = x.extent(0), C = x.extent(1);
    if (C != p.channels())
        throw ShapeError("channel_attention: input C=" + std::to_string(C) + " vs params C=" +
                         std::to_string(p.channels()));
    auto w1t = transpose(p.mlp_w1, {1, 0});
    auto w2t = transpose(p.mlp_w2, {1, 0});
    auto mlp = [&](const Tensor<T>& pooled) {  // (N,C) -> (N,C)
        return matmul(relu(matmul(pooled, w1t)), w2t);
    };
    Tensor<T> avg = reshape(global_avg_pool(x), {N, C});
    Tensor<T> mx = reshape(global_max_pool(x), {N, C});
    return reshape(add(mlp(avg), mlp(mx)), {N, C, 1, 1});
}

// Circular spatial padding, used by the translation-consistency test mode.
template <typename T>
Tensor<T> circular_pad2d(const Tensor<T>& x, std::size_t pad) {
    std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    std::size_t Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<T> out(N * C * Hp * Wp);
    std::vector<std::size_t> src_of(out.size());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < Hp; ++i)
                for (std::size_t j = 0; j < Wp; ++j) {
                    std::size_t si = (H * pad + i - pad) % H;
                    std::size_t sj = (W * pad + j - pad) % W;
                    std::size_t d = ((n * C + c) * Hp + i) * Wp + j;
                    std::size_t s = ((n * C + c) * H + si) * W + sj;
                    out[d] = x.data()[s];
                    src_of[d] = s;
                }
    auto xn = x.node();
    return Tensor<T>::make_op(Shape{N, C, Hp, Wp}, std::move(out), {x},
                              [xn, src_of](TensorNode<T>& self) {
                                  xn->ensure_grad();
                                  for (std::size_t i = 0; i < self.data.size(); ++i)
                                      xn->grad[src_of[i]] += self.grad[i];
                              });
}

// k x k conv over stacked channel-mean / channel-max; returns pre-sigmoid
// logits of shape (N,1,H,W). Circular padding preserves exact translation
// equivariance for the property tests; zero padding is the training default.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const SpatialAttentionParams<T>& p,
                            bool circular = false) {
    if (x.rank() != 4) throw ShapeError("spatial_attention expects NCHW");
    Tensor<T> avg = mean(x, {1}, true);
    Tensor<T> mx = reduce_max(x, 1, true);
    Tensor<T> stacked = concat<T>({avg, mx}, 1);
    std::size_t pad = (p.kernel() - 1) / 2;
    if (circular) return conv2d(circular_pad2d(stacked, pad), p.conv_w, p.conv_b, 1, 0);
    return conv2d(stacked, p.conv_w, p.conv_b, 1, pad);
}

// softmax(Q K^T / sqrt(d)) V over (N,T,d); softmax runs along the key axis.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
        throw ShapeError("scaled_dot_attention expects (N,T,d)");
    if (q.shape() != k.shape() || q.shape() != v.shape())
        throw ShapeError("scaled_dot_attention: Q/K/V extents differ");
    T scale = T(1) / T(std::sqrt(double(q.extent(2))));
    Tensor<T> scores = mul_scalar(matmul(q, transpose(k, {0, 2, 1})), scale);
    Tensor<T> weights = softmax(scores, 2);
    return matmul(weights, v);
}

// Attention weight matrix alone, for tests that inspect the rows.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k) {
    T scale = T(1) / T(std::sqrt(double(q.extent(2))));
    return softmax(mul_scalar(matmul(q, transpose(k, {0, 2, 1})), scale), 2);
}

}  // namespace aggrnet
