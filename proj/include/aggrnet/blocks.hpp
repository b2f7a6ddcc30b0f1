#pragma once

// Backbone building blocks: ConvBlock (conv + batch norm + SiLU), the
// C3K2 cross-stage partial block, SPPF pyramid pooling, and the two
// final-stage attention blocks (C2PSA baseline, C2PCA).

#include "aggrnet/fea.hpp"

namespace aggrnet {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
struct BatchNorm {
    Tensor<T> gamma, beta;              // learnable
    Tensor<T> running_mean, running_var;  // buffers
    T eps = T(1e-5);
    T momentum = T(0.1);

    static BatchNorm init(std::size_t channels) {
        BatchNorm bn;
        bn.gamma = Tensor<T>::ones({channels}, true);
        bn.beta = Tensor<T>::zeros({channels}, true);
        bn.running_mean = Tensor<T>::zeros({channels});
        bn.running_var = Tensor<T>::ones({channels});
        return bn;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) const {
        std::size_t C = x.extent(1);
        Tensor<T> g = reshape(gamma, {1, C, 1, 1});
        Tensor<T> b = reshape(beta, {1, C, 1, 1});
        if (train) {
            Tensor<T> m = mean(x, {0, 2, 3}, true);
            Tensor<T> centered = sub(x, m);
            Tensor<T> var = mean(mul(centered, centered), {0, 2, 3}, true);
            Tensor<T> xhat = div(centered, sqrt(add_scalar(var, eps)));
            // running stats track the detached batch statistics
            for (std::size_t c = 0; c < C; ++c) {
                auto& rm = const_cast<Tensor<T>&>(running_mean).data();
                auto& rv = const_cast<Tensor<T>&>(running_var).data();
                rm[c] = (T(1) - momentum) * rm[c] + momentum * m.data()[c];
                rv[c] = (T(1) - momentum) * rv[c] + momentum * var.data()[c];
            }
            return add(mul(xhat, g), b);
        }
        Tensor<T> rm = reshape(running_mean.detach(), {1, C, 1, 1});
        Tensor<T> rv = reshape(running_var.detach(), {1, C, 1, 1});
        Tensor<T> xhat = div(sub(x, rm), sqrt(add_scalar(rv, eps)));
        return add(mul(xhat, g), b);
    }

    void collect(const std::string& p, NamedTensors<T>& params, NamedTensors<T>& buffers) {
        params.emplace_back(p + ".gamma", gamma);
        params.emplace_back(p + ".beta", beta);
        buffers.emplace_back(p + ".running_mean", running_mean);
        buffers.emplace_back(p + ".running_var", running_var);
    }
};

// conv2d -> batch norm -> SiLU
template <typename T>
struct ConvBlock {
    Tensor<T> w, b;
    BatchNorm<T> bn;
    std::size_t stride = 1, pad = 0;

    static ConvBlock init(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                          Rng& rng) {
        ConvBlock cb;
        cb.w = rng.kaiming_tensor<T>({out, in, k, k}, in * k * k, true);
        // the batch norm shift (beta) is the block's learnable bias; a conv
        // bias here would be cancelled by the normalization and never train
        cb.b = Tensor<T>::zeros({out}, false);
        cb.bn = BatchNorm<T>::init(out);
        cb.stride = stride;
        cb.pad = k / 2;
        return cb;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) const {
        return silu(bn.forward(conv2d(x, w, b, stride, pad), train));
    }

    std::size_t in_channels() const { return w.extent(1); }
    std::size_t out_channels() const { return w.extent(0); }

    void collect(const std::string& p, NamedTensors<T>& params, NamedTensors<T>& buffers) {
        params.emplace_back(p + ".w", w);
        buffers.emplace_back(p + ".b", b);
        bn.collect(p + ".bn", params, buffers);
    }
};

// Two 3x3 ConvBlocks with a residual skip (width-preserving).
template <typename T>
struct Bottleneck {
    ConvBlock<T> cv1, cv2;

    static Bottleneck init(std::size_t width, Rng& rng) {
        Bottleneck b;
        b.cv1 = ConvBlock<T>::init(width, width, 3, 1, rng);
        b.cv2 = ConvBlock<T>::init(width, width, 3, 1, rng);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) const {
        return add(cv2.forward(cv1.forward(x, train), train), x);
    }

    void collect(const std::string& p, NamedTensors<T>& params, NamedTensors<T>& buffers) {
        cv1.collect(p + ".cv1", params, buffers);
        cv2.collect(p + ".cv2", params, buffers);
    }
};

// Cross-stage partial block: 1x1 conv, channel split, a bottleneck chain on
// one half with every intermediate kept, concat, 1x1 conv out.
template <typename T>
struct C3K2 {
    ConvBlock<T> cv1, cv2;
    std::vector<Bottleneck<T>> bottlenecks;

    static C3K2 init(std::size_t in, std::size_t out, std::size_t n, Rng& rng) {
        if (out % 2 != 0) throw ConfigError("c3k2 width must be even, got " + std::to_string(out));
        C3K2 c;
        c.cv1 = ConvBlock<T>::init(in, out, 1, 1, rng);
        for (std::size_t i = 0; i < n; ++i)
            c.bottlenecks.push_back(Bottleneck<T>::init(out / 2, rng));
        c.cv2 = ConvBlock<T>::init((2 + n) * (out / 2), out, 1, 1, rng);
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) const {
        auto halves = split(cv1.forward(x, train), 1, 2);
        std::vector<Tensor<T>> branches = {halves[0], halves[1]};
        for (const auto& m : bottlenecks) branches.push_back(m.forward(branches.back(), train));
        return cv2.forward(concat(branches, 1), train);
    }

    void collect(const std::string& p, NamedTensors<T>& params, NamedTensors<T>& buffers) {
        cv1.collect(p + ".cv1", params, buffers);
        for (std::size_t i = 0; i < bottlenecks.size(); ++i)
            bottlenecks[i].collect(p + ".m" + std::to_string(i), params, buffers);
        cv2.collect(p + ".cv2", params, buffers);
    }
};

// Spatial pyramid pooling (fast): three chained 5x5 stride-1 maxpools,
// concatenated with the unpooled map.
template <typename T>
struct SPPF {
    ConvBlock<T> cv1, cv2;

    static SPPF init(std::size_t in, std::size_t out, Rng& rng) {
        if (in % 2 != 0) throw ConfigError("sppf input width must be even");
        SPPF s;
        s.cv1 = ConvBlock<T>::init(in, in / 2, 1, 1, rng);
        s.cv2 = ConvBlock<T>::init(2 * in, out, 1, 1, rng);
        return s;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) const {
        Tensor<T> y = cv1.forward(x, train);
        Tensor<T> p1 = maxpool2d(y, 5, 1, 2);
        Tensor<T> p2 = maxpool2d(p1, 5, 1, 2);
        Tensor<T> p3 = maxpool2d(p2, 5, 1, 2);
        return cv2.forward(concat<T>({y, p1, p2, p3}, 1), train);
    }

    void collect(const std::string& p, NamedTensors<T>& params, NamedTensors<T>& buffers) {
        cv1.collect(p + ".cv1", params, buffers);
        cv2.collect(p + ".cv2", params, buffers);
    }
};

// Plain 1x1 conv pair with SiLU between; the FFN of the attention blocks.
template <typename T>
struct Ffn {
    Tensor<T> w1, b1, w2, b2;

    static Ffn init(std::size_t width, std::size_t expansion, Rng& rng) {
        Ffn f;
        std::size_t hidden = width * expansion;
        f.w1 = rng.kaiming_tensor<T>({hidden, width, 1, 1}, width, true);
        f.b1 = Tensor<T>::zeros({hidden}, true);
        f.w2 = rng.kaiming_tensor<T>({width, hidden, 1, 1}, hidden, true);
        f.b2 = Tensor<T>::zeros({width}, true);
        return f;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return conv2d(silu(conv2d(x, w1, b1)), w2, b2);
    }

    void collect(const std::string& p, NamedTensors<T>& params) {
        params.emplace_back(p + ".w1", w1);
        params.emplace_back(p + ".b1", b1);
        params.emplace_back(p + ".w2", w2);
        params.emplace_back(p + ".b2", b2);
    }
};

// Cross-stage partial with channel attention. Doubles channels with a 1x1
// expansion, keeps the left half intact, refines the right half with a
// sigmoid-gated channel attention and an FFN, each behind a residual.
template <typename T>
struct C2PCA {
    ConvBlock<T> expand;
    ChannelAttentionParams<T> ca;
    Ffn<T> ffn;

    static C2PCA init(std::size_t in, Rng& rng, std::size_t ffn_expansion = 2) {
        C2PCA c;
        c.expand = ConvBlock<T>::init(in, 2 * in, 1, 1, rng);
        c.ca = ChannelAttentionParams<T>::init(in, rng);
        c.ffn = Ffn<T>::init(in, ffn_expansion, rng);
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) const {
        Tensor<T> expanded = expand.forward(x, train);
        auto halves = split(expanded, 1, 2);
        const Tensor<T>& xa = halves[0];
        const Tensor<T>& xb = halves[1];
        Tensor<T> gate = sigmoid(channel_attention(xb, ca));  // (N,C,1,1)
        Tensor<T> att = mul(gate, xb);
        Tensor<T> res1 = add(xb, att);
        Tensor<T> xb_out = add(res1, ffn.forward(res1));
        return concat<T>({xa, xb_out}, 1);
    }

    std::size_t out_channels() const { return expand.out_channels(); }

    void collect(const std::string& p, NamedTensors<T>& params, NamedTensors<T>& buffers) {
        expand.collect(p + ".expand", params, buffers);
        params.emplace_back(p + ".ca.w1", ca.mlp_w1);
        params.emplace_back(p + ".ca.w2", ca.mlp_w2);
        ffn.collect(p + ".ffn", params);
    }
};

// Baseline cross-stage partial with spatial-token self-attention on the
// right half; kept for the ablation grid.
template <typename T>
struct C2PSA {
    ConvBlock<T> expand;
    Tensor<T> wq, bq, wk, bk, wv, bv;  // 1x1 projections
    Ffn<T> ffn;

    static C2PSA init(std::size_t in, Rng& rng, std::size_t ffn_expansion = 2) {
        C2PSA c;
        c.expand = ConvBlock<T>::init(in, 2 * in, 1, 1, rng);
        auto proj = [&](Tensor<T>& w, Tensor<T>& b) {
            w = rng.kaiming_tensor<T>({in, in, 1, 1}, in, true);
            b = Tensor<T>::zeros({in}, true);
        };
        proj(c.wq, c.bq);
        proj(c.wk, c.bk);
        proj(c.wv, c.bv);
        c.ffn = Ffn<T>::init(in, ffn_expansion, rng);
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) const {
        Tensor<T> expanded = expand.forward(x, train);
        auto halves = split(expanded, 1, 2);
        const Tensor<T>& xa = halves[0];
        const Tensor<T>& xb = halves[1];
        std::size_t H = xb.extent(2), W = xb.extent(3);
        Tensor<T> q = tokenize(conv2d(xb, wq, bq));
        Tensor<T> k = tokenize(conv2d(xb, wk, bk));
        Tensor<T> v = tokenize(conv2d(xb, wv, bv));
        Tensor<T> att = untokenize(scaled_dot_attention(q, k, v), H, W);
        Tensor<T> res1 = add(xb, att);
        Tensor<T> xb_out = add(res1, ffn.forward(res1));
        return concat<T>({xa, xb_out}, 1);
    }

    std::size_t out_channels() const { return expand.out_channels(); }

    void collect(const std::string& p, NamedTensors<T>& params, NamedTensors<T>& buffers) {
        expand.collect(p + ".expand", params, buffers);
        params.emplace_back(p + ".wq", wq);
        params.emplace_back(p + ".bq", bq);
        params.emplace_back(p + ".wk", wk);
        params.emplace_back(p + ".bk", bk);
        params.emplace_back(p + ".wv", wv);
        params.emplace_back(p + ".bv", bv);
        ffn.collect(p + ".ffn", params);
    }
};

}  // namespace aggrnet
