#pragma once

// Feature Extraction and Aggregation module. FEM scores every element of
// the input map with fused spatial+channel attention and segregates it
// into informative / non-informative halves around a learnable threshold;
// FAM runs contrast cross-attention (Q = info + ninfo, K = info - ninfo,
// V = info) over spatial tokens; a residual skip closes the module.

#include "aggrnet/attention.hpp"

namespace aggrnet {

enum class MaskMode {
    Hard,  // binary indicator, zero gradient into scores and tau
    Soft,  // sigmoid(kappa * (S - tau)), fully differentiable
    Ste    // hard forward, soft backward
};

inline MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "hard") return MaskMode::Hard;
    if (s == "soft") return MaskMode::Soft;
    if (s == "ste") return MaskMode::Ste;
    throw ConfigError("unknown mask mode: " + s);
}

inline std::string to_string(MaskMode m) {
    switch (m) {
        case MaskMode::Hard: return "hard";
        case MaskMode::Soft: return "soft";
        default: return "ste";
    }
}

template <typename T>
struct FeaState {
    SpatialAttentionParams<T> sa;
    ChannelAttentionParams<T> ca;
    Tensor<T> tau;    // scalar, learnable, init 0.5
    T kappa = T(10);  // soft-mask temperature, not learnable

    static FeaState init(std::size_t channels, Rng& rng, std::size_t sa_kernel = 7,
                         std::size_t ca_reduction = 16, T kappa = T(10)) {
        FeaState s;
        s.sa = SpatialAttentionParams<T>::init(rng, sa_kernel);
        s.ca = ChannelAttentionParams<T>::init(channels, rng, ca_reduction);
        s.tau = Tensor<T>::scalar(T(0.5), true);
        s.kappa = kappa;
        return s;
    }
};

template <typename T>
struct SegregatedFeatures {
    Tensor<T> x_info;
    Tensor<T> x_ninfo;
    Tensor<T> scores;   // S = sigmoid(SA + CA), (N,C,H,W)
    Tensor<T> w_info;   // in [0,1]
    Tensor<T> w_ninfo;  // 1 - w_info
};

// Binary indicator [S >= tau] as a constant leaf (the indicator has zero
// derivative almost everywhere, so no gradient flows into S or tau).
template <typename T>
Tensor<T> hard_mask(const Tensor<T>& scores, T tau) {
    std::vector<T> w(scores.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = scores.data()[i] >= tau ? T(1) : T(0);
    return Tensor<T>::from_data(scores.shape(), std::move(w));
}

template <typename T>
SegregatedFeatures<T> fem_forward(const Tensor<T>& x, const FeaState<T>& p,
                                  MaskMode mode = MaskMode::Soft) {
    Tensor<T> sa_logits = spatial_attention(x, p.sa);    // (N,1,H,W)
    Tensor<T> ca_logits = channel_attention(x, p.ca);    // (N,C,1,1)
    Tensor<T> scores = sigmoid(add(sa_logits, ca_logits));  // broadcast to (N,C,H,W)

    SegregatedFeatures<T> seg;
    seg.scores = scores;
    if (mode == MaskMode::Hard) {
        seg.w_info = hard_mask(scores, p.tau.item());
    } else {
        Tensor<T> soft = sigmoid(mul_scalar(sub(scores, p.tau), p.kappa));
        if (mode == MaskMode::Ste) {
            // hard values riding on the soft gradient path
            Tensor<T> delta = sub(hard_mask(scores, p.tau.item()), soft.detach());
            seg.w_info = add(soft, delta);
        } else {
            seg.w_info = soft;
        }
    }
    seg.w_ninfo = add_scalar(neg(seg.w_info), T(1));
    seg.x_info = mul(seg.w_info, x);
    seg.x_ninfo = mul(seg.w_ninfo, x);
    return seg;
}

// (N,C,H,W) -> (N, T=H*W, d=C) spatial tokens.
template <typename T>
Tensor<T> tokenize(const Tensor<T>& x) {
    std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    return transpose(reshape(x, {N, C, H * W}), {0, 2, 1});
}

template <typename T>
Tensor<T> untokenize(const Tensor<T>& tokens, std::size_t H, std::size_t W) {
    std::size_t N = tokens.extent(0), C = tokens.extent(2);
    return reshape(transpose(tokens, {0, 2, 1}), {N, C, H, W});
}

// Fault-injection hook for the verification suite: flips the key to
// info + ninfo, which breaks the contrast expansion identity.
struct FamOptions {
    bool mutate_key_sign = false;
};

template <typename T>
Tensor<T> fam_forward(const SegregatedFeatures<T>& seg, const FamOptions& opt = {}) {
    std::size_t H = seg.x_info.extent(2), W = seg.x_info.extent(3);
    Tensor<T> q = tokenize(add(seg.x_info, seg.x_ninfo));
    Tensor<T> k = opt.mutate_key_sign ? tokenize(add(seg.x_info, seg.x_ninfo))
                                      : tokenize(sub(seg.x_info, seg.x_ninfo));
    Tensor<T> v = tokenize(seg.x_info);
    return untokenize(scaled_dot_attention(q, k, v), H, W);
}

template <typename T>
Tensor<T> fea_forward(const Tensor<T>& x, const FeaState<T>& p, MaskMode mode = MaskMode::Soft) {
    return add(fam_forward(fem_forward(x, p, mode)), x);
}

// Max absolute deviation between Q K^T and its four-term expansion
// I I^T - I N^T + N I^T - N N^T, over token matrices I and N.
template <typename T>
T qk_contrast_expansion_check(const Tensor<T>& x_info, const Tensor<T>& x_ninfo,
                              const FamOptions& opt = {}) {
    if (x_info.shape() != x_ninfo.shape())
        throw ShapeError("qk_contrast_expansion_check: shape mismatch");
    Tensor<T> ti = tokenize(x_info.detach());
    Tensor<T> tn = tokenize(x_ninfo.detach());
    Tensor<T> q = add(ti, tn);
    Tensor<T> k = opt.mutate_key_sign ? add(ti, tn) : sub(ti, tn);
    Tensor<T> lhs = matmul(q, transpose(k, {0, 2, 1}));
    auto gram = [](const Tensor<T>& a, const Tensor<T>& b) {
        return matmul(a, transpose(b, {0, 2, 1}));
    };
    Tensor<T> rhs = add(sub(gram(ti, ti), gram(ti, tn)), sub(gram(tn, ti), gram(tn, tn)));
    T dev = T(0);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        dev = std::max(dev, std::abs(lhs.data()[i] - rhs.data()[i]));
    return dev;
}

}  // namespace aggrnet
