#pragma once

// Self-contained property suite behind the `verify` command: gradient
// checks, segregation invariants, the contrast expansion identity (with a
// fault-injection probe), attention contracts, and metric cross-checks
// against brute-force recomputation.

#include "aggrnet/gradcheck.hpp"
#include "aggrnet/trainer.hpp"

namespace aggrnet {

struct CheckResult {
    std::string name;
    bool pass;
    std::string detail;
};

namespace verify_detail {

inline void check(std::vector<CheckResult>& out, const std::string& name, bool pass,
                  const std::string& detail = "") {
    out.push_back({name, pass, detail});
}

inline void grad(std::vector<CheckResult>& out, const std::string& name,
                 const std::function<Tensor<double>()>& f, Tensor<double>& x, double tol = 1e-4,
                 int max_coords = -1) {
    double err = grad_check(f, x, 1e-5, max_coords);
    check(out, "grad/" + name, err <= tol, "max rel err " + std::to_string(err));
}

}  // namespace verify_detail

inline std::vector<CheckResult> run_verification(std::uint64_t seed = 42) {
    using verify_detail::check;
    using verify_detail::grad;
    using D = double;
    std::vector<CheckResult> out;
    Rng rng(seed);

    // --- elementwise / core op gradients, three shapes each
    for (int rep = 0; rep < 3; ++rep) {
        std::size_t a = 2 + rng.uniform_int(3), b = 2 + rng.uniform_int(3);
        Tensor<D> x = rng.normal_tensor<D>({a, b});
        Tensor<D> y = rng.normal_tensor<D>({a, 1});
        std::string tag = "#" + std::to_string(rep);
        grad(out, "add_broadcast" + tag, [&] { return sum(add(x, y)); }, x);
        grad(out, "mul" + tag, [&] { return sum(mul(x, x)); }, x);
        grad(out, "sigmoid" + tag, [&] { return sum(sigmoid(x)); }, x);
        grad(out, "silu" + tag, [&] { return sum(silu(x)); }, x);
        grad(out, "softmax" + tag, [&] { return sum(mul(softmax(x, 1), y)); }, x);
        Tensor<D> m = rng.normal_tensor<D>({b, a});
        grad(out, "matmul" + tag, [&] { return sum(matmul(x, m)); }, x);
    }
    {
        Tensor<D> x = rng.normal_tensor<D>({2, 3, 6, 6});
        Tensor<D> w = rng.normal_tensor<D>({4, 3, 3, 3});
        Tensor<D> bias = rng.normal_tensor<D>({4});
        grad(out, "conv2d/x", [&] { return sum(conv2d(x, w, bias, 2, 1)); }, x);
        grad(out, "conv2d/w", [&] { return sum(conv2d(x, w, bias, 2, 1)); }, w);
        grad(out, "maxpool2d", [&] { return sum(maxpool2d(x, 2, 2)); }, x);
        grad(out, "global_pools",
             [&] { return sum(add(global_avg_pool(x), global_max_pool(x))); }, x);
        grad(out, "split_concat",
             [&] {
                 auto parts = split(x, 1, 3);
                 return sum(mul(concat(parts, 1), x));
             },
             x);
    }

    // --- composite block gradients
    for (int rep = 0; rep < 3; ++rep) {
        std::string tag = "#" + std::to_string(rep);
        std::size_t C = 4 + 2 * rep, H = 3 + rep;
        Tensor<D> x = rng.normal_tensor<D>({2, C, H, H});
        auto ca = ChannelAttentionParams<D>::init(C, rng, 2, 2);
        auto sa = SpatialAttentionParams<D>::init(rng, 3);
        grad(out, "channel_attention" + tag, [&] { return sum(channel_attention(x, ca)); }, x);
        grad(out, "spatial_attention" + tag, [&] { return sum(spatial_attention(x, sa)); }, x);
        Tensor<D> q = rng.normal_tensor<D>({2, 3, 4}), k = rng.normal_tensor<D>({2, 3, 4}),
                  v = rng.normal_tensor<D>({2, 3, 4});
        grad(out, "scaled_dot_attention" + tag,
             [&] { return sum(scaled_dot_attention(q, k, v)); }, q);

        auto fea = FeaState<D>::init(C, rng, 3, 2);
        grad(out, "fem_soft" + tag,
             [&] {
                 auto seg = fem_forward(x, fea, MaskMode::Soft);
                 return sum(add(seg.x_info, mul(seg.x_ninfo, seg.x_ninfo)));
             },
             x);
        grad(out, "fam" + tag,
             [&] { return sum(fam_forward(fem_forward(x, fea, MaskMode::Soft))); }, x);
        grad(out, "fea" + tag, [&] { return sum(fea_forward(x, fea, MaskMode::Soft)); }, x);
        grad(out, "fea/tau" + tag, [&] { return sum(fea_forward(x, fea, MaskMode::Soft)); },
             fea.tau);

        auto cb = ConvBlock<D>::init(C, C, 3, 1, rng);
        grad(out, "conv_block" + tag, [&] { return sum(cb.forward(x, true)); }, x);
        auto c3 = C3K2<D>::init(C, C, 1, rng);
        grad(out, "c3k2" + tag, [&] { return sum(c3.forward(x, true)); }, x);
        auto sp = SPPF<D>::init(C, C, rng);
        grad(out, "sppf" + tag, [&] { return sum(sp.forward(x, true)); }, x);
        auto pca = C2PCA<D>::init(C, rng);
        grad(out, "c2pca" + tag, [&] { return sum(pca.forward(x, true)); }, x);
        auto psa = C2PSA<D>::init(C, rng);
        grad(out, "c2psa" + tag, [&] { return sum(psa.forward(x, true)); }, x);
    }

    // --- full toy model + cross-entropy, sampled coordinates
    {
        ModelConfig cfg;
        cfg.stage_widths = {4, 4, 8, 8, 8};
        cfg.stage_depths = {1, 1, 1, 1};
        cfg.fea_positions = {1, 2, 3};
        cfg.use_sppf = true;
        cfg.num_classes = 3;
        cfg.input_size = 8;
        cfg.sa_kernel = 3;
        auto model = build_model<D>(cfg, rng);
        Tensor<D> x = rng.uniform_tensor<D>({2, 3, 8, 8}, 0.0, 1.0);
        std::vector<std::int64_t> labels = {0, 2};
        auto loss = [&] { return cross_entropy(model.forward(x, true, MaskMode::Soft), labels); };
        grad(out, "model_ce/input", loss, x, 1e-4, 40);
        for (auto& [name, t] : model.parameters()) {
            if (name == "stem.w" || name == "fea1.tau" || name == "c2pca.ca.w1" ||
                name == "head.w" || name == "stage4.c3k2.cv1.w")
                grad(out, "model_ce/" + name, loss, t, 1e-4, 25);
        }
    }

    // --- segregation invariants
    {
        bool comp_ok = true, sum_ok = true, disjoint_ok = true, mono_ok = true;
        for (int trial = 0; trial < 1000 && (comp_ok && sum_ok && disjoint_ok && mono_ok);
             ++trial) {
            std::size_t C = 2 + rng.uniform_int(4), H = 2 + rng.uniform_int(3);
            Tensor<D> x = rng.normal_tensor<D>({1, C, H, H});
            auto fea = FeaState<D>::init(C, rng, 3, 2);
            fea.tau.data()[0] = rng.uniform(0.2, 0.8);
            MaskMode mode = trial % 2 ? MaskMode::Hard : MaskMode::Soft;
            auto seg = fem_forward(x, fea, mode);
            for (std::size_t i = 0; i < x.size(); ++i) {
                double w_sum = seg.w_info.data()[i] + seg.w_ninfo.data()[i];
                double tol = mode == MaskMode::Hard ? 0.0 : 1e-6;
                if (std::abs(w_sum - 1.0) > tol) comp_ok = false;
                if (std::abs(seg.x_info.data()[i] + seg.x_ninfo.data()[i] - x.data()[i]) > 1e-5)
                    sum_ok = false;
                if (mode == MaskMode::Hard &&
                    seg.x_info.data()[i] * seg.x_ninfo.data()[i] != 0.0)
                    disjoint_ok = false;
            }
            double tau0 = fea.tau.data()[0];
            fea.tau.data()[0] = std::min(0.99, tau0 + 0.1);
            auto seg_hi = fem_forward(x, fea, mode);
            for (std::size_t i = 0; i < x.size(); ++i)
                if (seg_hi.w_info.data()[i] > seg.w_info.data()[i] + 1e-12) mono_ok = false;
        }
        check(out, "segregation/complementarity", comp_ok);
        check(out, "segregation/sum_restores_input", sum_ok);
        check(out, "segregation/hard_disjoint_support", disjoint_ok);
        check(out, "segregation/monotone_in_tau", mono_ok);
    }

    // --- contrast expansion identity + fault injection
    {
        double worst = 0;
        for (int trial = 0; trial < 100; ++trial) {
            Tensor<D> xi = rng.normal_tensor<D>({1, 3, 3, 3});
            Tensor<D> xn = rng.normal_tensor<D>({1, 3, 3, 3});
            worst = std::max(worst, qk_contrast_expansion_check(xi, xn));
        }
        check(out, "qk_identity/f64", worst <= 1e-10, "max dev " + std::to_string(worst));
        FamOptions mutated;
        mutated.mutate_key_sign = true;
        Tensor<D> xi = rng.normal_tensor<D>({1, 3, 3, 3});
        Tensor<D> xn = rng.normal_tensor<D>({1, 3, 3, 3});
        double dev = qk_contrast_expansion_check(xi, xn, mutated);
        check(out, "qk_identity/mutation_detected", dev > 1e-6,
              "mutated dev " + std::to_string(dev));
    }

    // --- attention contracts
    {
        bool rows_ok = true, hull_ok = true;
        for (int trial = 0; trial < 50; ++trial) {
            std::size_t Tn = 2 + rng.uniform_int(4), d = 1 + rng.uniform_int(4);
            Tensor<D> q = rng.normal_tensor<D>({1, Tn, d}, 0, trial % 5 == 0 ? 1000.0 : 1.0);
            Tensor<D> k = rng.normal_tensor<D>({1, Tn, d});
            Tensor<D> v = rng.normal_tensor<D>({1, Tn, d});
            Tensor<D> w = attention_weights(q, k);
            for (std::size_t i = 0; i < Tn; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < Tn; ++j) {
                    double wij = w.data()[i * Tn + j];
                    if (wij < 0) rows_ok = false;
                    s += wij;
                }
                if (std::abs(s - 1.0) > 1e-6) rows_ok = false;
            }
            Tensor<D> o = scaled_dot_attention(q, k, v);
            for (std::size_t i = 0; i < Tn; ++i)
                for (std::size_t c = 0; c < d; ++c) {
                    double lo = 1e300, hi = -1e300;
                    for (std::size_t j = 0; j < Tn; ++j) {
                        lo = std::min(lo, v.data()[j * d + c]);
                        hi = std::max(hi, v.data()[j * d + c]);
                    }
                    double val = o.data()[i * d + c];
                    if (val < lo - 1e-9 || val > hi + 1e-9) hull_ok = false;
                }
        }
        check(out, "attention/rows_are_probability_vectors", rows_ok);
        check(out, "attention/output_in_convex_hull_of_v", hull_ok);
    }

    // --- metric cross-checks against brute force
    {
        bool ok = true;
        std::string why;
        for (int trial = 0; trial < 1000 && ok; ++trial) {
            std::size_t K = 2 + rng.uniform_int(4);
            std::size_t N = 2 + rng.uniform_int(49);
            std::vector<std::int64_t> t(N), p(N);
            for (auto& v : t) v = std::int64_t(rng.uniform_int(K));
            for (auto& v : p) v = std::int64_t(rng.uniform_int(K));
            // brute-force accuracy and MAE
            double acc_bf = 0, mae_bf = 0;
            for (std::size_t i = 0; i < N; ++i) {
                acc_bf += t[i] == p[i];
                mae_bf += std::abs(double(t[i]) - double(p[i]));
            }
            acc_bf /= double(N);
            mae_bf /= double(N);
            auto cm = confusion_matrix(t, p, K);
            if (std::abs(accuracy(cm) - acc_bf) > 1e-9) { ok = false; why = "accuracy"; }
            if (std::abs(mae(t, p) - mae_bf) > 1e-9) { ok = false; why = "mae"; }
            // brute-force QWK straight from the definition
            double o_sum = 0, e_sum = 0;
            for (std::size_t ck = 0; ck < K; ++ck)
                for (std::size_t cj = 0; cj < K; ++cj) {
                    double w = std::pow(double(ck) - double(cj), 2) / std::pow(K - 1.0, 2);
                    double obs = 0, row = 0, col = 0;
                    for (std::size_t i = 0; i < N; ++i) {
                        obs += (std::size_t(t[i]) == ck && std::size_t(p[i]) == cj);
                        row += std::size_t(t[i]) == ck;
                        col += std::size_t(p[i]) == cj;
                    }
                    o_sum += w * obs;
                    e_sum += w * row * col / double(N);
                }
            double qwk_bf = e_sum == 0 ? 1.0 : 1.0 - o_sum / e_sum;
            if (std::abs(qwk(t, p, K) - qwk_bf) > 1e-9) { ok = false; why = "qwk"; }
        }
        check(out, "metrics/brute_force_agreement", ok, why);
        std::vector<std::int64_t> same = {0, 1, 2, 1, 3};
        check(out, "metrics/qwk_self_agreement", qwk(same, same, 4) == 1.0);
    }

    return out;
}

}  // namespace aggrnet
