#pragma once

// AGGRNet assembly: stem, four downsampling C3K2 stages, FEA modules after
// the deepest stages, optional SPPF, a final C2PCA/C2PSA block, and a
// linear classifier head.

#include <map>
#include <optional>
#include <set>

#include <json.hpp>

#include "aggrnet/blocks.hpp"

namespace aggrnet {

enum class AttentionBlock { C2PSA, C2PCA };

inline AttentionBlock attention_block_from_string(const std::string& s) {
    if (s == "c2psa" || s == "C2PSA") return AttentionBlock::C2PSA;
    if (s == "c2pca" || s == "C2PCA") return AttentionBlock::C2PCA;
    throw ConfigError("unknown attention block: " + s);
}

inline std::string to_string(AttentionBlock b) {
    return b == AttentionBlock::C2PSA ? "c2psa" : "c2pca";
}

struct ModelConfig {
    std::vector<std::size_t> stage_widths = {16, 32, 64, 128, 256};  // stem + 4 stages
    std::vector<std::size_t> stage_depths = {1, 1, 1, 1};            // C3K2 bottlenecks per stage
    std::set<int> fea_positions = {};  // subset of {1,2,3}; 1 = deepest stage
    AttentionBlock attention_block = AttentionBlock::C2PCA;
    bool use_sppf = true;
    std::size_t num_classes = 4;
    std::size_t input_size = 32;  // H = W
    std::size_t sa_kernel = 7;
    double kappa = 10.0;  // soft-mask temperature

    void validate() const {
        if (stage_widths.size() != 5) throw ConfigError("stage_widths must list 5 entries");
        if (stage_depths.size() != 4) throw ConfigError("stage_depths must list 4 entries");
        for (std::size_t w : stage_widths)
            if (w == 0) throw ConfigError("stage widths must be positive");
        for (int p : fea_positions)
            if (p < 1 || p > 3) throw ConfigError("fea_positions must be within {1,2,3}");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (input_size < 8) throw ConfigError("input_size must be >= 8");
        if (sa_kernel % 2 == 0) throw ConfigError("sa_kernel must be odd");
    }

    static ModelConfig toy_preset() { return ModelConfig{}; }

    static ModelConfig full_preset() {
        ModelConfig c;
        c.stage_widths = {64, 128, 256, 512, 1024};
        c.stage_depths = {3, 3, 3, 3};
        c.fea_positions = {1, 2, 3};
        c.attention_block = AttentionBlock::C2PCA;
        c.use_sppf = true;
        c.input_size = 224;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"stage_widths", c.stage_widths},
                       {"stage_depths", c.stage_depths},
                       {"fea_positions", std::vector<int>(c.fea_positions.begin(), c.fea_positions.end())},
                       {"attention_block", to_string(c.attention_block)},
                       {"use_sppf", c.use_sppf},
                       {"num_classes", c.num_classes},
                       {"input_size", c.input_size},
                       {"sa_kernel", c.sa_kernel},
                       {"kappa", c.kappa}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = ModelConfig{};
    if (j.contains("stage_widths")) j.at("stage_widths").get_to(c.stage_widths);
    if (j.contains("stage_depths")) j.at("stage_depths").get_to(c.stage_depths);
    if (j.contains("fea_positions")) {
        std::vector<int> v = j.at("fea_positions").get<std::vector<int>>();
        c.fea_positions = std::set<int>(v.begin(), v.end());
    }
    if (j.contains("attention_block"))
        c.attention_block = attention_block_from_string(j.at("attention_block").get<std::string>());
    if (j.contains("use_sppf")) j.at("use_sppf").get_to(c.use_sppf);
    if (j.contains("num_classes")) j.at("num_classes").get_to(c.num_classes);
    if (j.contains("input_size")) j.at("input_size").get_to(c.input_size);
    if (j.contains("sa_kernel")) j.at("sa_kernel").get_to(c.sa_kernel);
    if (j.contains("kappa")) j.at("kappa").get_to(c.kappa);
}

template <typename T>
struct AggrNet {
    ModelConfig cfg;
    ConvBlock<T> stem;
    std::vector<ConvBlock<T>> downs;  // one per stage
    std::vector<C3K2<T>> stages;
    std::map<int, FeaState<T>> fea;  // keyed by position (1..3)
    std::optional<SPPF<T>> sppf;
    std::optional<C2PCA<T>> c2pca;
    std::optional<C2PSA<T>> c2psa;
    Tensor<T> fc_w, fc_b;

    std::size_t head_width() const { return 2 * cfg.stage_widths[4]; }

    // Stage number (1..4 past the stem) carrying FEA @pos: position 1 sits
    // after the deepest stage, positions 2 and 3 one and two stages up.
    static std::size_t fea_stage(int pos) { return std::size_t(5 - pos); }

    Tensor<T> forward(const Tensor<T>& x, bool train, MaskMode mode = MaskMode::Hard) const {
        if (x.rank() != 4 || x.extent(1) != 3)
            throw ShapeError("model input must be (N,3,H,W), got " + shape_str(x.shape()));
        if (x.extent(2) != cfg.input_size || x.extent(3) != cfg.input_size)
            throw ShapeError("model expects " + std::to_string(cfg.input_size) + "x" +
                             std::to_string(cfg.input_size) + " input");
        Tensor<T> h = stem.forward(x, train);
        for (std::size_t s = 1; s <= 4; ++s) {
            h = stages[s - 1].forward(downs[s - 1].forward(h, train), train);
            for (const auto& [pos, state] : fea)
                if (fea_stage(pos) == s) h = fea_forward(h, state, mode);
        }
        if (sppf) h = sppf->forward(h, train);
        if (c2pca) h = c2pca->forward(h, train);
        if (c2psa) h = c2psa->forward(h, train);
        std::size_t N = h.extent(0);
        Tensor<T> pooled = reshape(global_avg_pool(h), {N, head_width()});
        return add(matmul(pooled, fc_w), reshape(fc_b, {1, cfg.num_classes}));
    }

    NamedTensors<T> parameters() {
        NamedTensors<T> params, buffers;
        collect(params, buffers);
        return params;
    }

    NamedTensors<T> named_buffers() {
        NamedTensors<T> params, buffers;
        collect(params, buffers);
        return buffers;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& [name, t] : parameters()) n += t.size();
        return n;
    }

    void collect(NamedTensors<T>& params, NamedTensors<T>& buffers) {
        stem.collect("stem", params, buffers);
        for (std::size_t s = 0; s < 4; ++s) {
            std::string p = "stage" + std::to_string(s + 1);
            downs[s].collect(p + ".down", params, buffers);
            stages[s].collect(p + ".c3k2", params, buffers);
        }
        for (auto& [pos, state] : fea) {
            std::string p = "fea" + std::to_string(pos);
            params.emplace_back(p + ".sa.conv_w", state.sa.conv_w);
            params.emplace_back(p + ".sa.conv_b", state.sa.conv_b);
            params.emplace_back(p + ".ca.w1", state.ca.mlp_w1);
            params.emplace_back(p + ".ca.w2", state.ca.mlp_w2);
            params.emplace_back(p + ".tau", state.tau);
        }
        if (sppf) sppf->collect("sppf", params, buffers);
        if (c2pca) c2pca->collect("c2pca", params, buffers);
        if (c2psa) c2psa->collect("c2psa", params, buffers);
        params.emplace_back("head.w", fc_w);
        params.emplace_back("head.b", fc_b);
    }
};

template <typename T>
AggrNet<T> build_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    AggrNet<T> m;
    m.cfg = cfg;
    const auto& w = cfg.stage_widths;
    m.stem = ConvBlock<T>::init(3, w[0], 3, 2, rng);
    for (std::size_t s = 0; s < 4; ++s) {
        m.downs.push_back(ConvBlock<T>::init(w[s], w[s + 1], 3, 2, rng));
        m.stages.push_back(C3K2<T>::init(w[s + 1], w[s + 1], cfg.stage_depths[s], rng));
    }
    for (int pos : cfg.fea_positions) {
        std::size_t stage_width = w[AggrNet<T>::fea_stage(pos)];  // widths[s] = stage s output
        m.fea.emplace(pos, FeaState<T>::init(stage_width, rng, cfg.sa_kernel, 16, T(cfg.kappa)));
    }
    if (cfg.use_sppf) m.sppf = SPPF<T>::init(w[4], w[4], rng);
    if (cfg.attention_block == AttentionBlock::C2PCA)
        m.c2pca = C2PCA<T>::init(w[4], rng);
    else
        m.c2psa = C2PSA<T>::init(w[4], rng);
    m.fc_w = rng.kaiming_tensor<T>({m.head_width(), cfg.num_classes}, m.head_width(), true);
    m.fc_b = Tensor<T>::zeros({cfg.num_classes}, true);
    return m;
}

}  // namespace aggrnet
