#pragma once

// SGD training loop (momentum + coupled weight decay), model evaluation,
// and the checkpoint archive: magic "AGCK", u64 manifest length, JSON
// manifest (names, shapes, offsets, configs, epoch, RNG state), then
// concatenated AGT1 tensor records.

#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "aggrnet/data.hpp"
#include "aggrnet/metrics.hpp"
#include "aggrnet/model.hpp"
#include "aggrnet/nn_ops.hpp"

namespace aggrnet {

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.937;
    double weight_decay = 5e-4;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    MaskMode mask_mode = MaskMode::Soft;  // masks used while training
    double tau_min = 0.01, tau_max = 0.99;

    void validate() const {
        if (lr <= 0) throw ConfigError("lr must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
        if (batch_size == 0) throw ConfigError("batch_size must be > 0");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"momentum", c.momentum},
                       {"weight_decay", c.weight_decay},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"mask_mode", to_string(c.mask_mode)}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    if (j.contains("lr")) j.at("lr").get_to(c.lr);
    if (j.contains("momentum")) j.at("momentum").get_to(c.momentum);
    if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
    if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("mask_mode"))
        c.mask_mode = mask_mode_from_string(j.at("mask_mode").get<std::string>());
}

// v <- momentum * v + g + wd * w ; w <- w - lr * v   (classical, coupled)
template <typename T>
void sgd_step(Tensor<T>& w, const std::vector<T>& grad, Tensor<T>& velocity,
              const TrainConfig& tc) {
    auto& wd = w.data();
    auto& vd = velocity.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
        T g = grad[i] + T(tc.weight_decay) * wd[i];
        vd[i] = T(tc.momentum) * vd[i] + g;
        wd[i] -= T(tc.lr) * vd[i];
    }
}

struct TrainHistoryRow {
    std::size_t epoch;
    double loss, accuracy, qwk, mae;
};

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& images, const std::vector<std::size_t>& idx) {
    std::size_t C = images.extent(1), H = images.extent(2), W = images.extent(3);
    std::size_t per = C * H * W;
    Tensor<T> out({idx.size(), C, H, W});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(images.data().begin() + idx[i] * per, per, out.data().begin() + i * per);
    return out;
}

template <typename T>
struct Trainer {
    AggrNet<T>* model;
    TrainConfig tc;
    Rng rng;
    std::size_t epoch = 0;
    NamedTensors<T> params;
    std::map<std::string, Tensor<T>> velocity;
    std::map<std::string, double> cumulative_grad;  // sum of |g| per parameter

    Trainer(AggrNet<T>& m, TrainConfig config) : model(&m), tc(config), rng(config.seed) {
        tc.validate();
        params = m.parameters();
        for (auto& [name, t] : params) velocity.emplace(name, Tensor<T>::zeros(t.shape()));
    }

    TrainHistoryRow run_epoch(const Dataset<T>& ds) {
        std::vector<std::size_t> order(ds.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order.begin(), order.end());

        double loss_sum = 0;
        std::size_t batches = 0;
        std::vector<std::int64_t> truth, pred;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + std::min(order.size(),
                                                                  start + tc.batch_size));
            Tensor<T> batch = slice_batch(ds.images, idx);
            std::vector<std::int64_t> labels;
            for (std::size_t i : idx) labels.push_back(ds.labels[i]);

            for (auto& [name, t] : params) t.zero_grad();
            Tensor<T> logits = model->forward(batch, true, tc.mask_mode);
            Tensor<T> loss = cross_entropy(logits, labels);
            if (!std::isfinite(double(loss.item())))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
            loss.backward();
            for (auto& [name, t] : params) {
                double gsum = 0;
                for (T g : t.grad()) gsum += std::abs(double(g));
                cumulative_grad[name] += gsum;
                sgd_step(t, t.grad(), velocity.at(name), tc);
                if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".tau") == 0)
                    for (auto& v : t.data())
                        v = std::min(T(tc.tau_max), std::max(T(tc.tau_min), v));
            }
            loss_sum += double(loss.item());
            ++batches;
            std::size_t K = model->cfg.num_classes;
            for (std::size_t n = 0; n < idx.size(); ++n) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < K; ++k)
                    if (logits.data()[n * K + k] > logits.data()[n * K + best]) best = k;
                truth.push_back(labels[n]);
                pred.push_back(std::int64_t(best));
            }
        }
        ++epoch;
        auto cm = confusion_matrix(truth, pred, model->cfg.num_classes);
        TrainHistoryRow row;
        row.epoch = epoch;
        row.loss = loss_sum / double(batches);
        row.accuracy = accuracy(cm);
        row.qwk = qwk(truth, pred, model->cfg.num_classes);
        row.mae = mae(truth, pred);
        return row;
    }

    std::vector<TrainHistoryRow> train(const Dataset<T>& ds, std::size_t n_epochs) {
        ds.validate();
        if (ds.num_classes() != model->cfg.num_classes)
            throw ConfigError("dataset has " + std::to_string(ds.num_classes()) +
                              " classes, model expects " + std::to_string(model->cfg.num_classes));
        std::vector<TrainHistoryRow> history;
        for (std::size_t e = 0; e < n_epochs; ++e) history.push_back(run_epoch(ds));
        return history;
    }
};

// Single deterministic pass in eval mode with hard masks.
template <typename T>
EvalReport evaluate(const AggrNet<T>& model, const Dataset<T>& ds, std::size_t batch_size = 32) {
    ds.validate();
    std::size_t K = model.cfg.num_classes;
    if (ds.num_classes() != K)
        throw ConfigError("dataset class count " + std::to_string(ds.num_classes()) +
                          " does not match model " + std::to_string(K));
    std::vector<std::int64_t> pred;
    std::vector<std::vector<double>> scores;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i)
            idx.push_back(i);
        Tensor<T> logits = model.forward(slice_batch(ds.images, idx), false, MaskMode::Hard);
        for (std::size_t n = 0; n < idx.size(); ++n) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k)
                mx = std::max(mx, double(logits.data()[n * K + k]));
            double denom = 0;
            std::vector<double> p(K);
            for (std::size_t k = 0; k < K; ++k) {
                p[k] = std::exp(double(logits.data()[n * K + k]) - mx);
                denom += p[k];
            }
            std::size_t best = 0;
            for (std::size_t k = 0; k < K; ++k) {
                p[k] /= denom;
                if (p[k] > p[best]) best = k;
            }
            scores.push_back(std::move(p));
            pred.push_back(std::int64_t(best));
        }
    }
    return make_report(ds.labels, pred, scores, K);
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace ckpt {

constexpr char kMagic[4] = {'A', 'G', 'C', 'K'};

template <typename T>
void save(const std::string& path, AggrNet<T>& model, const TrainConfig* tc = nullptr,
          const Trainer<T>* trainer = nullptr) {
    NamedTensors<T> params, buffers;
    model.collect(params, buffers);

    struct Record {
        std::string name, kind;
        const Tensor<T>* tensor;
    };
    std::vector<Record> records;
    for (auto& [n, t] : params) records.push_back({n, "param", &t});
    for (auto& [n, t] : buffers) records.push_back({n, "buffer", &t});
    if (trainer)
        for (auto& [n, t] : trainer->velocity) records.push_back({n, "velocity", &t});

    // lay out records to compute offsets
    std::ostringstream blob(std::ios::binary);
    nlohmann::json manifest;
    manifest["format"] = "aggrnet-checkpoint-v1";
    manifest["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
    manifest["model_config"] = model.cfg;
    if (tc) manifest["train_config"] = *tc;
    manifest["epoch"] = trainer ? trainer->epoch : 0;
    if (trainer) manifest["rng_state"] = trainer->rng.state();
    nlohmann::json tensors = nlohmann::json::array();
    for (auto& r : records) {
        nlohmann::json e;
        e["name"] = r.name;
        e["kind"] = r.kind;
        e["shape"] = r.tensor->shape();
        e["offset"] = std::size_t(blob.tellp());
        tensors.push_back(e);
        agt1::write_tensor(blob, *r.tensor);
    }
    manifest["tensors"] = tensors;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for write: " + path);
    os.write(kMagic, 4);
    std::string mj = manifest.dump();
    agt1::write_u64_le(os, mj.size());
    os.write(mj.data(), std::streamsize(mj.size()));
    std::string b = blob.str();
    os.write(b.data(), std::streamsize(b.size()));
    if (!os) throw DataError("checkpoint write failed: " + path);
}

template <typename T>
struct Loaded {
    AggrNet<T> model;
    TrainConfig train_config;
    bool has_train_config = false;
    std::size_t epoch = 0;
    std::string rng_state;
    std::map<std::string, Tensor<T>> velocity;
};

template <typename T>
Loaded<T> load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IntegrityError("checkpoint magic mismatch: " + path);
    std::uint64_t mlen = agt1::read_u64_le(is);
    std::string mj(mlen, '\0');
    is.read(mj.data(), std::streamsize(mlen));
    if (!is) throw IntegrityError("checkpoint manifest truncated");
    nlohmann::json manifest = nlohmann::json::parse(mj, nullptr, false);
    if (manifest.is_discarded()) throw IntegrityError("checkpoint manifest is not valid JSON");
    std::string want_dtype = sizeof(T) == 4 ? "f32" : "f64";
    if (manifest.at("dtype").get<std::string>() != want_dtype)
        throw IntegrityError("checkpoint dtype " + manifest.at("dtype").get<std::string>() +
                             ", reader expects " + want_dtype);

    Loaded<T> out;
    ModelConfig cfg = manifest.at("model_config").get<ModelConfig>();
    Rng scratch(0);
    out.model = build_model<T>(cfg, scratch);
    if (manifest.contains("train_config")) {
        out.train_config = manifest.at("train_config").get<TrainConfig>();
        out.has_train_config = true;
    }
    out.epoch = manifest.at("epoch").get<std::size_t>();
    if (manifest.contains("rng_state")) out.rng_state = manifest.at("rng_state").get<std::string>();

    NamedTensors<T> params, buffers;
    out.model.collect(params, buffers);
    std::map<std::string, Tensor<T>*> by_name;
    for (auto& [n, t] : params) by_name[n] = &t;
    for (auto& [n, t] : buffers) by_name[n] = &t;

    std::streampos records_start = is.tellg();
    for (const auto& e : manifest.at("tensors")) {
        std::string name = e.at("name").get<std::string>();
        std::string kind = e.at("kind").get<std::string>();
        is.seekg(records_start + std::streampos(e.at("offset").get<std::size_t>()));
        Tensor<T> t = agt1::read_tensor<T>(is);
        if (kind == "velocity") {
            out.velocity.emplace(name, std::move(t));
            continue;
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IntegrityError("checkpoint names unknown tensor " + name);
        if (it->second->shape() != t.shape())
            throw IntegrityError("checkpoint tensor " + name + " shape " + shape_str(t.shape()) +
                                 " does not match model " + shape_str(it->second->shape()));
        it->second->data() = t.data();
    }
    return out;
}

// Rebuild a trainer mid-run from a loaded checkpoint.
template <typename T>
Trainer<T> resume(AggrNet<T>& model, const Loaded<T>& loaded) {
    if (!loaded.has_train_config) throw IntegrityError("checkpoint lacks a train config");
    Trainer<T> tr(model, loaded.train_config);
    tr.epoch = loaded.epoch;
    if (!loaded.rng_state.empty()) tr.rng.restore(loaded.rng_state);
    for (auto& [name, v] : loaded.velocity) {
        auto it = tr.velocity.find(name);
        if (it == tr.velocity.end())
            throw IntegrityError("checkpoint velocity names unknown parameter " + name);
        it->second.data() = v.data();
    }
    return tr;
}

}  // namespace ckpt

}  // namespace aggrnet
