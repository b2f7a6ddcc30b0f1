// aggrnet command line: train / eval / ablate / verify / inspect.
//
// Exit codes: 0 ok, 1 verification failure, 2 config error, 3 data error,
// 4 numeric divergence, 5 integrity error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "aggrnet/trainer.hpp"
#include "aggrnet/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aggrnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIntegrity = 5;

struct DataSpec {
    std::string path;  // bundle directory; empty means synthetic
    std::size_t classes = 4, per_class = 32, size = 32;
    std::uint64_t seed = 1;
    double difficulty = 0.0;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataSpec dataset;
    std::string out_dir = ".";
    std::size_t checkpoint_every = 10;
};

void reject_unknown(const json& j, const std::vector<std::string>& known,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
}

DataSpec parse_dataspec(const json& j) {
    DataSpec d;
    reject_unknown(j, {"path", "classes", "per_class", "size", "seed", "difficulty"}, "dataset");
    if (j.contains("path")) j.at("path").get_to(d.path);
    if (j.contains("classes")) j.at("classes").get_to(d.classes);
    if (j.contains("per_class")) j.at("per_class").get_to(d.per_class);
    if (j.contains("size")) j.at("size").get_to(d.size);
    if (j.contains("seed")) j.at("seed").get_to(d.seed);
    if (j.contains("difficulty")) j.at("difficulty").get_to(d.difficulty);
    return d;
}

RunConfig parse_run_config(const json& j) {
    reject_unknown(j, {"model", "train", "dataset", "out_dir", "checkpoint_every"}, "config root");
    RunConfig rc;
    if (j.contains("model")) {
        reject_unknown(j.at("model"),
                       {"stage_widths", "stage_depths", "fea_positions", "attention_block",
                        "use_sppf", "num_classes", "input_size", "sa_kernel", "kappa"},
                       "model");
        rc.model = j.at("model").get<ModelConfig>();
    }
    if (j.contains("train")) {
        reject_unknown(j.at("train"),
                       {"lr", "momentum", "weight_decay", "epochs", "batch_size", "seed",
                        "mask_mode"},
                       "train");
        rc.train = j.at("train").get<TrainConfig>();
    }
    if (j.contains("dataset")) rc.dataset = parse_dataspec(j.at("dataset"));
    if (j.contains("out_dir")) j.at("out_dir").get_to(rc.out_dir);
    if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(rc.checkpoint_every);
    rc.model.validate();
    rc.train.validate();
    return rc;
}

// Applies `--set a.b.c=value` onto the raw config JSON; the value is parsed
// as JSON when possible, otherwise kept as a string.
void apply_override(json& root, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
    std::string path = kv.substr(0, eq), value = kv.substr(eq + 1);
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    json* cur = &root;
    std::size_t pos = 0;
    while (true) {
        auto dot = path.find('.', pos);
        std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (dot == std::string::npos) {
            (*cur)[key] = parsed;
            break;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

json load_config_json(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
    json raw = json::object();
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file: " + config_path);
        raw = json::parse(is, nullptr, false);
        if (raw.is_discarded()) throw ConfigError("config file is not valid JSON: " + config_path);
    }
    for (const auto& kv : overrides) apply_override(raw, kv);
    return raw;
}

template <typename T>
Dataset<T> resolve_dataset(const DataSpec& d) {
    if (!d.path.empty()) {
        if (!fs::exists(d.path)) throw DataError("dataset path does not exist: " + d.path);
        return load_dataset<T>(d.path);
    }
    return generate_synthetic<T>(d.classes, d.per_class, d.size, d.size, d.seed, d.difficulty);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

json report_to_json(const EvalReport& r) {
    json j;
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = r.macro_f1;
    j["macro_precision"] = r.macro_precision;
    j["macro_recall"] = r.macro_recall;
    j["qwk"] = r.qwk;
    j["mae"] = r.mae;
    j["auc"] = r.auc;
    j["confusion"] = r.confusion;
    json pc = json::array();
    for (const auto& c : r.per_class)
        pc.push_back({{"precision", c.precision},
                      {"recall", c.recall},
                      {"f1", c.f1},
                      {"present", c.present}});
    j["per_class"] = pc;
    j["warnings"] = r.warnings;
    return j;
}

void print_report(const EvalReport& r) {
    std::printf("%-16s %s\n", "accuracy", fmt(r.accuracy).c_str());
    std::printf("%-16s %s\n", "macro_f1", fmt(r.macro_f1).c_str());
    std::printf("%-16s %s\n", "macro_precision", fmt(r.macro_precision).c_str());
    std::printf("%-16s %s\n", "macro_recall", fmt(r.macro_recall).c_str());
    std::printf("%-16s %s\n", "qwk", fmt(r.qwk).c_str());
    std::printf("%-16s %s\n", "mae", fmt(r.mae).c_str());
    std::printf("%-16s %s\n", "auc", fmt(r.auc).c_str());
    std::printf("confusion (rows = true):\n");
    for (const auto& row : r.confusion) {
        for (std::size_t v : row) std::printf(" %6zu", v);
        std::printf("\n");
    }
    std::printf("%-6s %-10s %-10s %-10s\n", "class", "precision", "recall", "f1");
    for (std::size_t k = 0; k < r.per_class.size(); ++k)
        std::printf("%-6zu %-10.6f %-10.6f %-10.6f\n", k, r.per_class[k].precision,
                    r.per_class[k].recall, r.per_class[k].f1);
    for (const auto& w : r.warnings) std::printf("warning: %s\n", w.c_str());
}

template <typename T>
void write_history_csv(const std::string& path, const std::vector<TrainHistoryRow>& history) {
    std::ofstream os(path);
    os << "epoch,loss,accuracy,qwk,mae\n";
    for (const auto& row : history)
        os << row.epoch << "," << fmt(row.loss) << "," << fmt(row.accuracy) << ","
           << fmt(row.qwk) << "," << fmt(row.mae) << "\n";
}

template <typename T>
int run_train(const RunConfig& rc) {
    fs::create_directories(rc.out_dir);
    Dataset<T> ds = resolve_dataset<T>(rc.dataset);
    Rng rng(rc.train.seed);
    auto model = build_model<T>(rc.model, rng);
    Trainer<T> trainer(model, rc.train);
    std::vector<TrainHistoryRow> history;
    for (std::size_t e = 0; e < rc.train.epochs; ++e) {
        history.push_back(trainer.run_epoch(ds));
        const auto& row = history.back();
        std::printf("epoch %zu loss %s acc %s\n", row.epoch, fmt(row.loss).c_str(),
                    fmt(row.accuracy).c_str());
        if (rc.checkpoint_every && (e + 1) % rc.checkpoint_every == 0 && e + 1 < rc.train.epochs)
            ckpt::save(rc.out_dir + "/epoch_" + std::to_string(e + 1) + ".ckpt", model,
                       &rc.train, &trainer);
    }
    write_history_csv<T>(rc.out_dir + "/history.csv", history);
    ckpt::save(rc.out_dir + "/final.ckpt", model, &rc.train, &trainer);
    std::printf("wrote %s/history.csv and %s/final.ckpt\n", rc.out_dir.c_str(),
                rc.out_dir.c_str());
    return kExitOk;
}

template <typename T>
int run_eval(const std::string& ckpt_path, const std::string& dataset_dir,
             const std::string& out_dir) {
    auto loaded = ckpt::load<T>(ckpt_path);
    Dataset<T> ds = load_dataset<T>(dataset_dir);
    EvalReport rep = evaluate(loaded.model, ds);
    print_report(rep);
    fs::create_directories(out_dir);
    std::ofstream os(out_dir + "/report.json");
    os << report_to_json(rep).dump(2) << "\n";
    return kExitOk;
}

template <typename T>
int run_ablate(const RunConfig& rc) {
    struct Variant {
        std::string label;
        AttentionBlock block;
        std::set<int> fea;
        bool sppf;
    };
    const std::vector<Variant> grid = {
        {"YOLOv11 classification backbone with C2PSA", AttentionBlock::C2PSA, {}, false},
        {"YOLOv11 classification backbone with C2PCA", AttentionBlock::C2PCA, {}, false},
        {"YOLOv11 + C2PCA + FEA@1", AttentionBlock::C2PCA, {1}, false},
        {"YOLOv11 + C2PCA + FEA@1,2", AttentionBlock::C2PCA, {1, 2}, false},
        {"YOLOv11 + C2PCA + FEA@1,2,3", AttentionBlock::C2PCA, {1, 2, 3}, false},
        {"AGGRNet/Ours (YOLOv11 + C2PCA + FEA@1,2,3 + SPPF)", AttentionBlock::C2PCA,
         {1, 2, 3}, true},
    };
    fs::create_directories(rc.out_dir);
    Dataset<T> ds = resolve_dataset<T>(rc.dataset);
    std::ofstream csv(rc.out_dir + "/ablation.csv");
    csv << "variant,accuracy,params\n";
    for (const auto& v : grid) {
        try {
            ModelConfig mc = rc.model;
            mc.attention_block = v.block;
            mc.fea_positions = v.fea;
            mc.use_sppf = v.sppf;
            Rng rng(rc.train.seed);
            auto model = build_model<T>(mc, rng);
            Trainer<T> trainer(model, rc.train);
            trainer.train(ds, rc.train.epochs);
            EvalReport rep = evaluate(model, ds);
            csv << "\"" << v.label << "\"," << fmt(rep.accuracy) << ","
                << model.parameter_count() << "\n";
            std::printf("%-55s acc %s params %zu\n", v.label.c_str(),
                        fmt(rep.accuracy).c_str(), model.parameter_count());
        } catch (const std::exception& e) {
            csv << "\"" << v.label << "\",FAILED,FAILED\n";
            std::printf("%-55s FAILED: %s\n", v.label.c_str(), e.what());
        }
    }
    std::printf("wrote %s/ablation.csv\n", rc.out_dir.c_str());
    return kExitOk;
}

int run_verify(std::uint64_t seed) {
    auto results = run_verification(seed);
    std::size_t failed = 0;
    for (const auto& r : results) {
        std::printf("%-4s %-45s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        if (!r.pass) ++failed;
    }
    std::printf("%zu checks, %zu failed\n", results.size(), failed);
    return failed ? kExitVerify : kExitOk;
}

template <typename T>
int run_inspect(const std::string& ckpt_path) {
    auto loaded = ckpt::load<T>(ckpt_path);
    NamedTensors<T> params, buffers;
    loaded.model.collect(params, buffers);
    std::size_t total = 0;
    std::printf("%-28s %-16s %s\n", "name", "shape", "count");
    for (auto& [name, t] : params) {
        std::printf("%-28s %-16s %zu\n", name.c_str(), shape_str(t.shape()).c_str(), t.size());
        total += t.size();
    }
    std::printf("total parameters: %zu\n", total);
    for (auto& [name, t] : params)
        if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".tau") == 0)
            std::printf("%s = %s\n", name.c_str(), fmt(double(t.data()[0])).c_str());
    json cfg = loaded.model.cfg;
    std::printf("config: %s\n", cfg.dump().c_str());
    std::printf("epoch: %zu\n", loaded.epoch);
    return kExitOk;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"AGGRNet medical-image classification toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, dataset_dir;
    std::vector<std::string> overrides;
    bool use_f64 = false;
    std::int64_t seed_flag = -1;

    auto add_common = [&](CLI::App* sub, bool with_config) {
        if (with_config) sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--set", overrides, "dotted-path override, e.g. --set train.lr=0.02");
        sub->add_option("--seed", seed_flag, "override train.seed");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_flag("--float64", use_f64, "run the engine in double precision");
    };

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, true);
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset bundle");
    eval_cmd->add_option("ckpt", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("dataset", dataset_dir, "dataset bundle directory")->required();
    add_common(eval_cmd, false);
    auto* ablate_cmd = app.add_subcommand("ablate", "run the 6-variant ablation grid");
    add_common(ablate_cmd, true);
    auto* verify_cmd = app.add_subcommand("verify", "run the property verification suite");
    add_common(verify_cmd, false);
    auto* inspect_cmd = app.add_subcommand("inspect", "print a checkpoint's parameter manifest");
    inspect_cmd->add_option("ckpt", ckpt_path, "checkpoint file")->required();
    add_common(inspect_cmd, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    auto make_run_config = [&]() {
        json raw = load_config_json(config_path, overrides);
        if (seed_flag >= 0) raw["train"]["seed"] = std::uint64_t(seed_flag);
        if (!out_dir.empty()) raw["out_dir"] = out_dir;
        return parse_run_config(raw);
    };

    if (train_cmd->parsed())
        return use_f64 ? run_train<double>(make_run_config())
                       : run_train<float>(make_run_config());
    if (eval_cmd->parsed()) {
        std::string od = out_dir.empty() ? "." : out_dir;
        return use_f64 ? run_eval<double>(ckpt_path, dataset_dir, od)
                       : run_eval<float>(ckpt_path, dataset_dir, od);
    }
    if (ablate_cmd->parsed())
        return use_f64 ? run_ablate<double>(make_run_config())
                       : run_ablate<float>(make_run_config());
    if (verify_cmd->parsed()) return run_verify(seed_flag >= 0 ? std::uint64_t(seed_flag) : 42);
    if (inspect_cmd->parsed())
        return use_f64 ? run_inspect<double>(ckpt_path) : run_inspect<float>(ckpt_path);
    return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitConfig;
    } catch (const DataError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitNumeric;
    } catch (const IntegrityError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitIntegrity;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
}
