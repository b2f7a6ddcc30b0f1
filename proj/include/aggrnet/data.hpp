#pragma once

// Dataset container, a class-conditional synthetic image generator, and
// the on-disk bundle: a directory of AGT1 image tensors plus manifest.csv
// (`relative_path,label_index`) and meta.json.

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "aggrnet/random.hpp"
#include "aggrnet/serialize.hpp"

namespace aggrnet {

template <typename T>
struct Dataset {
    Tensor<T> images;  // (N,3,H,W), values in [0,1]
    std::vector<std::int64_t> labels;
    std::vector<std::string> class_names;
    std::string split = "train";

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const { return class_names.size(); }
    std::size_t height() const { return images.extent(2); }
    std::size_t width() const { return images.extent(3); }

    void validate() const {
        if (labels.empty()) throw DataError("dataset is empty");
        if (images.extent(0) != labels.size()) throw DataError("image/label count mismatch");
        for (std::int64_t y : labels)
            if (y < 0 || std::size_t(y) >= num_classes())
                throw DataError("label " + std::to_string(y) + " out of range");
        if (!images.all_finite()) throw DataError("non-finite image values");
    }

    Dataset subset(const std::vector<std::size_t>& indices) const {
        std::size_t C = images.extent(1), H = height(), W = width();
        Dataset out;
        out.images = Tensor<T>({indices.size(), C, H, W});
        out.class_names = class_names;
        out.split = split;
        std::size_t per = C * H * W;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::copy_n(images.data().begin() + indices[i] * per, per,
                        out.images.data().begin() + i * per);
            out.labels.push_back(labels[indices[i]]);
        }
        return out;
    }
};

// Class k gets a Gaussian blob in its own quadrant-ish location, its own
// dominant color channel mix, and a class-specific stripe frequency.
// difficulty scales additive Gaussian noise; 0 keeps classes linearly
// separable up to mild per-sample jitter.
template <typename T>
Dataset<T> generate_synthetic(std::size_t K, std::size_t n_per_class, std::size_t H,
                              std::size_t W, std::uint64_t seed, double difficulty) {
    if (K < 2) throw DataError("generate_synthetic requires K >= 2");
    Rng rng(seed);
    std::size_t N = K * n_per_class;
    Dataset<T> ds;
    ds.images = Tensor<T>({N, 3, H, W});
    ds.labels.resize(N);
    for (std::size_t k = 0; k < K; ++k) ds.class_names.push_back("class_" + std::to_string(k));

    for (std::size_t k = 0; k < K; ++k) {
        double angle = 2.0 * 3.14159265358979323846 * double(k) / double(K);
        double cy = 0.5 + 0.3 * std::sin(angle);
        double cx = 0.5 + 0.3 * std::cos(angle);
        double color[3] = {0.5 + 0.5 * std::cos(angle), 0.5 + 0.5 * std::cos(angle + 2.0),
                           0.5 + 0.5 * std::cos(angle + 4.0)};
        double freq = 2.0 + double(k);
        for (std::size_t s = 0; s < n_per_class; ++s) {
            std::size_t n = k * n_per_class + s;
            ds.labels[n] = std::int64_t(k);
            double amp = rng.uniform(0.85, 1.0);
            double jy = rng.uniform(-0.02, 0.02), jx = rng.uniform(-0.02, 0.02);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) {
                        double y = double(i) / double(H), x = double(j) / double(W);
                        double dy = y - (cy + jy), dx = x - (cx + jx);
                        double blob = std::exp(-(dy * dy + dx * dx) / 0.02);
                        double stripes = 0.1 * std::sin(freq * 2.0 * 3.141592653589793 * y);
                        double v = 0.15 + amp * color[c] * 0.7 * blob + stripes;
                        if (difficulty > 0) v += difficulty * 0.15 * rng.normal();
                        v = std::min(1.0, std::max(0.0, v));
                        ds.images.data()[((n * 3 + c) * H + i) * W + j] = T(v);
                    }
        }
    }
    return ds;
}

template <typename T>
void save_dataset(const Dataset<T>& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.csv");
    if (!manifest) throw DataError("cannot write manifest in " + dir);
    manifest << "# relative_path,label_index\n";
    std::size_t C = ds.images.extent(1), H = ds.height(), W = ds.width();
    std::size_t per = C * H * W;
    for (std::size_t n = 0; n < ds.size(); ++n) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%06zu.agt1", n);
        std::ofstream os(dir + "/" + name, std::ios::binary);
        agt1::write_raw<T>(os, {C, H, W}, ds.images.data().data() + n * per);
        manifest << name << "," << ds.labels[n] << "\n";
    }
    nlohmann::json meta = {{"class_names", ds.class_names},
                           {"num_classes", ds.num_classes()},
                           {"height", H},
                           {"width", W},
                           {"split", ds.split}};
    std::ofstream mj(dir + "/meta.json");
    mj << meta.dump(2) << "\n";
}

template <typename T>
Dataset<T> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::string manifest_path = dir + "/manifest.csv";
    std::ifstream manifest(manifest_path);
    if (!manifest) throw DataError("cannot open manifest: " + manifest_path);
    std::ifstream mj(dir + "/meta.json");
    if (!mj) throw DataError("cannot open meta.json in " + dir);
    nlohmann::json meta = nlohmann::json::parse(mj, nullptr, false);
    if (meta.is_discarded()) throw DataError("malformed meta.json in " + dir);

    Dataset<T> ds;
    ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
    if (meta.contains("split")) ds.split = meta.at("split").get<std::string>();
    std::size_t K = ds.class_names.size();
    std::size_t H = meta.at("height").get<std::size_t>();
    std::size_t W = meta.at("width").get<std::size_t>();

    std::vector<std::string> paths;
    std::string line;
    std::size_t row = 0;
    while (std::getline(manifest, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        auto comma = line.rfind(',');
        if (comma == std::string::npos)
            throw DataError("manifest row " + std::to_string(row) + ": malformed, expected "
                            "`relative_path,label_index`");
        std::string rel = line.substr(0, comma);
        std::int64_t label;
        try {
            label = std::stoll(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw DataError("manifest row " + std::to_string(row) + ": bad label");
        }
        if (label < 0 || std::size_t(label) >= K)
            throw DataError("manifest row " + std::to_string(row) + ": label " +
                            std::to_string(label) + " out of range for K=" + std::to_string(K));
        if (!fs::exists(dir + "/" + rel))
            throw DataError("manifest row " + std::to_string(row) + ": missing file " + rel);
        paths.push_back(rel);
        ds.labels.push_back(label);
    }
    if (paths.empty()) throw DataError("manifest is empty: " + manifest_path);

    ds.images = Tensor<T>({paths.size(), 3, H, W});
    std::size_t per = 3 * H * W;
    for (std::size_t n = 0; n < paths.size(); ++n) {
        Tensor<T> img = agt1::load_tensor<T>(dir + "/" + paths[n]);
        if (img.shape() != Shape{3, H, W})
            throw DataError("image " + paths[n] + " has shape " + shape_str(img.shape()) +
                            ", expected (3," + std::to_string(H) + "," + std::to_string(W) + ")");
        std::copy_n(img.data().begin(), per, ds.images.data().begin() + n * per);
    }
    ds.validate();
    return ds;
}

}  // namespace aggrnet
