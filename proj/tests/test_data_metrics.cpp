#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "aggrnet/data.hpp"
#include "aggrnet/metrics.hpp"

using namespace aggrnet;

namespace {

std::string temp_dir(const std::string& tag) {
    auto d = std::filesystem::temp_directory_path() /
             ("aggrnet_dm_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

// Pair-counting AUC oracle: concordant pairs + half the ties.
double auc_pairs(const std::vector<double>& s, const std::vector<bool>& pos) {
    double num = 0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!pos[i]) continue;
        ++np;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (pos[j]) continue;
            if (s[i] > s[j]) num += 1.0;
            else if (s[i] == s[j]) num += 0.5;
        }
    }
    for (bool p : pos) nn += !p;
    return num / (double(np) * double(nn));
}

// Kappa oracle written from the definition, independent of metrics.hpp.
double qwk_oracle(const std::vector<std::int64_t>& t, const std::vector<std::int64_t>& p,
                  std::size_t K) {
    double n = double(t.size());
    std::vector<std::vector<double>> O(K, std::vector<double>(K, 0));
    std::vector<double> ht(K, 0), hp(K, 0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        O[t[i]][p[i]] += 1;
        ht[t[i]] += 1;
        hp[p[i]] += 1;
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            double w = double((double(i) - double(j)) * (double(i) - double(j))) /
                       double((K - 1) * (K - 1));
            num += w * O[i][j];
            den += w * ht[i] * hp[j] / n;
        }
    return den == 0 ? 1.0 : 1.0 - num / den;
}

}  // namespace

TEST_CASE("synthetic data is deterministic, balanced, and in range") {
    auto a = generate_synthetic<float>(4, 5, 12, 12, 42, 0.3);
    auto b = generate_synthetic<float>(4, 5, 12, 12, 42, 0.3);
    CHECK(a.images.data() == b.images.data());
    CHECK(a.labels == b.labels);

    auto c = generate_synthetic<float>(4, 5, 12, 12, 43, 0.3);
    CHECK(a.images.data() != c.images.data());

    std::vector<std::size_t> counts(4, 0);
    for (auto y : a.labels) counts[y]++;
    for (auto n : counts) CHECK(n == 5);
    for (float v : a.images.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK_NOTHROW(a.validate());
    CHECK_THROWS_AS(generate_synthetic<float>(1, 5, 12, 12, 42, 0.0), DataError);
}

TEST_CASE("different classes are visibly separated at difficulty zero") {
    auto ds = generate_synthetic<double>(3, 2, 16, 16, 1, 0.0);
    // per-class mean images should differ clearly between classes and agree within one
    auto mean_image = [&](std::size_t n) {
        double m = 0;
        for (std::size_t i = 0; i < 3 * 256; ++i) m += ds.images.data()[n * 3 * 256 + i];
        return m / (3.0 * 256.0);
    };
    // samples of the same class are near-identical up to jitter
    CHECK(std::abs(mean_image(0) - mean_image(1)) < 0.05);
}

TEST_CASE("dataset subset keeps images aligned with labels") {
    auto ds = generate_synthetic<float>(3, 3, 8, 8, 5, 0.0);
    auto sub = ds.subset({1, 4, 8});
    REQUIRE(sub.size() == 3);
    CHECK(sub.labels == std::vector<std::int64_t>{ds.labels[1], ds.labels[4], ds.labels[8]});
    std::size_t per = 3 * 8 * 8;
    for (std::size_t i = 0; i < per; ++i)
        CHECK(sub.images.data()[per + i] == ds.images.data()[4 * per + i]);
}

TEST_CASE("dataset bundle round trip is bit-exact") {
    auto ds = generate_synthetic<float>(3, 2, 8, 8, 6, 0.2);
    ds.split = "val";
    std::string dir = temp_dir("roundtrip");
    save_dataset(ds, dir);
    auto back = load_dataset<float>(dir);
    CHECK(back.images.data() == ds.images.data());
    CHECK(back.labels == ds.labels);
    CHECK(back.class_names == ds.class_names);
    CHECK(back.split == "val");
}

TEST_CASE("bundle loader reports the offending manifest row") {
    auto ds = generate_synthetic<float>(2, 2, 8, 8, 7, 0.0);
    std::string dir = temp_dir("badrows");
    save_dataset(ds, dir);

    SECTION("label out of range") {
        std::ofstream m(dir + "/manifest.csv");
        m << "# header\nimg_000000.agt1,0\nimg_000001.agt1,9\n";
        m.close();
        CHECK_THROWS_WITH(load_dataset<float>(dir),
                          Catch::Matchers::ContainsSubstring("row 3"));
    }
    SECTION("missing file") {
        std::ofstream m(dir + "/manifest.csv");
        m << "img_000000.agt1,0\nnope.agt1,1\n";
        m.close();
        CHECK_THROWS_WITH(load_dataset<float>(dir), Catch::Matchers::ContainsSubstring("row 2"));
    }
    SECTION("malformed row") {
        std::ofstream m(dir + "/manifest.csv");
        m << "img_000000.agt1 0\n";
        m.close();
        CHECK_THROWS_AS(load_dataset<float>(dir), DataError);
    }
    SECTION("missing manifest") {
        std::filesystem::remove(dir + "/manifest.csv");
        CHECK_THROWS_AS(load_dataset<float>(dir), DataError);
    }
    SECTION("corrupt meta.json") {
        std::ofstream m(dir + "/meta.json");
        m << "{not json";
        m.close();
        CHECK_THROWS_AS(load_dataset<float>(dir), DataError);
    }
}

TEST_CASE("confusion matrix and accuracy hand case") {
    std::vector<std::int64_t> t = {0, 0, 1, 1, 2};
    std::vector<std::int64_t> p = {0, 1, 1, 1, 0};
    auto cm = confusion_matrix(t, p, 3);
    CHECK(cm[0][0] == 1);
    CHECK(cm[0][1] == 1);
    CHECK(cm[1][1] == 2);
    CHECK(cm[2][0] == 1);
    CHECK(accuracy(cm) == Catch::Approx(0.6));
    CHECK_THROWS_AS(confusion_matrix(t, {0, 0, 1, 1, 5}, 3), DataError);
}

TEST_CASE("macro F1 hand case: confusion [[5,5],[0,10]] gives 11/15") {
    std::vector<std::vector<std::size_t>> cm = {{5, 5}, {0, 10}};
    auto prf = precision_recall_f1(cm);
    CHECK(prf[0].precision == Catch::Approx(1.0));
    CHECK(prf[0].recall == Catch::Approx(0.5));
    CHECK(prf[0].f1 == Catch::Approx(2.0 / 3.0));
    CHECK(prf[1].precision == Catch::Approx(2.0 / 3.0));
    CHECK(prf[1].recall == Catch::Approx(1.0));
    CHECK(prf[1].f1 == Catch::Approx(0.8));
    double macro = macro_over_present(prf, [](const ClassPRF& c) { return c.f1; });
    CHECK(macro == Catch::Approx(11.0 / 15.0));
}

TEST_CASE("zero predicted positives give precision 0, not NaN") {
    std::vector<std::vector<std::size_t>> cm = {{0, 3}, {0, 3}};
    auto prf = precision_recall_f1(cm);
    CHECK(prf[0].precision == 0.0);
    CHECK(prf[0].recall == 0.0);
    CHECK(prf[0].f1 == 0.0);
    CHECK(std::isfinite(prf[0].f1));
}

TEST_CASE("classes absent from truth and prediction leave the macro average") {
    std::vector<std::int64_t> t = {0, 1, 0, 1};
    std::vector<std::int64_t> p = {0, 1, 1, 1};
    auto prf = precision_recall_f1(confusion_matrix(t, p, 3));
    CHECK(prf[2].present == false);
    double macro = macro_over_present(prf, [](const ClassPRF& c) { return c.f1; });
    CHECK(macro == Catch::Approx((prf[0].f1 + prf[1].f1) / 2.0));
}

TEST_CASE("qwk hand cases") {
    std::vector<std::int64_t> perfect = {0, 1, 2, 3, 0, 1, 2, 3};
    CHECK(qwk(perfect, perfect, 4) == Catch::Approx(1.0));

    // constant predictions on a degenerate single-class truth
    std::vector<std::int64_t> ones(6, 1);
    std::vector<std::string> warnings;
    CHECK(qwk(ones, ones, 3, &warnings) == 1.0);
    CHECK_FALSE(warnings.empty());

    // adjacent misses cost less than distant ones
    std::vector<std::int64_t> t = {0, 1, 2, 3, 0, 1, 2, 3};
    std::vector<std::int64_t> near = {1, 0, 3, 2, 1, 0, 3, 2};
    std::vector<std::int64_t> far = {3, 2, 1, 0, 3, 2, 1, 0};
    CHECK(qwk(t, near, 4) > qwk(t, far, 4));
}

TEST_CASE("qwk agrees with the definition oracle and is symmetric") {
    Rng rng(81);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t K = 2 + rng.uniform_int(4);
        std::size_t n = 5 + rng.uniform_int(40);
        std::vector<std::int64_t> t(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = std::int64_t(rng.uniform_int(K));
            p[i] = std::int64_t(rng.uniform_int(K));
        }
        double got = qwk(t, p, K);
        CHECK(got == Catch::Approx(qwk_oracle(t, p, K)).margin(1e-12));
        CHECK(got == Catch::Approx(qwk(p, t, K)).margin(1e-12));  // symmetric in its arguments
    }
}

TEST_CASE("mae hand case") {
    CHECK(mae({0, 1, 2, 3}, {0, 3, 2, 0}) == Catch::Approx((0 + 2 + 0 + 3) / 4.0));
    CHECK_THROWS_AS(mae({}, {}), DataError);
}

TEST_CASE("binary auc: hand values, ties, and the pair-counting oracle") {
    // perfect separation
    CHECK(auc_binary({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}) == Catch::Approx(1.0));
    // perfectly wrong
    CHECK(auc_binary({0.9, 0.8, 0.2, 0.1}, {false, false, true, true}) == Catch::Approx(0.0));
    // all scores tied: AUC is one half by convention
    CHECK(auc_binary({0.5, 0.5, 0.5, 0.5}, {false, true, false, true}) == Catch::Approx(0.5));
    CHECK_THROWS_AS(auc_binary({0.1, 0.2}, {true, true}), DataError);

    Rng rng(82);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 4 + rng.uniform_int(30);
        std::vector<double> s(n);
        std::vector<bool> pos(n);
        std::size_t np = 0;
        for (std::size_t i = 0; i < n; ++i) {
            // quantized scores force plenty of ties
            s[i] = double(rng.uniform_int(5)) / 4.0;
            pos[i] = rng.uniform_int(2) == 1;
            np += pos[i];
        }
        if (np == 0 || np == n) continue;
        CHECK(auc_binary(s, pos) == Catch::Approx(auc_pairs(s, pos)).margin(1e-12));
    }
}

TEST_CASE("auc is invariant under strictly monotone score transforms") {
    Rng rng(83);
    std::size_t n = 25;
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.normal();
        pos[i] = rng.uniform_int(2) == 1;
    }
    pos[0] = true;
    pos[1] = false;
    double base = auc_binary(s, pos);
    std::vector<double> warped(n);
    for (std::size_t i = 0; i < n; ++i) warped[i] = std::exp(3.0 * s[i]) - 7.0;
    CHECK(auc_binary(warped, pos) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("macro one-vs-rest auc skips absent classes with a warning") {
    std::vector<std::int64_t> t = {0, 0, 1, 1};
    std::vector<std::vector<double>> scores = {
        {0.9, 0.05, 0.05}, {0.8, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.6, 0.1}};
    std::vector<std::string> warnings;
    double a = auc_macro_ovr(scores, t, 3, &warnings);
    CHECK(a == Catch::Approx(1.0));
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("class 2") != std::string::npos);
}

TEST_CASE("macro F1 is invariant under a consistent relabeling") {
    Rng rng(84);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t K = 3, n = 30;
        std::vector<std::int64_t> t(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = std::int64_t(rng.uniform_int(K));
            p[i] = std::int64_t(rng.uniform_int(K));
        }
        std::vector<std::int64_t> perm = {2, 0, 1};
        std::vector<std::int64_t> t2(n), p2(n);
        for (std::size_t i = 0; i < n; ++i) {
            t2[i] = perm[t[i]];
            p2[i] = perm[p[i]];
        }
        auto f1 = [&](const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
            auto prf = precision_recall_f1(confusion_matrix(a, b, K));
            return macro_over_present(prf, [](const ClassPRF& c) { return c.f1; });
        };
        CHECK(f1(t, p) == Catch::Approx(f1(t2, p2)).margin(1e-12));
    }
}

TEST_CASE("make_report assembles consistent fields") {
    std::vector<std::int64_t> t = {0, 0, 1, 1, 2, 2};
    std::vector<std::int64_t> p = {0, 1, 1, 1, 2, 0};
    std::vector<std::vector<double>> scores;
    Rng rng(85);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::vector<double> row(3);
        double sum = 0;
        for (auto& v : row) {
            v = rng.uniform(0.01, 1.0);
            sum += v;
        }
        row[t[i]] += 1.0;  // tilt toward the truth
        sum += 1.0;
        for (auto& v : row) v /= sum;
        scores.push_back(row);
    }
    auto r = make_report(t, p, scores, 3);
    CHECK(r.accuracy == Catch::Approx(4.0 / 6.0));
    CHECK(r.confusion[0][1] == 1);
    CHECK(r.per_class.size() == 3);
    CHECK(r.qwk == Catch::Approx(qwk(t, p, 3)));
    CHECK(r.mae == Catch::Approx(mae(t, p)));
    CHECK(r.auc > 0.5);  // scores were tilted toward the truth
}
