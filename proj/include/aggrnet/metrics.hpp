#pragma once

// Classification metrics: accuracy, per-class P/R/F1, macro-F1, quadratic
// weighted kappa, MAE, and macro one-vs-rest ROC AUC (midrank ties).

#include <cmath>

#include "aggrnet/common.hpp"

namespace aggrnet {

struct ClassPRF {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool present = false;  // class appears in true or pred
};

struct EvalReport {
    double accuracy = 0.0;
    std::vector<ClassPRF> per_class;
    double macro_f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double qwk = 0.0;
    double mae = 0.0;
    double auc = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // rows = true class
    std::vector<std::string> warnings;
};

inline std::vector<std::vector<std::size_t>> confusion_matrix(
    const std::vector<std::int64_t>& truth, const std::vector<std::int64_t>& pred,
    std::size_t K) {
    if (truth.size() != pred.size() || truth.empty())
        throw DataError("confusion_matrix: need equal nonempty label arrays");
    std::vector<std::vector<std::size_t>> cm(K, std::vector<std::size_t>(K, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || std::size_t(truth[i]) >= K || pred[i] < 0 || std::size_t(pred[i]) >= K)
            throw DataError("confusion_matrix: label out of range");
        cm[truth[i]][pred[i]]++;
    }
    return cm;
}

inline double accuracy(const std::vector<std::vector<std::size_t>>& cm) {
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < cm.size(); ++i)
        for (std::size_t j = 0; j < cm.size(); ++j) {
            total += cm[i][j];
            if (i == j) correct += cm[i][j];
        }
    return double(correct) / double(total);
}

// Per-class precision/recall/F1; zero predicted positives give precision 0,
// F1 = 0 when P + R = 0. Classes absent from both truth and prediction are
// flagged not-present and excluded from macro averages.
inline std::vector<ClassPRF> precision_recall_f1(
    const std::vector<std::vector<std::size_t>>& cm) {
    std::size_t K = cm.size();
    std::vector<ClassPRF> out(K);
    for (std::size_t k = 0; k < K; ++k) {
        std::size_t tp = cm[k][k], fp = 0, fn = 0;
        for (std::size_t i = 0; i < K; ++i) {
            if (i != k) {
                fp += cm[i][k];
                fn += cm[k][i];
            }
        }
        out[k].present = (tp + fp + fn) > 0;
        out[k].precision = (tp + fp) ? double(tp) / double(tp + fp) : 0.0;
        out[k].recall = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
        double pr = out[k].precision + out[k].recall;
        out[k].f1 = pr > 0 ? 2.0 * out[k].precision * out[k].recall / pr : 0.0;
    }
    return out;
}

template <typename F>
double macro_over_present(const std::vector<ClassPRF>& prf, F field) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& c : prf)
        if (c.present) {
            acc += field(c);
            ++n;
        }
    return n ? acc / double(n) : 0.0;
}

// QWK = 1 - sum(w .* O) / sum(w .* E), w_ij = (i-j)^2/(K-1)^2, E = outer
// product of marginals normalized to N. A zero denominator (all mass on
// one class, perfect agreement) returns 1.0.
inline double qwk(const std::vector<std::int64_t>& truth, const std::vector<std::int64_t>& pred,
                  std::size_t K, std::vector<std::string>* warnings = nullptr) {
    auto cm = confusion_matrix(truth, pred, K);
    double n = double(truth.size());
    std::vector<double> row(K, 0), col(K, 0);
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            row[i] += double(cm[i][j]);
            col[j] += double(cm[i][j]);
        }
    double denom_scale = double((K - 1) * (K - 1));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            double d = double(i) - double(j);
            double w = d * d / denom_scale;
            num += w * double(cm[i][j]);
            den += w * row[i] * col[j] / n;
        }
    if (den == 0.0) {
        if (warnings)
            warnings->push_back("qwk: degenerate marginals (single class), returning 1.0");
        return 1.0;
    }
    return 1.0 - num / den;
}

inline double mae(const std::vector<std::int64_t>& truth, const std::vector<std::int64_t>& pred) {
    if (truth.size() != pred.size() || truth.empty()) throw DataError("mae: bad label arrays");
    double acc = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        acc += std::abs(double(truth[i]) - double(pred[i]));
    return acc / double(truth.size());
}

// One-vs-rest ROC AUC for class k via the rank-sum statistic with midranks.
inline double auc_binary(const std::vector<double>& scores, const std::vector<bool>& positive) {
    std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * double(i + j) + 1.0;  // 1-based midrank
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
        i = j + 1;
    }
    double rank_sum = 0;
    std::size_t pos = 0;
    for (std::size_t t = 0; t < n; ++t)
        if (positive[t]) {
            rank_sum += rank[t];
            ++pos;
        }
    std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw DataError("auc: class absent");
    return (rank_sum - double(pos) * double(pos + 1) / 2.0) / (double(pos) * double(neg));
}

// Macro average over classes present in the labels; absent classes are
// skipped with a warning.
inline double auc_macro_ovr(const std::vector<std::vector<double>>& scores,
                            const std::vector<std::int64_t>& truth, std::size_t K,
                            std::vector<std::string>* warnings = nullptr) {
    if (truth.size() < 2) throw DataError("auc: need at least 2 samples");
    double acc = 0;
    std::size_t defined = 0;
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> s(truth.size());
        std::vector<bool> pos(truth.size());
        std::size_t npos = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            s[i] = scores[i][k];
            pos[i] = std::size_t(truth[i]) == k;
            npos += pos[i];
        }
        if (npos == 0 || npos == truth.size()) {
            if (warnings)
                warnings->push_back("auc: class " + std::to_string(k) +
                                    " absent or universal, skipped");
            continue;
        }
        acc += auc_binary(s, pos);
        ++defined;
    }
    if (defined == 0) throw DataError("auc: no class with both positives and negatives");
    return acc / double(defined);
}

inline EvalReport make_report(const std::vector<std::int64_t>& truth,
                              const std::vector<std::int64_t>& pred,
                              const std::vector<std::vector<double>>& scores, std::size_t K) {
    EvalReport r;
    r.confusion = confusion_matrix(truth, pred, K);
    r.accuracy = accuracy(r.confusion);
    r.per_class = precision_recall_f1(r.confusion);
    r.macro_precision = macro_over_present(r.per_class, [](const ClassPRF& c) { return c.precision; });
    r.macro_recall = macro_over_present(r.per_class, [](const ClassPRF& c) { return c.recall; });
    r.macro_f1 = macro_over_present(r.per_class, [](const ClassPRF& c) { return c.f1; });
    r.qwk = qwk(truth, pred, K, &r.warnings);
    r.mae = mae(truth, pred);
    r.auc = auc_macro_ovr(scores, truth, K, &r.warnings);
    return r;
}

}  // namespace aggrnet
