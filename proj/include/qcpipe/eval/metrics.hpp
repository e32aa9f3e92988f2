#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcpipe/error.hpp"

namespace qc {

/// Binary confusion matrix; class 1 is the positive class.
struct ConfusionMatrix {
    long tp = 0, fp = 0, tn = 0, fn = 0;

    long total() const { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline void check_binary(std::span<const int> v, const char* what) {
    for (int x : v)
        if (x != 0 && x != 1) fail(errc::invalid_argument, std::string(what) + " must be 0 or 1");
}

inline ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) fail(errc::length_mismatch, "prediction and truth lengths differ");
    check_binary(predicted, "predictions");
    check_binary(truth, "labels");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 1) (predicted[i] == 1 ? cm.tp : cm.fn)++;
        else (predicted[i] == 1 ? cm.fp : cm.tn)++;
    }
    return cm;
}

/// Ratios with a zero denominator stay empty.
struct Metrics {
    std::optional<double> sensitivity, specificity, ppv, npv, ba, f1, mcc;
    long n = 0;
};

inline std::optional<double> ratio(double num, double den) {
    if (den == 0.0) return std::nullopt;
    return num / den;
}

inline Metrics classification_metrics(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) fail(errc::empty_matrix, "confusion matrix is empty");
    if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0) fail(errc::invalid_argument, "negative confusion count");
    Metrics m;
    m.n = cm.total();
    const double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
    const double tn = static_cast<double>(cm.tn), fn = static_cast<double>(cm.fn);
    m.sensitivity = ratio(tp, tp + fn);
    m.specificity = ratio(tn, tn + fp);
    m.ppv = ratio(tp, tp + fp);
    m.npv = ratio(tn, tn + fn);
    if (m.sensitivity && m.specificity) m.ba = (*m.sensitivity + *m.specificity) / 2.0;
    if (m.ppv && m.sensitivity) m.f1 = ratio(2.0 * *m.ppv * *m.sensitivity, *m.ppv + *m.sensitivity);
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (den > 0.0) m.mcc = std::clamp((tp * tn - fp * fn) / std::sqrt(den), -1.0, 1.0);
    return m;
}

/// Rank (Mann-Whitney) AUC of `scores` for the positive class; ties count one half.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) fail(errc::length_mismatch, "score and label lengths differ");
    check_binary(labels, "labels");
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) fail(errc::one_class_only, "AUC needs both classes");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum += mid_rank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// AUC of the hard decision, which equals the balanced accuracy of `predicted`.
inline double hard_label_auc(std::span<const int> predicted, std::span<const int> truth) {
    const auto m = classification_metrics(confusion_matrix(predicted, truth));
    if (!m.ba) fail(errc::one_class_only, "hard-label AUC needs both classes");
    return *m.ba;
}

/// Mean per-class recall over the classes present in `truth`; reduces to (sens + spec) / 2 for two classes.
inline double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) fail(errc::length_mismatch, "prediction and truth lengths differ");
    if (truth.empty()) fail(errc::empty_matrix, "no samples");
    std::map<int, std::pair<long, long>> per_class;  // hits, count
    for (std::size_t i = 0; i < truth.size(); ++i) {
        auto& [hit, count] = per_class[truth[i]];
        ++count;
        if (predicted[i] == truth[i]) ++hit;
    }
    double sum = 0.0;
    for (const auto& [cls, hc] : per_class) sum += static_cast<double>(hc.first) / static_cast<double>(hc.second);
    return sum / static_cast<double>(per_class.size());
}

/// Mean of each rater's balanced accuracy against the consensus.
inline double annotator_ba(std::span<const int> rater1, std::span<const int> rater2, std::span<const int> consensus) {
    if (rater1.size() != consensus.size() || rater2.size() != consensus.size())
        fail(errc::length_mismatch, "rater and consensus lengths differ");
    return (balanced_accuracy(rater1, consensus) + balanced_accuracy(rater2, consensus)) / 2.0;
}

struct EvalReport {
    std::string task;
    Metrics metrics;
    std::optional<double> auc_rank;  // from probabilities
    std::optional<double> auc_hard;  // from argmax decisions
    ConfusionMatrix cm;
};

/// `scores` are positive-class probabilities; may be empty.
inline EvalReport evaluate_predictions(const std::string& task, std::span<const int> predicted,
                                       std::span<const int> truth, std::span<const double> scores = {}) {
    EvalReport r;
    r.task = task;
    r.cm = confusion_matrix(predicted, truth);
    r.metrics = classification_metrics(r.cm);
    r.auc_hard = r.metrics.ba;
    const bool both = r.cm.tp + r.cm.fn > 0 && r.cm.tn + r.cm.fp > 0;
    if (!scores.empty() && both) r.auc_rank = roc_auc(scores, truth);
    return r;
}

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{"ba", "auc_hard", "auc_rank", "f1", "mcc", "sensitivity",
                                                "specificity", "ppv", "npv"};
    return names;
}

inline std::optional<double> metric_value(const EvalReport& r, const std::string& name) {
    const auto& m = r.metrics;
    if (name == "ba") return m.ba;
    if (name == "auc_hard") return r.auc_hard;
    if (name == "auc_rank") return r.auc_rank;
    if (name == "f1") return m.f1;
    if (name == "mcc") return m.mcc;
    if (name == "sensitivity") return m.sensitivity;
    if (name == "specificity") return m.specificity;
    if (name == "ppv") return m.ppv;
    if (name == "npv") return m.npv;
    fail(errc::invalid_argument, "unknown metric '" + name + "'");
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // empirical (n - 1); 0 for a single value
    std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
    MeanStd out;
    out.count = v.size();
    if (v.empty()) return out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

/// Per metric mean and std across folds, skipping folds where the metric is absent.
inline std::map<std::string, MeanStd> aggregate_reports(std::span<const EvalReport> reports) {
    std::map<std::string, MeanStd> out;
    for (const auto& name : metric_names()) {
        std::vector<double> vals;
        for (const auto& r : reports)
            if (auto v = metric_value(r, name)) vals.push_back(*v);
        if (!vals.empty()) out[name] = mean_std(vals);
    }
    return out;
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j{{"task", r.task},
                     {"n", r.metrics.n},
                     {"confusion", {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"tn", r.cm.tn}, {"fn", r.cm.fn}}}};
    for (const auto& name : metric_names()) j[name] = opt_json(metric_value(r, name));
    return j;
}

inline nlohmann::json aggregate_to_json(const std::map<std::string, MeanStd>& agg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, ms] : agg) j[name] = {{"mean", ms.mean}, {"std", ms.std}, {"folds", ms.count}};
    return j;
}

/// Rows are metrics, columns are tasks, cells "mean ± std" in percent.
inline std::string format_table(const std::vector<std::pair<std::string, std::map<std::string, MeanStd>>>& columns) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"metric"};
    for (const auto& [task, agg] : columns) header.push_back(task);
    cells.push_back(header);
    for (const auto& name : metric_names()) {
        std::vector<std::string> row{name};
        for (const auto& [task, agg] : columns) {
            auto it = agg.find(name);
            if (it == agg.end()) {
                row.emplace_back("-");
                continue;
            }
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * it->second.mean, 100.0 * it->second.std);
            row.emplace_back(buf);
        }
        cells.push_back(row);
    }
    auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;  // count code points
        return w;
    };
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
    std::string out;
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out += row[c];
            if (c + 1 < row.size()) out += std::string(widths[c] - width(row[c]) + 2, ' ');
        }
        out += '\n';
    }
    return out;
}

}  // namespace qc
