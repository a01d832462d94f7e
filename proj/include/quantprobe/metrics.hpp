#pragma once

#include <quantprobe/errors.hpp>
#include <quantprobe/synthgen.hpp>

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace quantprobe {

enum class MetricKind { RMSE, LogRMSE, Accuracy };

inline MetricKind metric_for(TaskKind task) {
    switch (task) {
    case TaskKind::Order: return MetricKind::LogRMSE;
    case TaskKind::UnitId: return MetricKind::Accuracy;
    default: return MetricKind::RMSE;
    }
}

inline std::string_view metric_name(MetricKind k) {
    switch (k) {
    case MetricKind::RMSE: return "rmse";
    case MetricKind::LogRMSE: return "log_rmse";
    case MetricKind::Accuracy: return "accuracy";
    }
    return "?";
}

inline MetricKind parse_metric(std::string_view s) {
    if (s == "rmse") return MetricKind::RMSE;
    if (s == "log_rmse") return MetricKind::LogRMSE;
    if (s == "accuracy") return MetricKind::Accuracy;
    throw FormatError("unknown metric kind '" + std::string(s) + "'");
}

/// Higher is better only for accuracy.
inline bool higher_is_better(MetricKind k) { return k == MetricKind::Accuracy; }

inline double rmse(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size())
        throw ShapeError("rmse: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
    if (preds.empty()) throw ShapeError("rmse: empty input");
    double sq = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - targets[i];
        sq += d * d;
    }
    return std::sqrt(sq / double(preds.size()));
}

/// RMSE over targets that are already logarithms (Order task).
inline double log_rmse(std::span<const double> preds, std::span<const double> log_targets) {
    return rmse(preds, log_targets);
}

inline double accuracy(std::span<const int> pred_labels, std::span<const int> labels) {
    if (pred_labels.size() != labels.size())
        throw ShapeError("accuracy: " + std::to_string(pred_labels.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ShapeError("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred_labels[i] == labels[i];
    return double(hits) / double(labels.size());
}

/// Index of the largest score; ties go to the smallest index.
inline int argmax(std::span<const double> scores) {
    int best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[std::size_t(best)]) best = int(i);
    return best;
}

struct Aggregate {
    double mean = 0.0;
    std::optional<double> std;  // absent for a single run
};

/// Mean and sample (n-1) standard deviation. Requires n >= 2.
inline Aggregate aggregate(std::span<const double> values) {
    if (values.size() < 2)
        throw AggregationError("aggregate needs at least 2 values, got " + std::to_string(values.size()));
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= double(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / double(values.size() - 1))};
}

/// Like aggregate(), but a single value yields that value with no std.
inline Aggregate summarize(std::span<const double> values) {
    if (values.size() == 1) return {values[0], std::nullopt};
    return aggregate(values);
}

/// 3-decimal fixed formatting. printf rounds the exact binary value, so
/// exact ties resolve to even.
inline std::string format_3dp(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

/// Table cell "mean±std", or just "mean" when std is absent.
inline std::string format_cell(const Aggregate& a) {
    std::string s = format_3dp(a.mean);
    if (a.std) s += "±" + format_3dp(*a.std);
    return s;
}

}  // namespace quantprobe
