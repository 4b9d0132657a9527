#include "cohort/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "cohort/errors.hpp"

namespace cohort {

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty() || scores.size() != labels.size()) {
        throw ValidationError("metrics: scores and labels must be non-empty and of equal length");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) throw NumericError("metrics", "non-finite score");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValidationError("metrics: labels must be 0 or 1");
    }
}

}  // namespace

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels);
    const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    if (positives == 0) throw ValidationError("AUPRC undefined: no positive labels");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    double tp = 0, seen = 0, prev_recall = 0, area = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        while (k < order.size() && scores[order[k]] == s) {
            tp += labels[order[k]];
            seen += 1;
            ++k;
        }
        const double recall = tp / positives;
        area += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
    }
    return area;
}

MetricsReport compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                              double threshold) {
    MetricsReport r;
    r.auprc = average_precision(scores, labels);
    r.threshold = threshold;
    r.n_samples = scores.size();
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (pred && labels[i]) ++tp;
        else if (pred) ++fp;
        else if (labels[i]) ++fn;
        else ++tn;
    }
    r.accuracy = (tp + tn) / static_cast<double>(scores.size());
    r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty()) throw ValidationError("ARI: label vectors must match in length");
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        ra[a[i]] += 1;
        rb[b[i]] += 1;
    }
    const auto c2 = [](double x) { return x * (x - 1) / 2; };
    double sum_joint = 0, sum_a = 0, sum_b = 0;
    for (const auto& [_, v] : joint) sum_joint += c2(v);
    for (const auto& [_, v] : ra) sum_a += c2(v);
    for (const auto& [_, v] : rb) sum_b += c2(v);
    const double total = c2(static_cast<double>(a.size()));
    const double expected = total > 0 ? sum_a * sum_b / total : 0.0;
    const double max_index = (sum_a + sum_b) / 2;
    if (max_index == expected) return 1.0;
    return (sum_joint - expected) / (max_index - expected);
}

}  // namespace cohort
