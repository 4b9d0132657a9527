#pragma once

#include <cstddef>
#include <vector>

namespace cohort {

struct MetricsReport {
    double auprc = 0.0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double threshold = 0.5;
    std::size_t n_samples = 0;
};

/// Area under the step-wise precision-recall curve, sweeping the scores in
/// descending order with tied scores taken as one step.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

/// AUPRC plus accuracy, precision, recall and F1 of `score >= threshold`.
MetricsReport compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                              double threshold = 0.5);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace cohort
