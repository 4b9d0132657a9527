#pragma once

// Brute-force reference implementations. Each one follows the textual rule
// directly, with no sorting shortcuts shared with the library code.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "cohort/autodiff.hpp"

namespace cohort::oracle {

using ad::Mat;

inline double jaccard(const std::set<unsigned>& a, const std::set<unsigned>& b) {
    std::set<unsigned> uni = a;
    uni.insert(b.begin(), b.end());
    std::size_t inter = 0;
    for (unsigned x : uni) inter += (a.count(x) && b.count(x)) ? 1 : 0;
    return static_cast<double>(inter) / static_cast<double>(uni.size());
}

inline double cosine(const Mat& f, std::size_t i, std::size_t j) {
    double dot = 0, ni = 0, nj = 0;
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
        dot += f(r, static_cast<Eigen::Index>(i)) * f(r, static_cast<Eigen::Index>(j));
        ni += f(r, static_cast<Eigen::Index>(i)) * f(r, static_cast<Eigen::Index>(i));
        nj += f(r, static_cast<Eigen::Index>(j)) * f(r, static_cast<Eigen::Index>(j));
    }
    if (ni == 0 || nj == 0) return 0.0;
    return dot / (std::sqrt(ni) * std::sqrt(nj));
}

/// Repeatedly take the most similar remaining member (ties: smaller index)
/// while it beats gamma and fewer than K are held.
inline std::vector<std::size_t> greedy_neighbors(std::size_t anchor, const std::vector<std::size_t>& members,
                                                 const Mat& f, double gamma, int K) {
    std::set<std::size_t> remaining(members.begin(), members.end());
    remaining.erase(anchor);
    std::vector<std::size_t> out;
    while (static_cast<int>(out.size()) < K && !remaining.empty()) {
        std::size_t best = 0;
        double best_s = -std::numeric_limits<double>::infinity();
        for (std::size_t c : remaining) {  // ascending, so strict > keeps the smaller index
            const double s = cosine(f, anchor, c);
            if (s > best_s) {
                best_s = s;
                best = c;
            }
        }
        if (!(best_s > gamma)) break;
        out.push_back(best);
        remaining.erase(best);
    }
    return out;
}

inline double sq_dist(const Mat& x, Eigen::Index i, Eigen::Index j) {
    double s = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double d = x(r, i) - x(r, j);
        s += d * d;
    }
    return s;
}

/// Indices of the k nearest other columns, chosen one at a time.
inline std::vector<Eigen::Index> nearest(const Mat& x, Eigen::Index i, int k) {
    std::vector<Eigen::Index> out;
    std::vector<bool> used(static_cast<std::size_t>(x.cols()), false);
    used[static_cast<std::size_t>(i)] = true;
    for (int step = 0; step < k; ++step) {
        Eigen::Index best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            const double d = sq_dist(x, i, j);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        if (best < 0) break;
        used[static_cast<std::size_t>(best)] = true;
        out.push_back(best);
    }
    return out;
}

inline Mat centroids(const std::vector<int>& cohort, int n, const Mat& reps) {
    Mat c = Mat::Zero(reps.rows(), n);
    std::vector<double> count(static_cast<std::size_t>(n), 0.0);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        c.col(cohort[i]) += reps.col(static_cast<Eigen::Index>(i));
        count[static_cast<std::size_t>(cohort[i])] += 1;
    }
    for (int k = 0; k < n; ++k) c.col(k) /= count[static_cast<std::size_t>(k)];
    return c;
}

inline std::set<std::pair<int, int>> snn_edges(const Mat& cents, int S) {
    std::set<std::pair<int, int>> edges;
    for (Eigen::Index i = 0; i < cents.cols(); ++i) {
        for (Eigen::Index j : nearest(cents, i, S)) {
            edges.emplace(static_cast<int>(std::min(i, j)), static_cast<int>(std::max(i, j)));
        }
    }
    return edges;
}

inline Mat knn_mean(const Mat& x, int K) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        Eigen::VectorXd s = x.col(i);
        const auto nb = nearest(x, i, K);
        for (Eigen::Index j : nb) s += x.col(j);
        out.col(i) = s / static_cast<double>(nb.size() + 1);
    }
    return out;
}

/// Step-wise PR area: one step per distinct score threshold, counted from
/// scratch at every threshold.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
    double positives = 0;
    for (int y : labels) positives += y;
    double area = 0, prev_recall = 0;
    for (double t : thresholds) {
        double tp = 0, predicted = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) {
                predicted += 1;
                tp += labels[i];
            }
        }
        const double recall = tp / positives;
        area += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    return area;
}

struct Confusion {
    double accuracy, precision, recall, f1;
};

inline Confusion confusion(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int pred = scores[i] >= threshold ? 1 : 0;
        tp += pred == 1 && labels[i] == 1;
        fp += pred == 1 && labels[i] == 0;
        fn += pred == 0 && labels[i] == 1;
        tn += pred == 0 && labels[i] == 0;
    }
    Confusion c{};
    c.accuracy = (tp + tn) / static_cast<double>(scores.size());
    c.precision = tp + fp == 0 ? 0.0 : tp / (tp + fp);
    c.recall = tp + fn == 0 ? 0.0 : tp / (tp + fn);
    c.f1 = c.precision + c.recall == 0 ? 0.0 : 2 * c.precision * c.recall / (c.precision + c.recall);
    return c;
}

}  // namespace cohort::oracle
