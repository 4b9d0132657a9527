#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/ehr_data.hpp"
#include "cohort/nn.hpp"
#include "cohort/ontology_tree.hpp"
#include "cohort/rng.hpp"

namespace cohort::testing {

using ad::Mat;

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.uniform(-1.0, 1.0);
    }
    return m;
}

struct GradCheck {
    double worst = 0.0;   // largest per-tensor relative error
    std::string where;    // parameter name at the worst point
};

/// Central finite differences against the tape gradient of every parameter.
/// The error of one tensor is |g_analytic - g_numeric| / max(|g_a| + |g_n|, floor),
/// both norms taken over the tensor.
inline GradCheck check_gradients(const std::vector<ad::Param*>& params,
                                 const std::function<ad::Var(ad::Tape&)>& loss, double eps = 1e-5,
                                 double floor = 1e-7) {
    nn::zero_grad(params);
    {
        ad::Tape tape;
        tape.backward(loss(tape));
    }
    const auto eval = [&]() {
        ad::Tape tape;
        return loss(tape).value()(0, 0);
    };
    GradCheck out;
    for (ad::Param* p : params) {
        Mat numeric(p->value.rows(), p->value.cols());
        for (Eigen::Index k = 0; k < p->value.size(); ++k) {
            const double keep = p->value(k);
            p->value(k) = keep + eps;
            const double up = eval();
            p->value(k) = keep - eps;
            const double down = eval();
            p->value(k) = keep;
            numeric(k) = (up - down) / (2.0 * eps);
        }
        const Mat& analytic = p->grad;
        const double err = (analytic - numeric).norm() / std::max(analytic.norm() + numeric.norm(), floor);
        if (err > out.worst) {
            out.worst = err;
            out.where = p->name;
        }
    }
    return out;
}

inline RawVisit raw_visit(const std::string& id, std::int64_t day, std::vector<std::string> dx,
                          std::vector<std::string> rx = {}, std::vector<std::string> lab = {}) {
    RawVisit v;
    v.visit_id = id;
    v.admit_day = day;
    v.dx = std::move(dx);
    v.rx = std::move(rx);
    v.lab = std::move(lab);
    return v;
}

inline RawPatient raw_patient(const std::string& id, std::vector<RawVisit> visits, Gender g = Gender::male,
                              int age = 50) {
    RawPatient p;
    p.patient_id = id;
    p.gender = g;
    p.age = age;
    p.visits = std::move(visits);
    return p;
}

/// One single-visit patient per diagnosis set, ids p00, p01, ...
inline Dataset dataset_from_sets(const std::vector<std::vector<std::string>>& dx_sets) {
    std::vector<RawPatient> raw;
    for (std::size_t i = 0; i < dx_sets.size(); ++i) {
        const std::string id = std::string("p") + (i < 10 ? "0" : "") + std::to_string(i);
        raw.push_back(raw_patient(id, {raw_visit(id + "v0", 0, dx_sets[i])}));
    }
    return make_dataset(raw);
}

/// Root "R" with `branches` children B<i>, each with `leaves` leaves B<i>.<j>.
inline std::shared_ptr<const OntologyTree> small_tree(int branches, int leaves) {
    std::vector<OntologyRow> rows{{"R", OntologyTree::kRootSentinel, "all codes"}};
    for (int b = 0; b < branches; ++b) {
        const std::string bid = "B" + std::to_string(b);
        rows.push_back({bid, "R", "branch " + std::to_string(b) + " disease"});
        for (int l = 0; l < leaves; ++l) {
            rows.push_back({bid + "." + std::to_string(l), bid, "leaf " + std::to_string(b) + " kind " + std::to_string(l)});
        }
    }
    return std::make_shared<const OntologyTree>(OntologyTree::from_rows(rows));
}

}  // namespace cohort::testing
