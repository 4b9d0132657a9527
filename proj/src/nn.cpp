#include "cohort/nn.hpp"

#include <cmath>

namespace cohort::nn {

Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Mat w(rows, cols);
    const double fan = static_cast<double>(rows + cols);
    const double limit = fan > 0 ? std::sqrt(6.0 / fan) : 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            w(r, c) = rng.uniform(-limit, limit);
        }
    }
    return w;
}

Mat zeros(Eigen::Index rows, Eigen::Index cols) { return Mat::Zero(rows, cols); }

void Adam::step(const std::vector<Param*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (Param* p : params) {
        if (p->size() == 0) continue;
        p->m = opts_.beta1 * p->m + (1.0 - opts_.beta1) * p->grad;
        p->v = opts_.beta2 * p->v + (1.0 - opts_.beta2) * p->grad.cwiseAbs2();
        const auto m_hat = p->m.array() / c1;
        const auto v_hat = p->v.array() / c2;
        p->value.array() -= opts_.lr * m_hat / (v_hat.sqrt() + opts_.eps);
    }
}

void zero_grad(const std::vector<Param*>& params) {
    for (Param* p : params) p->zero_grad();
}

bool all_finite(const std::vector<Param*>& params) {
    for (const Param* p : params) {
        if (!p->value.allFinite()) return false;
    }
    return true;
}

std::size_t count_scalars(const std::vector<Param*>& params) {
    std::size_t n = 0;
    for (const Param* p : params) n += p->size();
    return n;
}

}  // namespace cohort::nn
