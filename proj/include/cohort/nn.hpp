#pragma once

#include <string>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/rng.hpp"

namespace cohort::nn {

using ad::Mat;
using ad::Param;

/// Glorot-uniform initialisation for a rows x cols weight.
Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng);
Mat zeros(Eigen::Index rows, Eigen::Index cols);

/// Adaptive-moment optimizer (bias-corrected first and second moments).
class Adam {
   public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    explicit Adam(Options opts) : opts_(opts) {}

    /// Applies one update to every parameter from its accumulated grad.
    void step(const std::vector<Param*>& params);
    long steps() const { return t_; }
    void set_steps(long t) { t_ = t; }

   private:
    Options opts_{};
    long t_ = 0;
};

void zero_grad(const std::vector<Param*>& params);
bool all_finite(const std::vector<Param*>& params);
std::size_t count_scalars(const std::vector<Param*>& params);

}  // namespace cohort::nn
