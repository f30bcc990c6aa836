#pragma once

// Central-difference gradient checking in double precision.

#include "lgcvs/tensor.hpp"

#include <functional>

namespace gradcheck {

// Rebuilds the loss from scratch for every probe, so the function must be a
// pure map from the parameter values to a scalar tensor.
inline double max_rel_err(std::vector<lgcvs::Tensor<double>> params,
                          const std::function<lgcvs::Tensor<double>()>& loss_fn,
                          double h = 1e-5) {
    for (auto& p : params) p.set_requires_grad(true);
    auto loss = loss_fn();
    for (auto& p : params) p.zero_grad();
    loss.backward();

    double worst = 0.0;
    for (auto& p : params) {
        std::vector<double> analytic = p.grad();
        for (size_t i = 0; i < p.size(); ++i) {
            const double orig = p.val()[i];
            p.val()[i] = orig + h;
            const double fp = loss_fn().item();
            p.val()[i] = orig - h;
            const double fm = loss_fn().item();
            p.val()[i] = orig;
            const double numeric = (fp - fm) / (2 * h);
            const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4});
            worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
        }
    }
    return worst;
}

}  // namespace gradcheck
