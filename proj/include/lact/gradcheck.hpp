#pragma once

#include <functional>
#include <vector>

#include "lact/tensor.hpp"

namespace lact {

// Central-difference check of reverse-mode gradients.
//
// f must rebuild its graph from the current parameter values on every call and
// return a scalar. Every coordinate of every parameter is perturbed by +/-eps;
// the result is the worst relative error
//     |ad - fd| / max(|ad|, |fd|, 1e-8)
// over all coordinates.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
                         double eps) {
    if (eps == 0.0) throw UsageError("finite_diff_check: eps must be nonzero");

    for (auto& p : params) p.zero_grad();
    Graph<T>::active().clear();
    Tensor<T> loss = f();
    if (loss.size() != 1)
        throw UsageError("finite_diff_check: f must return a scalar, got shape " +
                         shape_str(loss.shape()));
    backward(loss);

    std::vector<std::vector<T>> ad;
    ad.reserve(params.size());
    for (auto& p : params)
        ad.push_back(p.has_grad() ? p.grad() : std::vector<T>(p.values().size(), T(0)));

    double max_rel = 0.0;
    autodiff::NoGradGuard no_grad;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        for (size_t i = 0; i < vals.size(); ++i) {
            const T orig = vals[i];
            vals[i] = orig + T(eps);
            const double f_plus = static_cast<double>(f().scalar());
            vals[i] = orig - T(eps);
            const double f_minus = static_cast<double>(f().scalar());
            vals[i] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * eps);
            const double a = static_cast<double>(ad[pi][i]);
            const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-8});
            const double rel = std::fabs(a - fd) / denom;
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace lact
