#pragma once

#include <string>
#include <vector>

#include "lact/gradcheck.hpp"
#include "lact/model.hpp"
#include "lact/pipeline.hpp"

namespace lact {

struct GradCheckResult {
    std::string component;
    double max_rel_error;
    double threshold;
    bool pass;
};

namespace detail {

// Test hook: identity in the forward pass with a deliberately wrong backward
// (gradient scaled by 1.01). Exists so the failure path of the checker can be
// exercised end to end.
template <typename T>
Tensor<T> corrupt_identity(const Tensor<T>& a) {
    Tensor<T> res = Tensor<T>::from_values(a.shape(), a.values());
    finish_op(res, "corrupt_identity", {a.node()},
              [an = a.node(), on = res.node().get()] {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  const auto& g = on->grad;
                  for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * T(1.01);
              });
    return res;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace detail

// Central-difference verification of every differentiable building block, plus
// a small end-to-end model. Spatial extents scale with `scale`; runs in f64.
inline std::vector<GradCheckResult> run_gradcheck_suite(int scale = 1, bool corrupt = false) {
    if (scale < 1) throw UsageError("gradcheck: scale must be >= 1");
    using D = double;
    constexpr double kEps = 1e-5;
    constexpr double kLayerTol = 1e-6;
    constexpr double kModelTol = 1e-4;
    std::vector<GradCheckResult> results;
    const int s4 = 4 * scale;

    auto record = [&](const std::string& name, double err, double tol) {
        results.push_back({name, err, tol, err < tol});
    };

    {
        Rng rng(101);
        auto x = detail::random_tensor({2, s4, s4, s4}, rng);
        x.set_requires_grad(true);
        auto k = detail::random_tensor({3, 2, 3, 3, 3}, rng, -0.5, 0.5);
        k.set_requires_grad(true);
        auto b = detail::random_tensor({3}, rng, -0.1, 0.1);
        b.set_requires_grad(true);
        auto f = [&] {
            auto y = conv3d(x, k, b, 1, 1);
            if (corrupt) y = detail::corrupt_identity(y);
            return sum(mul(y, y));
        };
        record("conv3d", finite_diff_check<D>(f, {x, k, b}, kEps), kLayerTol);
    }
    {
        Rng rng(102);
        auto x = detail::random_tensor({3, s4, s4, s4}, rng);
        x.set_requires_grad(true);
        auto g = detail::random_tensor({3}, rng, 0.5, 1.5);
        g.set_requires_grad(true);
        auto b = detail::random_tensor({3}, rng, -0.5, 0.5);
        b.set_requires_grad(true);
        // Weight by a fixed random field: a plain sum of squares barely depends
        // on the input (normalization cancels it up to O(eps)), which would
        // leave the finite differences dominated by rounding noise.
        auto w = detail::random_tensor({3, s4, s4, s4}, rng);
        auto f = [&] {
            auto y = instance_norm(x, g, b);
            return sum(mul(w, add(y, mul(y, y))));
        };
        record("instance_norm", finite_diff_check<D>(f, {x, g, b}, kEps), kLayerTol);
    }
    {
        Rng rng(103);
        auto a = detail::random_tensor({2, s4, s4, s4}, rng);
        a.set_requires_grad(true);
        auto b = detail::random_tensor({2, s4, s4, s4}, rng);
        b.set_requires_grad(true);
        // Two conditioning tweaks so the relative-error measure stays meaningful:
        // keep b away from 0, where tanh(b) ~ 0 shrinks some true gradients to
        // the finite-difference noise floor, and keep a - b off the relu kink.
        for (size_t i = 0; i < a.values().size(); ++i) {
            double& bi = b.values()[i];
            bi = (bi < 0 ? -1.0 : 1.0) * (0.1 + 0.9 * std::fabs(bi));
            const double d = a.values()[i] - bi;
            if (std::fabs(d) < 1e-3) bi = a.values()[i] - (d < 0 ? -1e-3 : 1e-3);
        }
        auto f = [&] {
            auto u = mul(sigmoid(a), tanh(b));
            auto v = relu(sub(a, b));
            return sum(add(mul(u, u), v));
        };
        record("elementwise", finite_diff_check<D>(f, {a, b}, kEps), kLayerTol);
    }
    {
        Rng rng(104);
        auto x = detail::random_tensor({2, s4, s4, s4}, rng);
        x.set_requires_grad(true);
        auto f = [&] {
            auto up = upsample3d_nearest(x, 2);
            auto down = avgpool3d(x, 2);
            return add(sum(mul(up, up)), sum(mul(down, down)));
        };
        record("resample", finite_diff_check<D>(f, {x}, kEps), kLayerTol);
    }
    {
        Rng rng(105);
        ResBlock<D> block(2, 3, rng);
        auto x = detail::random_tensor({2, s4, s4, s4}, rng);
        x.set_requires_grad(true);
        ParamList<D> params;
        block.register_params("rb", params);
        std::vector<Tensor<D>> all{x};
        for (auto& p : params) all.push_back(p.tensor);
        auto f = [&] { return sum(mul(block.forward(x), block.forward(x))); };
        record("res_block", finite_diff_check<D>(f, all, kEps), kLayerTol);
    }
    {
        Rng rng(106);
        ConvGRUCell<D> cell(2, 2, rng);
        auto h = detail::random_tensor({2, 3 * scale, 3 * scale, 3 * scale}, rng, -0.5, 0.5);
        h.set_requires_grad(true);
        auto x = detail::random_tensor({2, 3 * scale, 3 * scale, 3 * scale}, rng);
        x.set_requires_grad(true);
        ParamList<D> params;
        cell.register_params("gru", params);
        std::vector<Tensor<D>> all{h, x};
        for (auto& p : params) all.push_back(p.tensor);
        auto f = [&] { return sum(mul(cell.step(h, x), cell.step(h, x))); };
        record("convgru_step", finite_diff_check<D>(f, all, kEps), kLayerTol);
    }
    {
        Rng rng(107);
        // Probabilities away from 0/1 so the central difference stays clean.
        auto p = detail::random_tensor({1, s4, s4, s4}, rng, 0.05, 0.95);
        p.set_requires_grad(true);
        Tensor<D> target = Tensor<D>::zeros({1, s4, s4, s4});
        for (auto& v : target.values()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
        auto f = [&] { return soft_dice_bce_loss(p, target); };
        record("soft_dice_bce_loss", finite_diff_check<D>(f, {p}, kEps), kLayerTol);
    }
    {
        // Tiny but complete model: every parameter of a two-level recurrent
        // network against the finite difference of the training loss.
        ModelConfig mc;
        mc.levels = 2;
        mc.base_channels = 2;
        mc.seed = 108;
        auto model = SegModel<D>::build(mc);
        Rng rng(109);
        const int e8 = 8 * scale;
        std::vector<Tensor<D>> series;
        for (int t = 0; t < 3; ++t) series.push_back(detail::random_tensor({1, e8, e8, e8}, rng, 0.0, 1.0));
        Tensor<D> target = Tensor<D>::zeros({1, e8, e8, e8});
        for (auto& v : target.values()) v = rng.bernoulli(0.2) ? 1.0 : 0.0;
        std::vector<Tensor<D>> params;
        for (auto& p : model.params()) params.push_back(p.tensor);
        auto f = [&] { return soft_dice_bce_loss(model.forward(series), target); };
        record("model_end_to_end", finite_diff_check<D>(f, params, kEps), kModelTol);
    }
    return results;
}

}  // namespace lact
