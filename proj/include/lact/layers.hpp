#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lact/ops.hpp"
#include "lact/rng.hpp"
#include "lact/tensor.hpp"

namespace lact {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<Param<T>>;

template <typename T>
int64_t param_count(const ParamList<T>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

namespace detail {

// He/Kaiming uniform: bound = sqrt(6 / fan_in).
template <typename T>
Tensor<T> he_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    t.set_requires_grad(true);
    return t;
}

}  // namespace detail

template <typename T>
struct Conv3dLayer {
    Tensor<T> kernel;  // [C_out, C_in, k, k, k]
    Tensor<T> bias;    // [C_out]; empty when constructed without one
    int stride = 1;
    int padding = 0;

    Conv3dLayer() = default;

    // with_bias = false is for convolutions whose output goes straight into an
    // instance norm: the mean subtraction would cancel a bias exactly, leaving
    // a parameter with an identically zero gradient.
    Conv3dLayer(int c_in, int c_out, int k, int stride_, int padding_, Rng& rng,
                bool with_bias = true)
        : stride(stride_), padding(padding_) {
        kernel = detail::he_uniform<T>({c_out, c_in, k, k, k},
                                       static_cast<int64_t>(c_in) * k * k * k, rng);
        if (with_bias) {
            bias = Tensor<T>::zeros({c_out});
            bias.set_requires_grad(true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return bias.size() ? conv3d(x, kernel, bias, stride, padding)
                           : conv3d(x, kernel, stride, padding);
    }

    void register_params(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".kernel", kernel});
        if (bias.size()) out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct InstanceNormLayer {
    Tensor<T> gamma;
    Tensor<T> beta;
    double eps = 1e-5;

    InstanceNormLayer() = default;

    explicit InstanceNormLayer(int channels) {
        gamma = Tensor<T>::full({channels}, T(1));
        gamma.set_requires_grad(true);
        beta = Tensor<T>::zeros({channels});
        beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return instance_norm(x, gamma, beta, eps); }

    void register_params(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// Pre-activation residual block: two norm-relu-conv stages plus a skip. The
// skip is the identity when channel counts match, otherwise a 1x1x1 projection.
template <typename T>
struct ResBlock {
    InstanceNormLayer<T> norm1;
    Conv3dLayer<T> conv1;
    InstanceNormLayer<T> norm2;
    Conv3dLayer<T> conv2;
    std::optional<Conv3dLayer<T>> projection;
    int c_in = 0, c_out = 0;

    ResBlock() = default;

    // conv1 carries no bias: its output feeds norm2, which would cancel it.
    ResBlock(int c_in_, int c_out_, Rng& rng)
        : norm1(c_in_),
          conv1(c_in_, c_out_, 3, 1, 1, rng, /*with_bias=*/false),
          norm2(c_out_),
          conv2(c_out_, c_out_, 3, 1, 1, rng),
          c_in(c_in_),
          c_out(c_out_) {
        if (c_in != c_out) projection.emplace(c_in, c_out, 1, 1, 0, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = conv1.forward(relu(norm1.forward(x)));
        h = conv2.forward(relu(norm2.forward(h)));
        const Tensor<T> skip = projection ? projection->forward(x) : x;
        return add(skip, h);
    }

    void register_params(const std::string& prefix, ParamList<T>& out) {
        norm1.register_params(prefix + ".norm1", out);
        conv1.register_params(prefix + ".conv1", out);
        norm2.register_params(prefix + ".norm2", out);
        conv2.register_params(prefix + ".conv2", out);
        if (projection) projection->register_params(prefix + ".projection", out);
    }
};

// Convolutional GRU cell. All six convolutions are 3x3x3, stride 1, padding 1,
// so the hidden state keeps the spatial extent of the input features:
//   z = sigmoid(Wz * x + Uz * h + bz)
//   r = sigmoid(Wr * x + Ur * h + br)
//   cand = tanh(Wh * x + Uh * (r . h) + bh)
//   h' = (1 - z) . h + z . cand
template <typename T>
struct ConvGRUCell {
    Tensor<T> w_update, u_update, b_update;
    Tensor<T> w_reset, u_reset, b_reset;
    Tensor<T> w_cand, u_cand, b_cand;
    int c_x = 0, c_h = 0;

    ConvGRUCell() = default;

    ConvGRUCell(int c_x_, int c_h_, Rng& rng) : c_x(c_x_), c_h(c_h_) {
        const int64_t fan_x = static_cast<int64_t>(c_x) * 27;
        const int64_t fan_h = static_cast<int64_t>(c_h) * 27;
        auto gate = [&](Tensor<T>& w, Tensor<T>& u, Tensor<T>& b) {
            w = detail::he_uniform<T>({c_h, c_x, 3, 3, 3}, fan_x, rng);
            u = detail::he_uniform<T>({c_h, c_h, 3, 3, 3}, fan_h, rng);
            b = Tensor<T>::zeros({c_h});
            b.set_requires_grad(true);
        };
        gate(w_update, u_update, b_update);
        gate(w_reset, u_reset, b_reset);
        gate(w_cand, u_cand, b_cand);
    }

    Tensor<T> step(const Tensor<T>& h_prev, const Tensor<T>& x) const {
        auto z = sigmoid(add(conv3d(x, w_update, b_update, 1, 1), conv3d(h_prev, u_update, 1, 1)));
        auto r = sigmoid(add(conv3d(x, w_reset, b_reset, 1, 1), conv3d(h_prev, u_reset, 1, 1)));
        auto cand = tanh(add(conv3d(x, w_cand, b_cand, 1, 1), conv3d(mul(r, h_prev), u_cand, 1, 1)));
        auto one = Tensor<T>::full(z.shape(), T(1));
        return add(mul(sub(one, z), h_prev), mul(z, cand));
    }

    // Fold a time series of feature maps, oldest first, starting from zeros.
    Tensor<T> aggregate(const std::vector<Tensor<T>>& xs) const {
        if (xs.empty()) throw UsageError("ConvGRUCell: cannot aggregate an empty sequence");
        const Shape& s = xs[0].shape();
        if (s.size() != 4 || s[0] != c_x)
            throw UsageError("ConvGRUCell: expected inputs of shape [" + std::to_string(c_x) +
                             ", D, H, W], got " + shape_str(s));
        Tensor<T> h = Tensor<T>::zeros({c_h, s[1], s[2], s[3]});
        for (const auto& x : xs) h = step(h, x);
        return h;
    }

    void register_params(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".w_update", w_update});
        out.push_back({prefix + ".u_update", u_update});
        out.push_back({prefix + ".b_update", b_update});
        out.push_back({prefix + ".w_reset", w_reset});
        out.push_back({prefix + ".u_reset", u_reset});
        out.push_back({prefix + ".b_reset", b_reset});
        out.push_back({prefix + ".w_cand", w_cand});
        out.push_back({prefix + ".u_cand", u_cand});
        out.push_back({prefix + ".b_cand", b_cand});
    }
};

}  // namespace lact
