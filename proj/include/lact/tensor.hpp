#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "lact/common.hpp"

namespace lact {

namespace autodiff {

inline bool& grad_enabled_flag() {
    static thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_enabled_flag(); }

// Scoped "inference mode": ops built under the guard are plain value
// computations — nothing is recorded and no input references are retained.
struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
    ~NoGradGuard() { grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace autodiff

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void()> backward_step;

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), T(0));
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

}  // namespace detail

// The tape: an append-only record of tracked ops. Append order is a valid
// topological order of the data flow, so the backward pass is simply a walk in
// exact reverse append order. backward() consumes the tape; a fresh forward
// pass rebuilds it from scratch.
template <typename T>
class Graph {
public:
    static Graph& active() {
        static thread_local Graph g;
        return g;
    }

    void record(detail::NodePtr<T> n) { tape_.push_back(std::move(n)); }
    size_t size() const { return tape_.size(); }
    void clear() { tape_.clear(); }

    void backward_from(const detail::NodePtr<T>& loss) {
        loss->ensure_grad();
        loss->grad[0] = T(1);
        // Nodes that never received a gradient are not on any path to the loss
        // and are skipped; everything else runs consumer-before-producer.
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            detail::Node<T>* n = it->get();
            if (!n->grad.empty() && n->backward_step) n->backward_step();
        }
        clear();
    }

private:
    std::vector<detail::NodePtr<T>> tape_;
};

template <typename T>
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

    static Tensor zeros(Shape shape) {
        Tensor t;
        check_shape_positive(shape, "Tensor");
        t.node_->values.assign(static_cast<size_t>(numel(shape)), T(0));
        t.node_->shape = std::move(shape);
        return t;
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.node_->values) v = value;
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<T> values) {
        check_shape_positive(shape, "Tensor");
        if (numel(shape) != static_cast<int64_t>(values.size()))
            throw UsageError("Tensor: shape " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(values.size()));
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->values = std::move(values);
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return static_cast<int64_t>(node_->values.size()); }

    std::vector<T>& values() { return node_->values; }
    const std::vector<T>& values() const { return node_->values; }

    T scalar() const {
        if (size() != 1)
            throw UsageError("scalar() on tensor of shape " + shape_str(node_->shape));
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<T>& grad() {
        if (!has_grad())
            throw UsageError("tensor has no gradient (op: " + std::string(node_->op) + ")");
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        return const_cast<Tensor*>(this)->grad();
    }
    void zero_grad() { node_->grad.clear(); }

    detail::NodePtr<T> node() const { return node_; }

private:
    detail::NodePtr<T> node_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    Graph<T>::active().backward_from(loss.node());
}

namespace detail {

#ifndef NDEBUG
template <typename T>
inline bool all_finite(const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}
#endif

// Attach autodiff bookkeeping to a freshly computed result. When nothing in
// the inputs needs gradients (or grads are globally off) the result stays a
// plain tensor and the closure is dropped, so no activation memory is pinned.
template <typename T>
inline void finish_op(Tensor<T>& result, const char* op,
                      std::vector<NodePtr<T>> inputs, std::function<void()> step) {
#ifndef NDEBUG
    // Debug builds assert that finite inputs never produce non-finite outputs.
    bool inputs_finite = true;
    for (const auto& in : inputs)
        if (!all_finite(in->values)) {
            inputs_finite = false;
            break;
        }
    if (inputs_finite && !all_finite(result.values()))
        throw NumericError(std::string("non-finite values produced by op \"") + op + "\"");
#endif
    result.node()->op = op;
    if (!autodiff::grad_enabled()) return;
    bool tracked = false;
    for (const auto& in : inputs)
        if (in->requires_grad) {
            tracked = true;
            break;
        }
    if (!tracked) return;
    auto n = result.node();
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_step = std::move(step);
    Graph<T>::active().record(n);
}

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ops -------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("add", a, b);
    std::vector<T> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Tensor<T> res = Tensor<T>::from_values(a.shape(), std::move(out));
    detail::finish_op(res, "add", {a.node(), b.node()},
                      [an = a.node(), bn = b.node(), on = res.node().get()] {
                          const auto& g = on->grad;
                          if (an->requires_grad) {
                              an->ensure_grad();
                              for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                          }
                          if (bn->requires_grad) {
                              bn->ensure_grad();
                              for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
                          }
                      });
    return res;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("sub", a, b);
    std::vector<T> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    Tensor<T> res = Tensor<T>::from_values(a.shape(), std::move(out));
    detail::finish_op(res, "sub", {a.node(), b.node()},
                      [an = a.node(), bn = b.node(), on = res.node().get()] {
                          const auto& g = on->grad;
                          if (an->requires_grad) {
                              an->ensure_grad();
                              for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                          }
                          if (bn->requires_grad) {
                              bn->ensure_grad();
                              for (size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
                          }
                      });
    return res;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("mul", a, b);
    std::vector<T> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Tensor<T> res = Tensor<T>::from_values(a.shape(), std::move(out));
    // a and b may alias the same node (x*x); accumulation handles that case.
    detail::finish_op(res, "mul", {a.node(), b.node()},
                      [an = a.node(), bn = b.node(), on = res.node().get()] {
                          const auto& g = on->grad;
                          if (an->requires_grad) {
                              an->ensure_grad();
                              const auto& bv2 = bn->values;
                              for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bv2[i];
                          }
                          if (bn->requires_grad) {
                              bn->ensure_grad();
                              const auto& av2 = an->values;
                              for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * av2[i];
                          }
                      });
    return res;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> out(a.values().size());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) {
        const T x = av[i];
        if (x >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-x));
        } else {
            const T e = std::exp(x);
            out[i] = e / (T(1) + e);
        }
    }
    Tensor<T> res = Tensor<T>::from_values(a.shape(), std::move(out));
    detail::finish_op(res, "sigmoid", {a.node()},
                      [an = a.node(), on = res.node().get()] {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          const auto& g = on->grad;
                          const auto& y = on->values;
                          for (size_t i = 0; i < g.size(); ++i)
                              an->grad[i] += g[i] * y[i] * (T(1) - y[i]);
                      });
    return res;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    std::vector<T> out(a.values().size());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
    Tensor<T> res = Tensor<T>::from_values(a.shape(), std::move(out));
    detail::finish_op(res, "tanh", {a.node()},
                      [an = a.node(), on = res.node().get()] {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          const auto& g = on->grad;
                          const auto& y = on->values;
                          for (size_t i = 0; i < g.size(); ++i)
                              an->grad[i] += g[i] * (T(1) - y[i] * y[i]);
                      });
    return res;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.values());
    for (auto& v : out)
        if (v < T(0)) v = T(0);
    Tensor<T> res = Tensor<T>::from_values(a.shape(), std::move(out));
    detail::finish_op(res, "relu", {a.node()},
                      [an = a.node(), on = res.node().get()] {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          const auto& g = on->grad;
                          const auto& x = an->values;
                          for (size_t i = 0; i < g.size(); ++i)
                              if (x[i] > T(0)) an->grad[i] += g[i];
                      });
    return res;
}

// Single dispatcher over the elementwise kernels; the named functions above
// are the usual entry points.
enum class EwKind { add, sub, mul, sigmoid, tanh, relu };

template <typename T>
Tensor<T> elementwise(EwKind kind, const Tensor<T>& a, const Tensor<T>* b = nullptr) {
    const bool binary = (kind == EwKind::add || kind == EwKind::sub || kind == EwKind::mul);
    if (binary && b == nullptr)
        throw UsageError("elementwise: binary op needs two operands");
    if (!binary && b != nullptr)
        throw UsageError("elementwise: unary op takes one operand");
    switch (kind) {
        case EwKind::add: return add(a, *b);
        case EwKind::sub: return sub(a, *b);
        case EwKind::mul: return mul(a, *b);
        case EwKind::sigmoid: return sigmoid(a);
        case EwKind::tanh: return tanh(a);
        case EwKind::relu: return relu(a);
    }
    throw UsageError("elementwise: unknown op kind");
}

// ---- reductions and shape ops ---------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.values()) acc += v;
    Tensor<T> res = Tensor<T>::from_values({1}, {acc});
    detail::finish_op(res, "sum", {a.node()},
                      [an = a.node(), on = res.node().get()] {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          const T g = on->grad[0];
                          for (auto& gv : an->grad) gv += g;
                      });
    return res;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    check_shape_positive(new_shape, "reshape");
    if (numel(new_shape) != a.size())
        throw UsageError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    Tensor<T> res = Tensor<T>::from_values(std::move(new_shape), a.values());
    detail::finish_op(res, "reshape", {a.node()},
                      [an = a.node(), on = res.node().get()] {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          const auto& g = on->grad;
                          for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                      });
    return res;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& a) {
    return reshape(a, {static_cast<int>(a.size())});
}

// Concatenate rank-4 [C, D, H, W] tensors along the channel axis. Channels are
// the outermost axis, so each part is one contiguous block of the result.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_channels: empty input list");
    const Shape& first = parts[0].shape();
    if (first.size() != 4)
        throw UsageError("concat_channels: expected rank-4 [C, D, H, W] tensors, got " +
                         shape_str(first));
    int channels = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != 4 || s[1] != first[1] || s[2] != first[2] || s[3] != first[3])
            throw UsageError("concat_channels: spatial shapes differ: " + shape_str(first) +
                             " vs " + shape_str(s));
        channels += s[0];
    }
    std::vector<T> out;
    out.reserve(static_cast<size_t>(channels) * first[1] * first[2] * first[3]);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor<T> res = Tensor<T>::from_values({channels, first[1], first[2], first[3]}, std::move(out));

    std::vector<detail::NodePtr<T>> inputs;
    inputs.reserve(parts.size());
    for (const auto& p : parts) inputs.push_back(p.node());
    detail::finish_op(res, "concat_channels", inputs,
                      [ins = inputs, on = res.node().get()] {
                          const auto& g = on->grad;
                          size_t offset = 0;
                          for (const auto& in : ins) {
                              const size_t n = in->values.size();
                              if (in->requires_grad) {
                                  in->ensure_grad();
                                  for (size_t i = 0; i < n; ++i) in->grad[i] += g[offset + i];
                              }
                              offset += n;
                          }
                      });
    return res;
}

}  // namespace lact
