#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lact/tensor.hpp"

namespace lact {

namespace detail {

struct ConvDims {
    int cin, D, H, W;
    int cout, k;
    int stride, pad;
    int OD, OH, OW;
};

inline int conv_out_extent(int in, int k, int stride, int pad, const char* axis) {
    const int num = in + 2 * pad - k;
    if (num < 0 || num % stride != 0)
        throw UsageError(std::string("conv3d: non-integral output size along ") + axis + " (" +
                         std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
                         std::to_string(k) + " not divisible by stride " + std::to_string(stride) + ")");
    return num / stride + 1;
}

inline ConvDims conv_dims_checked(const Shape& in, const Shape& ker, const Shape* bias,
                                  int stride, int pad) {
    if (in.size() != 4)
        throw UsageError("conv3d: input must be rank 4 [C, D, H, W], got " + shape_str(in));
    if (ker.size() != 5)
        throw UsageError("conv3d: kernel must be rank 5 [C_out, C_in, k, k, k], got " + shape_str(ker));
    if (ker[2] != ker[3] || ker[3] != ker[4])
        throw UsageError("conv3d: kernel must be cubic, got " + shape_str(ker));
    if (ker[2] % 2 == 0)
        throw UsageError("conv3d: kernel extent must be odd, got " + std::to_string(ker[2]));
    if (stride < 1) throw UsageError("conv3d: stride must be >= 1, got " + std::to_string(stride));
    if (pad < 0) throw UsageError("conv3d: padding must be >= 0, got " + std::to_string(pad));
    if (in[0] != ker[1])
        throw UsageError("conv3d: input has " + std::to_string(in[0]) +
                         " channels (input " + shape_str(in) + ") but kernel expects " +
                         std::to_string(ker[1]) + " (kernel " + shape_str(ker) + ")");
    if (bias && (bias->size() != 1 || (*bias)[0] != ker[0]))
        throw UsageError("conv3d: bias must have shape [" + std::to_string(ker[0]) + "], got " +
                         shape_str(*bias));
    ConvDims d;
    d.cin = in[0];
    d.D = in[1];
    d.H = in[2];
    d.W = in[3];
    d.cout = ker[0];
    d.k = ker[2];
    d.stride = stride;
    d.pad = pad;
    d.OD = conv_out_extent(d.D, d.k, stride, pad, "depth");
    d.OH = conv_out_extent(d.H, d.k, stride, pad, "height");
    d.OW = conv_out_extent(d.W, d.k, stride, pad, "width");
    return d;
}

// Inclusive range of output coordinates whose receptive field, at kernel
// offset koff, stays inside [0, din).
struct KRange {
    int lo, hi;
};

inline KRange krange(int din, int dout, int koff, int stride, int pad) {
    int lo = 0;
    const int num = pad - koff;
    if (num > 0) lo = (num + stride - 1) / stride;
    int hi = din - 1 + pad - koff;
    hi = hi >= 0 ? hi / stride : -1;
    if (hi > dout - 1) hi = dout - 1;
    return {lo, hi};
}

// Cross-correlation (no kernel flip). The ow loop runs over contiguous memory
// in both source and destination for stride 1, which is what the optimizer
// needs to vectorize the hot path.
template <typename T>
void conv3d_forward_kernel(const T* in, const T* ker, const T* bias, T* out, const ConvDims& d) {
    const int k = d.k, s = d.stride, p = d.pad;
    const int64_t in_cs = static_cast<int64_t>(d.D) * d.H * d.W;
    const int64_t out_cs = static_cast<int64_t>(d.OD) * d.OH * d.OW;
    for (int co = 0; co < d.cout; ++co) {
        T* oc = out + co * out_cs;
        std::fill(oc, oc + out_cs, bias ? bias[co] : T(0));
        for (int ci = 0; ci < d.cin; ++ci) {
            const T* ic = in + ci * in_cs;
            const T* kc = ker + (static_cast<int64_t>(co) * d.cin + ci) * k * k * k;
            for (int kd = 0; kd < k; ++kd) {
                const KRange rd = krange(d.D, d.OD, kd, s, p);
                for (int kh = 0; kh < k; ++kh) {
                    const KRange rh = krange(d.H, d.OH, kh, s, p);
                    for (int kw = 0; kw < k; ++kw) {
                        const KRange rw = krange(d.W, d.OW, kw, s, p);
                        if (rw.lo > rw.hi) continue;
                        const T w = kc[(kd * k + kh) * k + kw];
                        for (int od = rd.lo; od <= rd.hi; ++od) {
                            const int id = od * s - p + kd;
                            for (int oh = rh.lo; oh <= rh.hi; ++oh) {
                                const int ih = oh * s - p + kh;
                                const T* src = ic + (static_cast<int64_t>(id) * d.H + ih) * d.W;
                                T* dst = oc + (static_cast<int64_t>(od) * d.OH + oh) * d.OW;
                                if (s == 1) {
                                    const int shift = kw - p;
                                    for (int ow = rw.lo; ow <= rw.hi; ++ow)
                                        dst[ow] += w * src[ow + shift];
                                } else {
                                    for (int ow = rw.lo; ow <= rw.hi; ++ow)
                                        dst[ow] += w * src[ow * s - p + kw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// Gradients w.r.t. whichever of gin/gker/gbias is non-null. Same range logic
// as the forward pass: kernel grads are row dot products, input grads scatter
// the output gradient back through each kernel offset.
template <typename T>
void conv3d_backward_kernel(const T* in, const T* ker, const T* gout,
                            T* gin, T* gker, T* gbias, const ConvDims& d) {
    const int k = d.k, s = d.stride, p = d.pad;
    const int64_t in_cs = static_cast<int64_t>(d.D) * d.H * d.W;
    const int64_t out_cs = static_cast<int64_t>(d.OD) * d.OH * d.OW;

    if (gbias) {
        for (int co = 0; co < d.cout; ++co) {
            const T* gc = gout + co * out_cs;
            T acc = T(0);
            for (int64_t i = 0; i < out_cs; ++i) acc += gc[i];
            gbias[co] += acc;
        }
    }

    if (gker) {
        for (int co = 0; co < d.cout; ++co) {
            const T* gc = gout + co * out_cs;
            for (int ci = 0; ci < d.cin; ++ci) {
                const T* ic = in + ci * in_cs;
                T* kc = gker + (static_cast<int64_t>(co) * d.cin + ci) * k * k * k;
                for (int kd = 0; kd < k; ++kd) {
                    const KRange rd = krange(d.D, d.OD, kd, s, p);
                    for (int kh = 0; kh < k; ++kh) {
                        const KRange rh = krange(d.H, d.OH, kh, s, p);
                        for (int kw = 0; kw < k; ++kw) {
                            const KRange rw = krange(d.W, d.OW, kw, s, p);
                            if (rw.lo > rw.hi) continue;
                            T acc = T(0);
                            for (int od = rd.lo; od <= rd.hi; ++od) {
                                const int id = od * s - p + kd;
                                for (int oh = rh.lo; oh <= rh.hi; ++oh) {
                                    const int ih = oh * s - p + kh;
                                    const T* src = ic + (static_cast<int64_t>(id) * d.H + ih) * d.W;
                                    const T* grow = gc + (static_cast<int64_t>(od) * d.OH + oh) * d.OW;
                                    if (s == 1) {
                                        const int shift = kw - p;
                                        for (int ow = rw.lo; ow <= rw.hi; ++ow)
                                            acc += grow[ow] * src[ow + shift];
                                    } else {
                                        for (int ow = rw.lo; ow <= rw.hi; ++ow)
                                            acc += grow[ow] * src[ow * s - p + kw];
                                    }
                                }
                            }
                            kc[(kd * k + kh) * k + kw] += acc;
                        }
                    }
                }
            }
        }
    }

    if (gin) {
        for (int ci = 0; ci < d.cin; ++ci) {
            T* gic = gin + ci * in_cs;
            for (int co = 0; co < d.cout; ++co) {
                const T* gc = gout + co * out_cs;
                const T* kc = ker + (static_cast<int64_t>(co) * d.cin + ci) * k * k * k;
                for (int kd = 0; kd < k; ++kd) {
                    const KRange rd = krange(d.D, d.OD, kd, s, p);
                    for (int kh = 0; kh < k; ++kh) {
                        const KRange rh = krange(d.H, d.OH, kh, s, p);
                        for (int kw = 0; kw < k; ++kw) {
                            const KRange rw = krange(d.W, d.OW, kw, s, p);
                            if (rw.lo > rw.hi) continue;
                            const T w = kc[(kd * k + kh) * k + kw];
                            for (int od = rd.lo; od <= rd.hi; ++od) {
                                const int id = od * s - p + kd;
                                for (int oh = rh.lo; oh <= rh.hi; ++oh) {
                                    const int ih = oh * s - p + kh;
                                    T* dst = gic + (static_cast<int64_t>(id) * d.H + ih) * d.W;
                                    const T* grow = gc + (static_cast<int64_t>(od) * d.OH + oh) * d.OW;
                                    if (s == 1) {
                                        const int shift = kw - p;
                                        for (int ow = rw.lo; ow <= rw.hi; ++ow)
                                            dst[ow + shift] += w * grow[ow];
                                    } else {
                                        for (int ow = rw.lo; ow <= rw.hi; ++ow)
                                            dst[ow * s - p + kw] += w * grow[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv3d_impl(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                      int stride, int pad) {
    const Shape* bshape = bias ? &bias->shape() : nullptr;
    const ConvDims d = conv_dims_checked(input.shape(), kernel.shape(), bshape, stride, pad);
    Tensor<T> res = Tensor<T>::zeros({d.cout, d.OD, d.OH, d.OW});
    conv3d_forward_kernel(input.values().data(), kernel.values().data(),
                          bias ? bias->values().data() : nullptr, res.values().data(), d);

    std::vector<NodePtr<T>> inputs{input.node(), kernel.node()};
    NodePtr<T> bn = bias ? bias->node() : nullptr;
    if (bn) inputs.push_back(bn);
    detail::finish_op(res, "conv3d", inputs,
                      [in = input.node(), kn = kernel.node(), bn, on = res.node().get(), d] {
                          T* gin = nullptr;
                          T* gker = nullptr;
                          T* gbias = nullptr;
                          if (in->requires_grad) {
                              in->ensure_grad();
                              gin = in->grad.data();
                          }
                          if (kn->requires_grad) {
                              kn->ensure_grad();
                              gker = kn->grad.data();
                          }
                          if (bn && bn->requires_grad) {
                              bn->ensure_grad();
                              gbias = bn->grad.data();
                          }
                          conv3d_backward_kernel(in->values.data(), kn->values.data(),
                                                 on->grad.data(), gin, gker, gbias, d);
                      });
    return res;
}

}  // namespace detail

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride = 1, int padding = 0) {
    return detail::conv3d_impl(input, kernel, &bias, stride, padding);
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1, int padding = 0) {
    return detail::conv3d_impl<T>(input, kernel, nullptr, stride, padding);
}

// Per-channel normalization over the spatial extent (biased variance), then an
// affine transform: y = gamma * (x - mean) / sqrt(var + eps) + beta.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                        double eps = 1e-5) {
    const Shape& s = input.shape();
    if (s.size() != 4)
        throw UsageError("instance_norm: input must be rank 4 [C, D, H, W], got " + shape_str(s));
    const int C = s[0];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw UsageError("instance_norm: gamma/beta must have shape [" + std::to_string(C) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    if (!(eps > 0)) throw UsageError("instance_norm: eps must be positive");

    const int64_t n = static_cast<int64_t>(s[1]) * s[2] * s[3];
    const auto& x = input.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<T> out(x.size());
    std::vector<T> mean(C), inv_std(C);
    for (int c = 0; c < C; ++c) {
        const T* xc = x.data() + c * n;
        T m = T(0);
        for (int64_t i = 0; i < n; ++i) m += xc[i];
        m /= T(n);
        T var = T(0);
        for (int64_t i = 0; i < n; ++i) {
            const T dxi = xc[i] - m;
            var += dxi * dxi;
        }
        var /= T(n);
        mean[c] = m;
        inv_std[c] = T(1) / std::sqrt(var + T(eps));
        T* oc = out.data() + c * n;
        for (int64_t i = 0; i < n; ++i) oc[i] = gv[c] * (xc[i] - m) * inv_std[c] + bv[c];
    }
    Tensor<T> res = Tensor<T>::from_values(s, std::move(out));
    detail::finish_op(
        res, "instance_norm", {input.node(), gamma.node(), beta.node()},
        [in = input.node(), gn = gamma.node(), bn = beta.node(), on = res.node().get(),
         mean = std::move(mean), inv_std = std::move(inv_std), C, n] {
            const auto& g = on->grad;
            const auto& x = in->values;
            for (int c = 0; c < C; ++c) {
                const T* xc = x.data() + c * n;
                const T* gc = g.data() + c * n;
                const T m = mean[c], r = inv_std[c];
                // Sums shared by every parameter gradient for this channel.
                T sum_g = T(0), sum_gx = T(0);
                for (int64_t i = 0; i < n; ++i) {
                    sum_g += gc[i];
                    sum_gx += gc[i] * (xc[i] - m) * r;
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[c] += sum_gx;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[c] += sum_g;
                }
                if (in->requires_grad) {
                    in->ensure_grad();
                    T* gic = in->grad.data() + c * n;
                    const T gamma_r = gn->values[c] * r;
                    const T mg = sum_g / T(n), mgx = sum_gx / T(n);
                    for (int64_t i = 0; i < n; ++i) {
                        const T xhat = (xc[i] - m) * r;
                        gic[i] += gamma_r * (gc[i] - mg - xhat * mgx);
                    }
                }
            }
        });
    return res;
}

// Non-overlapping box average over factor^3 blocks. Spatial extents must be
// exact multiples of the factor.
template <typename T>
Tensor<T> avgpool3d(const Tensor<T>& input, int factor) {
    const Shape& s = input.shape();
    if (s.size() != 4)
        throw UsageError("avgpool3d: input must be rank 4 [C, D, H, W], got " + shape_str(s));
    if (factor < 1) throw UsageError("avgpool3d: factor must be >= 1, got " + std::to_string(factor));
    for (int axis = 1; axis < 4; ++axis)
        if (s[axis] % factor != 0)
            throw UsageError("avgpool3d: extent " + std::to_string(s[axis]) + " of " +
                             shape_str(s) + " is not divisible by factor " + std::to_string(factor));
    const int C = s[0], OD = s[1] / factor, OH = s[2] / factor, OW = s[3] / factor;
    const int D = s[1], H = s[2], W = s[3];
    const T norm = T(1) / T(factor * factor * factor);
    const auto& x = input.values();
    std::vector<T> out(static_cast<size_t>(C) * OD * OH * OW);
    for (int c = 0; c < C; ++c)
        for (int od = 0; od < OD; ++od)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    T acc = T(0);
                    for (int dd = 0; dd < factor; ++dd)
                        for (int dh = 0; dh < factor; ++dh) {
                            const T* src = x.data() +
                                (((static_cast<int64_t>(c) * D + od * factor + dd) * H +
                                  oh * factor + dh) * W + ow * factor);
                            for (int dw = 0; dw < factor; ++dw) acc += src[dw];
                        }
                    out[((static_cast<int64_t>(c) * OD + od) * OH + oh) * OW + ow] = acc * norm;
                }
    Tensor<T> res = Tensor<T>::from_values({C, OD, OH, OW}, std::move(out));
    detail::finish_op(res, "avgpool3d", {input.node()},
                      [in = input.node(), on = res.node().get(), C, D, H, W, OD, OH, OW, factor, norm] {
                          if (!in->requires_grad) return;
                          in->ensure_grad();
                          const auto& g = on->grad;
                          for (int c = 0; c < C; ++c)
                              for (int od = 0; od < OD; ++od)
                                  for (int oh = 0; oh < OH; ++oh)
                                      for (int ow = 0; ow < OW; ++ow) {
                                          const T gv = g[((static_cast<int64_t>(c) * OD + od) * OH + oh) * OW + ow] * norm;
                                          for (int dd = 0; dd < factor; ++dd)
                                              for (int dh = 0; dh < factor; ++dh) {
                                                  T* dst = in->grad.data() +
                                                      (((static_cast<int64_t>(c) * D + od * factor + dd) * H +
                                                        oh * factor + dh) * W + ow * factor);
                                                  for (int dw = 0; dw < factor; ++dw) dst[dw] += gv;
                                              }
                                      }
                      });
    return res;
}

// Nearest-neighbor upsampling: each voxel becomes a factor^3 block.
template <typename T>
Tensor<T> upsample3d_nearest(const Tensor<T>& input, int factor) {
    const Shape& s = input.shape();
    if (s.size() != 4)
        throw UsageError("upsample3d_nearest: input must be rank 4 [C, D, H, W], got " + shape_str(s));
    if (factor < 1)
        throw UsageError("upsample3d_nearest: factor must be >= 1, got " + std::to_string(factor));
    const int C = s[0], D = s[1], H = s[2], W = s[3];
    const int OD = D * factor, OH = H * factor, OW = W * factor;
    const auto& x = input.values();
    std::vector<T> out(static_cast<size_t>(C) * OD * OH * OW);
    for (int c = 0; c < C; ++c)
        for (int od = 0; od < OD; ++od)
            for (int oh = 0; oh < OH; ++oh) {
                const T* src = x.data() +
                    ((static_cast<int64_t>(c) * D + od / factor) * H + oh / factor) * W;
                T* dst = out.data() + ((static_cast<int64_t>(c) * OD + od) * OH + oh) * OW;
                for (int ow = 0; ow < OW; ++ow) dst[ow] = src[ow / factor];
            }
    Tensor<T> res = Tensor<T>::from_values({C, OD, OH, OW}, std::move(out));
    detail::finish_op(res, "upsample3d_nearest", {input.node()},
                      [in = input.node(), on = res.node().get(), C, D, H, W, OD, OH, factor] {
                          if (!in->requires_grad) return;
                          in->ensure_grad();
                          const auto& g = on->grad;
                          const int OW2 = W * factor;
                          for (int c = 0; c < C; ++c)
                              for (int od = 0; od < OD; ++od)
                                  for (int oh = 0; oh < OH; ++oh) {
                                      const T* grow = g.data() +
                                          ((static_cast<int64_t>(c) * OD + od) * OH + oh) * OW2;
                                      T* dst = in->grad.data() +
                                          ((static_cast<int64_t>(c) * D + od / factor) * H + oh / factor) * W;
                                      for (int ow = 0; ow < OW2; ++ow) dst[ow / factor] += grow[ow];
                                  }
                      });
    return res;
}

}  // namespace lact
