#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bccseg/tensor.hpp"

namespace bccseg {

struct Conv2dSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
};

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t padding,
                                 std::int64_t dilation) {
    return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
}

namespace detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// Output range [lo, hi) for which o*stride + base lands inside [0, extent).
inline void valid_out_range(std::int64_t base, std::int64_t stride, std::int64_t extent, std::int64_t out_extent,
                            std::int64_t& lo, std::int64_t& hi) {
    lo = base >= 0 ? 0 : ceil_div(-base, stride);
    // floor division: when the tap starts beyond the input (numerator < 0)
    // there is no valid output; truncation would wrongly admit index 0.
    const std::int64_t num = extent - 1 - base;
    hi = num < 0 ? 0 : std::min<std::int64_t>(out_extent, num / stride + 1);
    if (hi < lo) hi = lo;
}

template <typename T>
void conv2d_forward_kernel(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, Tensor<T>& out,
                           const Conv2dSpec& sp) {
    const std::int64_t N = x.shape.n, C_in = x.shape.c, H = x.shape.h, W = x.shape.w;
    const std::int64_t C_out = w.shape.n, cg = w.shape.c, kH = w.shape.h, kW = w.shape.w;
    const std::int64_t OH = out.shape.h, OW = out.shape.w;
    const std::int64_t s = sp.stride, p = sp.padding, d = sp.dilation;
    const std::int64_t cout_per_group = C_out / sp.groups;
    (void)C_in;

    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t oc = 0; oc < C_out; ++oc) {
            const std::int64_t g = oc / cout_per_group;
            T* optr = out.plane(n, oc);
            const T init = bias ? bias->data[static_cast<std::size_t>(oc)] : T(0);
            std::fill(optr, optr + OH * OW, init);
            for (std::int64_t icg = 0; icg < cg; ++icg) {
                const T* xplane = x.plane(n, g * cg + icg);
                const T* wrow = w.plane(oc, icg);
                for (std::int64_t kh = 0; kh < kH; ++kh) {
                    const std::int64_t ih0 = -p + kh * d;
                    std::int64_t oh_lo, oh_hi;
                    valid_out_range(ih0, s, H, OH, oh_lo, oh_hi);
                    for (std::int64_t kw = 0; kw < kW; ++kw) {
                        const T wv = wrow[kh * kW + kw];
                        const std::int64_t iw0 = -p + kw * d;
                        std::int64_t ow_lo, ow_hi;
                        valid_out_range(iw0, s, W, OW, ow_lo, ow_hi);
                        for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const T* xr = xplane + (oh * s + ih0) * W + (ow_lo * s + iw0);
                            T* orow = optr + oh * OW + ow_lo;
                            const std::int64_t len = ow_hi - ow_lo;
                            if (s == 1) {
                                for (std::int64_t i = 0; i < len; ++i) orow[i] += wv * xr[i];
                            } else {
                                for (std::int64_t i = 0; i < len; ++i) orow[i] += wv * xr[i * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_kernel(Tensor<T>& x, Tensor<T>& w, Tensor<T>* bias, const Tensor<T>& out,
                            const Conv2dSpec& sp) {
    const std::int64_t N = x.shape.n, H = x.shape.h, W = x.shape.w;
    const std::int64_t C_out = w.shape.n, cg = w.shape.c, kH = w.shape.h, kW = w.shape.w;
    const std::int64_t OH = out.shape.h, OW = out.shape.w;
    const std::int64_t s = sp.stride, p = sp.padding, d = sp.dilation;
    const std::int64_t cout_per_group = C_out / sp.groups;

    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t oc = 0; oc < C_out; ++oc) {
            const std::int64_t g = oc / cout_per_group;
            const T* gout = out.grad.data() + out.index(n, oc, 0, 0);
            if (bias && bias->requires_grad) {
                T acc = T(0);
                for (std::int64_t i = 0; i < OH * OW; ++i) acc += gout[i];
                bias->grad[static_cast<std::size_t>(oc)] += acc;
            }
            for (std::int64_t icg = 0; icg < cg; ++icg) {
                const std::int64_t ic = g * cg + icg;
                const T* xplane = x.plane(n, ic);
                T* xg = x.requires_grad ? x.grad.data() + x.index(n, ic, 0, 0) : nullptr;
                const T* wrow = w.plane(oc, icg);
                T* wg = w.requires_grad ? w.grad.data() + w.index(oc, icg, 0, 0) : nullptr;
                for (std::int64_t kh = 0; kh < kH; ++kh) {
                    const std::int64_t ih0 = -p + kh * d;
                    std::int64_t oh_lo, oh_hi;
                    valid_out_range(ih0, s, H, OH, oh_lo, oh_hi);
                    for (std::int64_t kw = 0; kw < kW; ++kw) {
                        const std::int64_t iw0 = -p + kw * d;
                        std::int64_t ow_lo, ow_hi;
                        valid_out_range(iw0, s, W, OW, ow_lo, ow_hi);
                        const std::int64_t len = ow_hi - ow_lo;
                        if (len <= 0) continue;
                        const T wv = wrow[kh * kW + kw];
                        T wacc = T(0);
                        for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const std::int64_t xoff = (oh * s + ih0) * W + (ow_lo * s + iw0);
                            const T* grow = gout + oh * OW + ow_lo;
                            if (xg) {
                                T* xgr = xg + xoff;
                                if (s == 1) {
                                    for (std::int64_t i = 0; i < len; ++i) xgr[i] += wv * grow[i];
                                } else {
                                    for (std::int64_t i = 0; i < len; ++i) xgr[i * s] += wv * grow[i];
                                }
                            }
                            if (wg) {
                                const T* xr = xplane + xoff;
                                if (s == 1) {
                                    for (std::int64_t i = 0; i < len; ++i) wacc += xr[i] * grow[i];
                                } else {
                                    for (std::int64_t i = 0; i < len; ++i) wacc += xr[i * s] * grow[i];
                                }
                            }
                        }
                        if (wg) wg[kh * kW + kw] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding. weight is
// (C_out, C_in/groups, kH, kW); groups = C_in gives the depthwise case.
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    const Conv2dSpec& sp = {}, Tape<T>* tape = nullptr) {
    if (!input || !weight) throw std::invalid_argument("conv2d: null tensor");
    if (sp.stride < 1 || sp.padding < 0 || sp.dilation < 1 || sp.groups < 1)
        throw std::invalid_argument("conv2d: invalid stride/padding/dilation/groups");
    const Shape xs = input->shape, ws = weight->shape;
    if (xs.c % sp.groups != 0)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(xs.c) + " not divisible by groups " +
                                    std::to_string(sp.groups));
    if (ws.n % sp.groups != 0)
        throw std::invalid_argument("conv2d: output channels not divisible by groups");
    if (ws.c != xs.c / sp.groups)
        throw std::invalid_argument("conv2d: weight shape " + ws.str() + " does not match input " + xs.str() +
                                    " with groups " + std::to_string(sp.groups));
    if (bias && bias->numel() != ws.n)
        throw std::invalid_argument("conv2d: bias size must equal output channels");
    const std::int64_t OH = conv_out_dim(xs.h, ws.h, sp.stride, sp.padding, sp.dilation);
    const std::int64_t OW = conv_out_dim(xs.w, ws.w, sp.stride, sp.padding, sp.dilation);
    if (OH <= 0 || OW <= 0)
        throw std::invalid_argument("conv2d: non-positive output dims for input " + xs.str() + " kernel " + ws.str());

    auto out = make_tensor<T>({xs.n, ws.n, OH, OW});
    detail::conv2d_forward_kernel(*input, *weight, bias.get(), *out, sp);
    macs::add(static_cast<std::uint64_t>(xs.n * ws.n * OH * OW * ws.h * ws.w * ws.c));
    check_finite(*out, "conv2d");

    if (tape && (input->requires_grad || weight->requires_grad || (bias && bias->requires_grad))) {
        out->set_requires_grad(true);
        tape->record([input, weight, bias, out, sp] {
            detail::conv2d_backward_kernel(*input, *weight, bias.get(), *out, sp);
        });
    }
    return out;
}

// Spatial depthwise 3x3 (or kxk) stage followed by a 1x1 pointwise stage,
// defined as exactly that two-call composition.
template <typename T>
TensorPtr<T> depthwise_separable_conv(const TensorPtr<T>& input, const TensorPtr<T>& depthwise_weight,
                                      const TensorPtr<T>& pointwise_weight, int stride = 1, int padding = 0,
                                      int dilation = 1, Tape<T>* tape = nullptr) {
    if (!input || !depthwise_weight || !pointwise_weight)
        throw std::invalid_argument("depthwise_separable_conv: null tensor");
    const std::int64_t c_in = input->shape.c;
    if (depthwise_weight->shape.n != c_in || depthwise_weight->shape.c != 1)
        throw std::invalid_argument("depthwise_separable_conv: depthwise weight must be (C_in,1,k,k), got " +
                                    depthwise_weight->shape.str());
    if (pointwise_weight->shape.c != c_in || pointwise_weight->shape.h != 1 || pointwise_weight->shape.w != 1)
        throw std::invalid_argument("depthwise_separable_conv: pointwise weight must be (C_out,C_in,1,1), got " +
                                    pointwise_weight->shape.str());
    Conv2dSpec dw{stride, padding, dilation, static_cast<int>(c_in)};
    auto mid = conv2d(input, depthwise_weight, TensorPtr<T>{}, dw, tape);
    return conv2d(mid, pointwise_weight, TensorPtr<T>{}, Conv2dSpec{}, tape);
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>(x->shape);
    const std::size_t n = x->data.size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    check_finite(*out, "relu");
    if (tape && x->requires_grad) {
        out->set_requires_grad(true);
        tape->record([x, out] {
            for (std::size_t i = 0; i < x->data.size(); ++i)
                if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    if (!(a->shape == b->shape))
        throw std::invalid_argument("add: shape mismatch " + a->shape.str() + " vs " + b->shape.str());
    auto out = make_tensor<T>(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    check_finite(*out, "add");
    if (tape && (a->requires_grad || b->requires_grad)) {
        out->set_requires_grad(true);
        tape->record([a, b, out] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> concat_channels(const std::vector<TensorPtr<T>>& xs, Tape<T>* tape = nullptr) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
    const Shape s0 = xs[0]->shape;
    std::int64_t c_total = 0;
    bool any_grad = false;
    for (const auto& x : xs) {
        if (x->shape.n != s0.n || x->shape.h != s0.h || x->shape.w != s0.w)
            throw std::invalid_argument("concat_channels: mismatched dims " + x->shape.str() + " vs " + s0.str());
        c_total += x->shape.c;
        any_grad = any_grad || x->requires_grad;
    }
    auto out = make_tensor<T>({s0.n, c_total, s0.h, s0.w});
    const std::int64_t hw = s0.h * s0.w;
    for (std::int64_t n = 0; n < s0.n; ++n) {
        std::int64_t oc = 0;
        for (const auto& x : xs) {
            for (std::int64_t c = 0; c < x->shape.c; ++c, ++oc)
                std::copy(x->plane(n, c), x->plane(n, c) + hw, out->plane(n, oc));
        }
    }
    if (tape && any_grad) {
        out->set_requires_grad(true);
        tape->record([xs, out, hw] {
            for (std::int64_t n = 0; n < out->shape.n; ++n) {
                std::int64_t oc = 0;
                for (const auto& x : xs) {
                    for (std::int64_t c = 0; c < x->shape.c; ++c, ++oc) {
                        if (!x->requires_grad) continue;
                        const T* og = out->grad.data() + out->index(n, oc, 0, 0);
                        T* xg = x->grad.data() + x->index(n, c, 0, 0);
                        for (std::int64_t i = 0; i < hw; ++i) xg[i] += og[i];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> global_avg_pool(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
    const Shape s = x->shape;
    if (s.h < 1 || s.w < 1) throw std::invalid_argument("global_avg_pool: empty spatial dims");
    auto out = make_tensor<T>({s.n, s.c, 1, 1});
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* xp = x->plane(n, c);
            T acc = T(0);
            for (std::int64_t i = 0; i < hw; ++i) acc += xp[i];
            out->at(n, c, 0, 0) = acc / static_cast<T>(hw);
        }
    }
    check_finite(*out, "global_avg_pool");
    if (tape && x->requires_grad) {
        out->set_requires_grad(true);
        tape->record([x, out, hw] {
            for (std::int64_t n = 0; n < x->shape.n; ++n)
                for (std::int64_t c = 0; c < x->shape.c; ++c) {
                    const T g = out->grad[static_cast<std::size_t>(out->index(n, c, 0, 0))] / static_cast<T>(hw);
                    T* xg = x->grad.data() + x->index(n, c, 0, 0);
                    for (std::int64_t i = 0; i < hw; ++i) xg[i] += g;
                }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> max_pool(const TensorPtr<T>& x, int k, int stride, int padding, Tape<T>* tape = nullptr) {
    if (k < 1 || stride < 1 || padding < 0 || padding >= k)
        throw std::invalid_argument("max_pool: need k >= 1, stride >= 1, 0 <= padding < k");
    const Shape s = x->shape;
    const std::int64_t OH = conv_out_dim(s.h, k, stride, padding, 1);
    const std::int64_t OW = conv_out_dim(s.w, k, stride, padding, 1);
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("max_pool: non-positive output dims");
    auto out = make_tensor<T>({s.n, s.c, OH, OW});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out->numel()));
    std::size_t oi = 0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* xp = x->plane(n, c);
            const std::int64_t base = x->index(n, c, 0, 0);
            for (std::int64_t oh = 0; oh < OH; ++oh) {
                for (std::int64_t ow = 0; ow < OW; ++ow, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (std::int64_t kh = 0; kh < k; ++kh) {
                        const std::int64_t ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= s.h) continue;
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            const std::int64_t iw = ow * stride - padding + kw;
                            if (iw < 0 || iw >= s.w) continue;
                            const T v = xp[ih * s.w + iw];
                            if (v > best) {
                                best = v;
                                best_idx = base + ih * s.w + iw;
                            }
                        }
                    }
                    out->data[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
            }
        }
    }
    check_finite(*out, "max_pool");
    if (tape && x->requires_grad) {
        out->set_requires_grad(true);
        tape->record([x, out, argmax] {
            for (std::size_t i = 0; i < out->grad.size(); ++i)
                x->grad[static_cast<std::size_t>((*argmax)[i])] += out->grad[i];
        });
    }
    return out;
}

// Batch normalization over (N, H, W) per channel. Training mode normalizes by
// batch statistics (biased variance) and updates the running buffers in
// place; eval mode reads the running buffers only.
template <typename T>
TensorPtr<T> batch_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                        const TensorPtr<T>& running_mean, const TensorPtr<T>& running_var, bool training,
                        T momentum = T(0.9), T eps = T(1e-5), Tape<T>* tape = nullptr) {
    const Shape s = x->shape;
    if (eps <= T(0)) throw std::invalid_argument("batch_norm: eps must be positive");
    for (const auto& t : {gamma, beta, running_mean, running_var}) {
        if (!t || t->numel() != s.c)
            throw std::invalid_argument("batch_norm: per-channel tensor must have C elements");
    }
    const std::int64_t m = s.n * s.h * s.w;
    if (m < 1) throw std::invalid_argument("batch_norm: empty input");
    auto out = make_tensor<T>(s);
    std::vector<T> mean(static_cast<std::size_t>(s.c)), inv_std(static_cast<std::size_t>(s.c));

    for (std::int64_t c = 0; c < s.c; ++c) {
        T mu, var;
        if (training) {
            T acc = T(0);
            for (std::int64_t n = 0; n < s.n; ++n) {
                const T* xp = x->plane(n, c);
                for (std::int64_t i = 0; i < s.h * s.w; ++i) acc += xp[i];
            }
            mu = acc / static_cast<T>(m);
            T vacc = T(0);
            for (std::int64_t n = 0; n < s.n; ++n) {
                const T* xp = x->plane(n, c);
                for (std::int64_t i = 0; i < s.h * s.w; ++i) {
                    const T d = xp[i] - mu;
                    vacc += d * d;
                }
            }
            var = vacc / static_cast<T>(m);
            running_mean->data[c] = momentum * running_mean->data[c] + (T(1) - momentum) * mu;
            running_var->data[c] = momentum * running_var->data[c] + (T(1) - momentum) * var;
        } else {
            mu = running_mean->data[c];
            var = running_var->data[c];
        }
        mean[c] = mu;
        inv_std[c] = T(1) / std::sqrt(var + eps);
        const T g = gamma->data[c], b = beta->data[c], istd = inv_std[c];
        for (std::int64_t n = 0; n < s.n; ++n) {
            const T* xp = x->plane(n, c);
            T* op = out->plane(n, c);
            for (std::int64_t i = 0; i < s.h * s.w; ++i) op[i] = g * (xp[i] - mu) * istd + b;
        }
    }
    check_finite(*out, "batch_norm");

    if (tape && (x->requires_grad || gamma->requires_grad || beta->requires_grad)) {
        out->set_requires_grad(true);
        tape->record([x, gamma, beta, out, training, mean, inv_std, m] {
            const Shape s = x->shape;
            const std::int64_t hw = s.h * s.w;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const T mu = mean[c], istd = inv_std[c], g = gamma->data[c];
                // Channel sums of dy and dy*x_hat feed every element's input
                // gradient in training mode.
                T sum_dy = T(0), sum_dy_xhat = T(0);
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const T* xp = x->plane(n, c);
                    const T* og = out->grad.data() + out->index(n, c, 0, 0);
                    for (std::int64_t i = 0; i < hw; ++i) {
                        sum_dy += og[i];
                        sum_dy_xhat += og[i] * (xp[i] - mu) * istd;
                    }
                }
                if (beta->requires_grad) beta->grad[c] += sum_dy;
                if (gamma->requires_grad) gamma->grad[c] += sum_dy_xhat;
                if (!x->requires_grad) continue;
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const T* xp = x->plane(n, c);
                    const T* og = out->grad.data() + out->index(n, c, 0, 0);
                    T* xg = x->grad.data() + x->index(n, c, 0, 0);
                    if (training) {
                        for (std::int64_t i = 0; i < hw; ++i) {
                            const T xhat = (xp[i] - mu) * istd;
                            xg[i] += g * istd * (og[i] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
                        }
                    } else {
                        for (std::int64_t i = 0; i < hw; ++i) xg[i] += g * istd * og[i];
                    }
                }
            }
        });
    }
    return out;
}

// Channel softmax at every pixel, numerically stabilized by max subtraction.
template <typename T>
TensorPtr<T> softmax_channels(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
    const Shape s = x->shape;
    if (s.c < 1) throw std::invalid_argument("softmax_channels: need at least one channel");
    auto out = make_tensor<T>(s);
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t i = 0; i < hw; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::int64_t c = 0; c < s.c; ++c) mx = std::max(mx, x->plane(n, c)[i]);
            T z = T(0);
            for (std::int64_t c = 0; c < s.c; ++c) z += std::exp(x->plane(n, c)[i] - mx);
            for (std::int64_t c = 0; c < s.c; ++c) out->plane(n, c)[i] = std::exp(x->plane(n, c)[i] - mx) / z;
        }
    }
    check_finite(*out, "softmax_channels");
    if (tape && x->requires_grad) {
        out->set_requires_grad(true);
        tape->record([x, out, hw] {
            const Shape s = x->shape;
            for (std::int64_t n = 0; n < s.n; ++n) {
                for (std::int64_t i = 0; i < hw; ++i) {
                    T dot = T(0);
                    for (std::int64_t c = 0; c < s.c; ++c)
                        dot += out->grad[static_cast<std::size_t>(out->index(n, c, 0, 0) + i)] * out->plane(n, c)[i];
                    for (std::int64_t c = 0; c < s.c; ++c) {
                        const std::size_t idx = static_cast<std::size_t>(x->index(n, c, 0, 0) + i);
                        x->grad[idx] += out->data[idx] * (out->grad[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// Bilinear interpolation with half-pixel centers: src = (dst + 0.5)*scale - 0.5,
// clamped to the image. The same convention is used everywhere in the project.
template <typename T>
TensorPtr<T> bilinear_resize(const TensorPtr<T>& x, std::int64_t out_h, std::int64_t out_w,
                             Tape<T>* tape = nullptr) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: target dims must be >= 1");
    const Shape s = x->shape;
    if (s.h < 1 || s.w < 1) throw std::invalid_argument("bilinear_resize: empty input");
    auto out = make_tensor<T>({s.n, s.c, out_h, out_w});

    struct Axis {
        std::vector<std::int64_t> i0, i1;
        std::vector<T> f;
    };
    auto make_axis = [](std::int64_t in, std::int64_t on) {
        Axis a;
        a.i0.resize(static_cast<std::size_t>(on));
        a.i1.resize(static_cast<std::size_t>(on));
        a.f.resize(static_cast<std::size_t>(on));
        const double scale = static_cast<double>(in) / static_cast<double>(on);
        for (std::int64_t o = 0; o < on; ++o) {
            double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
            src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
            const std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
            a.i0[o] = lo;
            a.i1[o] = std::min(lo + 1, in - 1);
            a.f[o] = static_cast<T>(src - static_cast<double>(lo));
        }
        return a;
    };
    const Axis ay = make_axis(s.h, out_h);
    const Axis ax = make_axis(s.w, out_w);

    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* xp = x->plane(n, c);
            T* op = out->plane(n, c);
            for (std::int64_t oh = 0; oh < out_h; ++oh) {
                const T fy = ay.f[oh];
                const T* r0 = xp + ay.i0[oh] * s.w;
                const T* r1 = xp + ay.i1[oh] * s.w;
                for (std::int64_t ow = 0; ow < out_w; ++ow) {
                    const T fx = ax.f[ow];
                    const std::int64_t x0 = ax.i0[ow], x1 = ax.i1[ow];
                    const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    op[oh * out_w + ow] = top + fy * (bot - top);
                }
            }
        }
    }
    check_finite(*out, "bilinear_resize");
    if (tape && x->requires_grad) {
        out->set_requires_grad(true);
        tape->record([x, out, ay, ax, out_h, out_w] {
            const Shape s = x->shape;
            for (std::int64_t n = 0; n < s.n; ++n) {
                for (std::int64_t c = 0; c < s.c; ++c) {
                    T* xg = x->grad.data() + x->index(n, c, 0, 0);
                    const T* og = out->grad.data() + out->index(n, c, 0, 0);
                    for (std::int64_t oh = 0; oh < out_h; ++oh) {
                        const T fy = ay.f[oh];
                        T* g0 = xg + ay.i0[oh] * s.w;
                        T* g1 = xg + ay.i1[oh] * s.w;
                        for (std::int64_t ow = 0; ow < out_w; ++ow) {
                            const T g = og[oh * out_w + ow];
                            const T fx = ax.f[ow];
                            const std::int64_t x0 = ax.i0[ow], x1 = ax.i1[ow];
                            g0[x0] += (T(1) - fy) * (T(1) - fx) * g;
                            g0[x1] += (T(1) - fy) * fx * g;
                            g1[x0] += fy * (T(1) - fx) * g;
                            g1[x1] += fy * fx * g;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Per-pixel class labels for the 2-class loss and for accuracy counting.
struct LabelMap {
    std::int64_t n = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> v;

    std::int64_t numel() const { return n * h * w; }
};

// Mean over all pixels of -w_y * log softmax(logits)_y, stabilized by max
// subtraction. Returns a scalar (1,1,1,1) tensor.
template <typename T>
TensorPtr<T> cross_entropy_loss(const TensorPtr<T>& logits, const LabelMap& target,
                                std::optional<std::pair<T, T>> class_weights = std::nullopt,
                                Tape<T>* tape = nullptr) {
    const Shape s = logits->shape;
    if (s.c != 2) throw std::invalid_argument("cross_entropy_loss: logits must have 2 channels, got " + s.str());
    if (target.n != s.n || target.h != s.h || target.w != s.w)
        throw std::invalid_argument("cross_entropy_loss: target dims do not match logits " + s.str());
    const T w0 = class_weights ? class_weights->first : T(1);
    const T w1 = class_weights ? class_weights->second : T(1);
    const std::int64_t hw = s.h * s.w;
    const std::int64_t total = s.n * hw;

    double acc = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        const T* l0 = logits->plane(n, 0);
        const T* l1 = logits->plane(n, 1);
        const std::uint8_t* y = target.v.data() + n * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            if (y[i] > 1) throw std::invalid_argument("cross_entropy_loss: target label outside {0,1}");
            const T m = std::max(l0[i], l1[i]);
            const T z = std::exp(l0[i] - m) + std::exp(l1[i] - m);
            const T ly = y[i] ? l1[i] : l0[i];
            const T wy = y[i] ? w1 : w0;
            acc += static_cast<double>(wy) * -static_cast<double>(ly - m - std::log(z));
        }
    }
    auto out = make_tensor<T>({1, 1, 1, 1});
    out->data[0] = static_cast<T>(acc / static_cast<double>(total));
    check_finite(*out, "cross_entropy_loss");

    if (tape && logits->requires_grad) {
        out->set_requires_grad(true);
        tape->record([logits, out, target, w0, w1, hw, total] {
            const Shape s = logits->shape;
            const T scale = out->grad[0] / static_cast<T>(total);
            for (std::int64_t n = 0; n < s.n; ++n) {
                const T* l0 = logits->plane(n, 0);
                const T* l1 = logits->plane(n, 1);
                T* g0 = logits->grad.data() + logits->index(n, 0, 0, 0);
                T* g1 = logits->grad.data() + logits->index(n, 1, 0, 0);
                const std::uint8_t* y = target.v.data() + n * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T m = std::max(l0[i], l1[i]);
                    const T e0 = std::exp(l0[i] - m), e1 = std::exp(l1[i] - m);
                    const T p1 = e1 / (e0 + e1);
                    const T wy = y[i] ? w1 : w0;
                    const T p0 = T(1) - p1;
                    g0[i] += scale * wy * (p0 - (y[i] ? T(0) : T(1)));
                    g1[i] += scale * wy * (p1 - (y[i] ? T(1) : T(0)));
                }
            }
        });
    }
    return out;
}

// Reduction to a scalar; mostly a test utility and loss-graph terminator.
template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>({1, 1, 1, 1});
    double acc = 0.0;
    for (const T v : x->data) acc += static_cast<double>(v);
    out->data[0] = static_cast<T>(acc);
    check_finite(*out, "sum_all");
    if (tape && x->requires_grad) {
        out->set_requires_grad(true);
        tape->record([x, out] {
            const T g = out->grad[0];
            for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
        });
    }
    return out;
}

}  // namespace bccseg
