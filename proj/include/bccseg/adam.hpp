#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bccseg/tensor.hpp"

namespace bccseg {

// Adam with bias correction. Moments are parallel to the parameter list and
// zero-initialized; eps sits outside the square root.
template <typename T>
struct AdamState {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::int64_t t = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    void init(const std::vector<TensorPtr<T>>& params) {
        if (lr <= T(0)) throw std::invalid_argument("adam: lr must be positive");
        if (eps <= T(0)) throw std::invalid_argument("adam: eps must be positive");
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p->data.size(), T(0));
            v.emplace_back(p->data.size(), T(0));
        }
        t = 0;
    }
};

template <typename T>
void adam_step(const std::vector<TensorPtr<T>>& params, AdamState<T>& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter list");
    state.t += 1;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (p.grad.size() != p.data.size())
            throw std::invalid_argument("adam_step: parameter has no gradient buffer");
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.data.size() || v.size() != p.data.size())
            throw std::invalid_argument("adam_step: moment shape mismatch");
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const T g = p.grad[j];
            m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g * g;
            const T m_hat = m[j] / bc1;
            const T v_hat = v[j] / bc2;
            p.data[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
        p.zero_grad();
    }
}

}  // namespace bccseg
