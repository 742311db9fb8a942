#pragma once

#include <cmath>
#include <vector>

#include "stereocorr/tensor.hpp"

namespace stereocorr {

/// Bias-corrected Adam state for one parameter tensor.
template <typename T>
struct AdamStateT {
    Tensor4T<T> m;
    Tensor4T<T> v;
    std::int64_t step = 0;
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);

    AdamStateT() = default;
    AdamStateT(Shape4 shape, T lr_) : m(shape), v(shape), lr(lr_) {}
};

using AdamState = AdamStateT<float>;

template <typename T>
void adam_step(Tensor4T<T>& param, const T* grad, AdamStateT<T>& st) {
    detail::check_same_shape(param.shape, st.m.shape, "adam_step");
    st.step += 1;
    const T bc1 = T(1) - T(std::pow(double(st.beta1), double(st.step)));
    const T bc2 = T(1) - T(std::pow(double(st.beta2), double(st.step)));
    T* p = param.data();
    T* m = st.m.data();
    T* v = st.v.data();
    const std::int64_t n = param.numel();
    for (std::int64_t t = 0; t < n; ++t) {
        const T g = grad[t];
        m[t] = st.beta1 * m[t] + (T(1) - st.beta1) * g;
        v[t] = st.beta2 * v[t] + (T(1) - st.beta2) * g * g;
        const T mhat = m[t] / bc1;
        const T vhat = v[t] / bc2;
        p[t] -= st.lr * mhat / (T(std::sqrt(double(vhat))) + st.eps);
    }
}

/// Optimizer over a fixed parameter list; one AdamState per tensor.
template <typename T>
struct AdamOptimizer {
    std::vector<AdamStateT<T>> states;
    std::vector<Tensor4T<T>*> params;

    AdamOptimizer(std::vector<Tensor4T<T>*> params_, T lr) : params(std::move(params_)) {
        states.reserve(params.size());
        for (auto* p : params) states.emplace_back(p->shape, lr);
    }
    void set_lr(T lr) {
        for (auto& s : states) s.lr = lr;
    }
    void zero_grads() {
        for (auto* p : params) {
            p->ensure_grad();
            p->zero_grad();
        }
    }
    void step() {
        for (size_t i = 0; i < params.size(); ++i)
            adam_step(*params[i], params[i]->grad_data(), states[i]);
    }
};

} // namespace stereocorr
