#pragma once

// Standalone op entry points over the kernels; the graph nodes use the same
// kernels, so these are the natural surface for unit tests and one-off use.

#include <utility>

#include "stereocorr/kernels.hpp"
#include "stereocorr/tensor.hpp"

namespace stereocorr {

template <typename T>
Tensor4T<T> conv2d(const Tensor4T<T>& in, const Tensor4T<T>& w, const std::vector<T>& bias,
                   int stride = 1, int padding = 0) {
    Tensor4T<T> out(kern::conv2d_out_shape(in.shape, w.shape, stride, padding, padding));
    kern::conv2d_forward(in, w, bias, stride, padding, padding, out);
    return out;
}

template <typename T>
Tensor4T<T> maxpool2(const Tensor4T<T>& in) {
    if (in.shape.h % 2 != 0 || in.shape.w % 2 != 0)
        throw ShapeError("maxpool2: spatial axes must be even, got " + in.shape.str());
    Tensor4T<T> out(Shape4{in.shape.n, in.shape.c, in.shape.h / 2, in.shape.w / 2});
    std::vector<std::uint8_t> argmax;
    kern::maxpool2_forward(in, out, argmax);
    return out;
}

template <typename T>
Tensor4T<T> deconv2(const Tensor4T<T>& in, const Tensor4T<T>& w, const std::vector<T>& bias) {
    Tensor4T<T> out(kern::deconv2_out_shape(in.shape, w.shape));
    kern::deconv2_forward(in, w, bias, out);
    return out;
}

template <typename T>
Tensor4T<T> relu(const Tensor4T<T>& in) {
    Tensor4T<T> out(in.shape);
    kern::relu_forward(in, out);
    return out;
}

/// loss = -log softmax(logits)[target]; grad = softmax(logits) - onehot(target).
template <typename T>
std::pair<double, std::vector<T>> softmax_xent(const std::vector<T>& logits, int target) {
    if (target < 0 || target >= int(logits.size()))
        throw Error("softmax_xent: target " + std::to_string(target) + " out of [0, " +
                    std::to_string(logits.size() - 1) + "]");
    std::vector<T> grad(logits.size());
    const double loss =
        kern::softmax_xent_row(logits.data(), int(logits.size()), target, nullptr, grad.data());
    return {loss, std::move(grad)};
}

} // namespace stereocorr
