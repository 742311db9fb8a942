#pragma once

// Reverse-mode tape over the kernels in kernels.hpp. A Graph owns op nodes in
// execution order; forward() runs them in order, backward() seeds the final
// scalar with 1 and walks the tape in reverse, accumulating gradients into
// node outputs and parameter tensors. Nodes are pure functions of their
// inputs and parameters (batchnorm running-moment updates can be frozen), so
// a forward pass can be repeated for finite-difference probing.

#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "stereocorr/kernels.hpp"
#include "stereocorr/tensor.hpp"

namespace stereocorr {

enum class Mode { Train, Infer };

template <typename T>
struct Graph;

template <typename T>
struct Node {
    Tensor4T<T> out;
    virtual ~Node() = default;
    virtual void forward(Graph<T>& g) = 0;
    virtual void backward(Graph<T>& g) = 0;
};

// Running batch-norm moments plus their initialization state; owned by the
// network, referenced by nodes.
template <typename T>
struct BnMoments {
    Tensor4T<T> mean;
    Tensor4T<T> var;
    bool initialized = false;
};

template <typename T>
struct Graph {
    std::vector<std::unique_ptr<Node<T>>> nodes;
    Mode mode = Mode::Train;
    bool update_running_moments = true; // frozen during finite-difference probes

    Node<T>* add(std::unique_ptr<Node<T>> n) {
        nodes.push_back(std::move(n));
        return nodes.back().get();
    }

    void forward() {
        for (auto& n : nodes) n->forward(*this);
    }

    // Zeroes node gradients, seeds the final scalar, and accumulates into
    // parameter gradients (which the caller zeroes between steps).
    void backward() {
        for (auto& n : nodes) {
            n->out.ensure_grad();
            n->out.zero_grad();
        }
        Node<T>* last = nodes.back().get();
        if (last->out.numel() != 1)
            throw ShapeError("Graph::backward: final node must be scalar, got " +
                             last->out.shape.str());
        last->out.grad[0] = T(1);
        for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) (*it)->backward(*this);
    }

    T loss() const { return nodes.back()->out.values[0]; }
};

// ---------------------------------------------------------------------------

template <typename T>
struct InputNode final : Node<T> {
    explicit InputNode(Shape4 s) { this->out = Tensor4T<T>(s); }
    void forward(Graph<T>&) override {}
    void backward(Graph<T>&) override {}
};

template <typename T>
struct Conv2dNode : Node<T> {
    Node<T>* in;
    Tensor4T<T>* w;
    Tensor4T<T>* b;
    int stride, ph, pw;

    Conv2dNode(Node<T>* in_, Tensor4T<T>* w_, Tensor4T<T>* b_, int stride_, int ph_, int pw_)
        : in(in_), w(w_), b(b_), stride(stride_), ph(ph_), pw(pw_) {
        this->out = Tensor4T<T>(kern::conv2d_out_shape(in->out.shape, w->shape, stride, ph, pw));
    }
    void forward(Graph<T>&) override {
        kern::conv2d_forward(in->out, *w, b ? b->values : std::vector<T>{}, stride, ph, pw,
                             this->out);
    }
    void backward(Graph<T>&) override {
        kern::conv2d_backward_input(*w, this->out, this->out.grad_data(), stride, ph, pw, in->out,
                                    in->out.grad_data());
        w->ensure_grad();
        if (b) b->ensure_grad();
        kern::conv2d_backward_weights(in->out, this->out, this->out.grad_data(), stride, ph, pw,
                                      w->shape, w->grad_data(), b ? b->grad_data() : nullptr);
    }
};

template <typename T>
struct Deconv2Node final : Node<T> {
    Node<T>* in;
    Tensor4T<T>* w;
    Tensor4T<T>* b;

    Deconv2Node(Node<T>* in_, Tensor4T<T>* w_, Tensor4T<T>* b_) : in(in_), w(w_), b(b_) {
        this->out = Tensor4T<T>(kern::deconv2_out_shape(in->out.shape, w->shape));
    }
    void forward(Graph<T>&) override {
        kern::deconv2_forward(in->out, *w, b ? b->values : std::vector<T>{}, this->out);
    }
    void backward(Graph<T>&) override {
        kern::deconv2_backward_input(*w, this->out, this->out.grad_data(), in->out,
                                     in->out.grad_data());
        w->ensure_grad();
        if (b) b->ensure_grad();
        kern::deconv2_backward_weights(in->out, this->out, this->out.grad_data(), w->shape,
                                       w->grad_data(), b ? b->grad_data() : nullptr);
    }
};

template <typename T>
struct BatchNormNode final : Node<T> {
    Node<T>* in;
    Tensor4T<T>* gamma;
    Tensor4T<T>* beta;
    BnMoments<T>* running;
    T eps;
    T momentum;
    kern::BatchNormSaved<T> saved;
    Mode used_mode = Mode::Train;

    BatchNormNode(Node<T>* in_, Tensor4T<T>* g, Tensor4T<T>* be, BnMoments<T>* run, T eps_,
                  T momentum_)
        : in(in_), gamma(g), beta(be), running(run), eps(eps_), momentum(momentum_) {
        if (std::int64_t(g->numel()) != in_->out.shape.c)
            throw ShapeError("batchnorm: gamma length " + std::to_string(g->numel()) +
                             " != channels axis " + std::to_string(in_->out.shape.c));
        if (std::int64_t(be->numel()) != in_->out.shape.c)
            throw ShapeError("batchnorm: beta length " + std::to_string(be->numel()) +
                             " != channels axis " + std::to_string(in_->out.shape.c));
        this->out = Tensor4T<T>(in_->out.shape);
    }
    void forward(Graph<T>& g) override {
        used_mode = g.mode;
        if (g.mode == Mode::Train) {
            kern::batchnorm_forward_train(in->out, gamma->values, beta->values, eps, this->out,
                                          saved);
            if (g.update_running_moments) {
                kern::batchnorm_update_running(saved, eps, momentum, running->mean.values,
                                               running->var.values);
                running->initialized = true;
            }
        } else {
            if (!running->initialized)
                throw ConfigError("batchnorm: inference requested but running moments were "
                                  "never initialized by a training pass");
            kern::batchnorm_forward_infer(in->out, gamma->values, beta->values,
                                          running->mean.values, running->var.values, eps,
                                          this->out);
        }
    }
    void backward(Graph<T>&) override {
        gamma->ensure_grad();
        beta->ensure_grad();
        if (used_mode == Mode::Train) {
            kern::batchnorm_backward_train(in->out, gamma->values, saved, this->out.grad_data(),
                                           in->out.grad_data(), gamma->grad_data(),
                                           beta->grad_data());
        } else {
            kern::batchnorm_backward_infer(in->out, gamma->values, running->mean.values,
                                           running->var.values, eps, this->out.grad_data(),
                                           in->out.grad_data(), gamma->grad_data(),
                                           beta->grad_data());
        }
    }
};

template <typename T>
struct ReluNode final : Node<T> {
    Node<T>* in;
    explicit ReluNode(Node<T>* in_) : in(in_) { this->out = Tensor4T<T>(in_->out.shape); }
    void forward(Graph<T>&) override { kern::relu_forward(in->out, this->out); }
    void backward(Graph<T>&) override {
        kern::relu_backward(this->out, this->out.grad_data(), in->out.grad_data());
    }
};

template <typename T>
struct MaxPool2Node final : Node<T> {
    Node<T>* in;
    std::vector<std::uint8_t> argmax;
    explicit MaxPool2Node(Node<T>* in_) : in(in_) {
        const Shape4 s = in_->out.shape;
        if (s.h % 2 != 0 || s.w % 2 != 0)
            throw ShapeError("maxpool2: spatial axes must be even, got " + s.str());
        this->out = Tensor4T<T>(Shape4{s.n, s.c, s.h / 2, s.w / 2});
    }
    void forward(Graph<T>&) override { kern::maxpool2_forward(in->out, this->out, argmax); }
    void backward(Graph<T>&) override {
        kern::maxpool2_backward(this->out, this->out.grad_data(), argmax, in->out,
                                in->out.grad_data());
    }
};

// (n, c, h, w) -> (n, h, w, c): hands per-pixel descriptors to the
// correlation stage as contiguous vectors.
template <typename T>
struct ToNhwcNode final : Node<T> {
    Node<T>* in;
    explicit ToNhwcNode(Node<T>* in_) : in(in_) {
        const Shape4 s = in_->out.shape;
        this->out = Tensor4T<T>(Shape4{s.n, s.h, s.w, s.c});
    }
    void forward(Graph<T>&) override { kern::nchw_to_nhwc(in->out, this->out); }
    void backward(Graph<T>&) override {
        kern::nchw_to_nhwc_backward(in->out, this->out.grad_data(), in->out.grad_data());
    }
};

// ---------------------------------------------------------------------------
// Correlation-stage nodes. Both take the left feature map (b, s, s, theta)
// and a right feature map extended by the disparity range
// (b, s, >= s + D, theta); left pixel (i, j) pairs with right pixel
// (i, j + D - d) for disparity d. col0[e] is the absolute image column of the
// left patch's first column in example e: entry (j, d) is valid iff
// col0[e] + j - d >= 0, i.e. the right pixel exists in the source image.
// ---------------------------------------------------------------------------

// Feature tensors arrive in (batch, rows, cols, channels) layout (a
// ToNhwcNode output), stored positionally in Shape4 as (n, c, h, w).
template <typename T>
inline void check_corr_inputs(const Shape4& l, const Shape4& r, int dmax) {
    if (dmax < 1) throw ShapeError("correlation: max disparity must be >= 1");
    if (l.n != r.n || l.c != r.c || l.w != r.w)
        throw ShapeError("correlation: feature maps disagree off the cols axis: " + l.str() +
                         " vs " + r.str());
    if (r.h < l.h + dmax)
        throw ShapeError("correlation: right cols axis must cover cols + D = " +
                         std::to_string(l.h + dmax) + ", got " + std::to_string(r.h));
}

// Builds the aggregated feature volume (b, 2*theta, s*s, D+1): left features
// replicated across disparities, right features shifted per disparity, zeros
// where the right pixel would fall outside the source image.
template <typename T>
struct PsiBuildNode final : Node<T> {
    Node<T>* left;
    Node<T>* right;
    int dmax;
    std::vector<int> col0; // per example; set before each forward

    PsiBuildNode(Node<T>* l, Node<T>* r, int dmax_) : left(l), right(r), dmax(dmax_) {
        check_corr_inputs<T>(l->out.shape, r->out.shape, dmax_);
        const Shape4 ls = l->out.shape; // (batch, rows, cols, channels)
        col0.assign(size_t(ls.n), 0);
        this->out = Tensor4T<T>(Shape4{ls.n, 2 * ls.w, ls.c * ls.h, dmax_ + 1});
    }
    void forward(Graph<T>&) override {
        const Shape4 ls = left->out.shape;
        const int S = ls.c, SW = ls.h, TH = ls.w, RW = right->out.shape.h, Dp1 = dmax + 1;
        const std::int64_t P = std::int64_t(S) * SW;
        Tensor4T<T>& o = this->out;
        kern::parallel_for(std::int64_t(ls.n) * S, [&](std::int64_t ei) {
            const int e = int(ei / S), i = int(ei % S);
            const T* lrow = left->out.data() + ((std::int64_t(e) * S + i) * SW) * TH;
            const T* rrow = right->out.data() + ((std::int64_t(e) * S + i) * RW) * TH;
            for (int j = 0; j < SW; ++j) {
                const std::int64_t p = std::int64_t(i) * SW + j;
                for (int c = 0; c < TH; ++c) {
                    const T lv = lrow[std::int64_t(j) * TH + c];
                    T* oleft = o.data() + ((std::int64_t(e) * 2 * TH + c) * P + p) * Dp1;
                    T* oright = o.data() + ((std::int64_t(e) * 2 * TH + TH + c) * P + p) * Dp1;
                    for (int d = 0; d <= dmax; ++d) {
                        oleft[d] = lv;
                        oright[d] = (col0[size_t(e)] + j - d >= 0)
                                        ? rrow[std::int64_t(j + dmax - d) * TH + c]
                                        : T(0);
                    }
                }
            }
        });
    }
    void backward(Graph<T>&) override {
        const Shape4 ls = left->out.shape;
        const int S = ls.c, SW = ls.h, TH = ls.w, RW = right->out.shape.h, Dp1 = dmax + 1;
        const std::int64_t P = std::int64_t(S) * SW;
        const Tensor4T<T>& o = this->out;
        kern::parallel_for(std::int64_t(ls.n) * S, [&](std::int64_t ei) {
            const int e = int(ei / S), i = int(ei % S);
            T* dlrow = left->out.grad_data() + ((std::int64_t(e) * S + i) * SW) * TH;
            T* drrow = right->out.grad_data() + ((std::int64_t(e) * S + i) * RW) * TH;
            for (int j = 0; j < SW; ++j) {
                const std::int64_t p = std::int64_t(i) * SW + j;
                for (int c = 0; c < TH; ++c) {
                    const T* gleft = o.grad.data() + ((std::int64_t(e) * 2 * TH + c) * P + p) * Dp1;
                    const T* gright =
                        o.grad.data() + ((std::int64_t(e) * 2 * TH + TH + c) * P + p) * Dp1;
                    T acc = T(0);
                    for (int d = 0; d <= dmax; ++d) acc += gleft[d];
                    dlrow[std::int64_t(j) * TH + c] += acc;
                    for (int d = 0; d <= dmax; ++d) {
                        if (col0[size_t(e)] + j - d >= 0)
                            drrow[std::int64_t(j + dmax - d) * TH + c] += gright[d];
                    }
                }
            }
        });
    }
};

// Inner-product cost volume (b, 1, s*s, D+1). Entries whose right pixel falls
// outside the source image get the most-negative finite score so downstream
// argmax never selects them.
template <typename T>
struct InnerProductNode final : Node<T> {
    Node<T>* left;
    Node<T>* right;
    int dmax;
    std::vector<int> col0;

    InnerProductNode(Node<T>* l, Node<T>* r, int dmax_) : left(l), right(r), dmax(dmax_) {
        check_corr_inputs<T>(l->out.shape, r->out.shape, dmax_);
        const Shape4 ls = l->out.shape; // (batch, rows, cols, channels)
        col0.assign(size_t(ls.n), 0);
        this->out = Tensor4T<T>(Shape4{ls.n, 1, ls.c * ls.h, dmax_ + 1});
    }
    void forward(Graph<T>&) override {
        const Shape4 ls = left->out.shape;
        const int S = ls.c, SW = ls.h, TH = ls.w, RW = right->out.shape.h, Dp1 = dmax + 1;
        kern::parallel_for(std::int64_t(ls.n) * S, [&](std::int64_t ei) {
            const int e = int(ei / S), i = int(ei % S);
            const T* lrow = left->out.data() + ((std::int64_t(e) * S + i) * SW) * TH;
            const T* rrow = right->out.data() + ((std::int64_t(e) * S + i) * RW) * TH;
            T* orow = this->out.data() + (std::int64_t(e) * S + i) * SW * Dp1;
            for (int j = 0; j < SW; ++j) {
                const T* lv = lrow + std::int64_t(j) * TH;
                for (int d = 0; d <= dmax; ++d) {
                    if (col0[size_t(e)] + j - d < 0) {
                        orow[std::int64_t(j) * Dp1 + d] = std::numeric_limits<T>::lowest();
                        continue;
                    }
                    const T* rv = rrow + std::int64_t(j + dmax - d) * TH;
                    T acc = T(0);
                    for (int c = 0; c < TH; ++c) acc += lv[c] * rv[c];
                    orow[std::int64_t(j) * Dp1 + d] = acc;
                }
            }
        });
    }
    void backward(Graph<T>&) override {
        const Shape4 ls = left->out.shape;
        const int S = ls.c, SW = ls.h, TH = ls.w, RW = right->out.shape.h, Dp1 = dmax + 1;
        kern::parallel_for(std::int64_t(ls.n) * S, [&](std::int64_t ei) {
            const int e = int(ei / S), i = int(ei % S);
            const T* lrow = left->out.data() + ((std::int64_t(e) * S + i) * SW) * TH;
            const T* rrow = right->out.data() + ((std::int64_t(e) * S + i) * RW) * TH;
            T* dlrow = left->out.grad_data() + ((std::int64_t(e) * S + i) * SW) * TH;
            T* drrow = right->out.grad_data() + ((std::int64_t(e) * S + i) * RW) * TH;
            const T* grow = this->out.grad.data() + (std::int64_t(e) * S + i) * SW * Dp1;
            for (int j = 0; j < SW; ++j) {
                for (int d = 0; d <= dmax; ++d) {
                    if (col0[size_t(e)] + j - d < 0) continue;
                    const T g = grow[std::int64_t(j) * Dp1 + d];
                    if (g == T(0)) continue;
                    const T* lv = lrow + std::int64_t(j) * TH;
                    const T* rv = rrow + std::int64_t(j + dmax - d) * TH;
                    T* dl = dlrow + std::int64_t(j) * TH;
                    T* dr = drrow + std::int64_t(j + dmax - d) * TH;
                    for (int c = 0; c < TH; ++c) {
                        dl[c] += g * rv[c];
                        dr[c] += g * lv[c];
                    }
                }
            }
        });
    }
};

// ---------------------------------------------------------------------------
// Per-pixel (D+1)-way softmax cross-entropy over a cost volume
// (b, 1, s*s, D+1). Targets are sparse; disparities whose right pixel falls
// outside the source image are excluded from the softmax support. The loss is
// the mean over examples of the mean over each example's labeled pixels.
// ---------------------------------------------------------------------------

struct PixelTarget {
    int example;
    int pixel;     // i * cols + j within the patch
    int disparity; // true integer disparity in [0, D]
};

template <typename T>
struct SoftmaxXentVolumeNode final : Node<T> {
    Node<T>* volume;
    int dmax;
    int cols; // patch cols, to recover j from the pixel index
    std::vector<PixelTarget> targets;
    std::vector<int> col0;
    std::vector<int> targets_per_example;

    SoftmaxXentVolumeNode(Node<T>* vol, int dmax_, int cols_) : volume(vol), dmax(dmax_), cols(cols_) {
        if (vol->out.shape.c != 1 || vol->out.shape.w != dmax_ + 1)
            throw ShapeError("softmax loss: expected volume (b, 1, px, D+1), got " +
                             vol->out.shape.str());
        col0.assign(size_t(vol->out.shape.n), 0);
        this->out = Tensor4T<T>(Shape4{1, 1, 1, 1});
    }

    void set_targets(std::vector<PixelTarget> t) {
        targets = std::move(t);
        const int B = volume->out.shape.n;
        targets_per_example.assign(size_t(B), 0);
        for (const auto& tg : targets) {
            if (tg.example < 0 || tg.example >= B)
                throw ShapeError("softmax loss: target example out of range");
            if (tg.disparity < 0 || tg.disparity > dmax)
                throw Error("softmax loss: target disparity " + std::to_string(tg.disparity) +
                            " out of [0, " + std::to_string(dmax) + "] at pixel " +
                            std::to_string(tg.pixel));
            targets_per_example[size_t(tg.example)]++;
        }
        for (int e = 0; e < B; ++e)
            if (targets_per_example[size_t(e)] == 0)
                throw Error("softmax loss: example " + std::to_string(e) + " has no labeled pixels");
    }

    void forward(Graph<T>&) override {
        const int B = volume->out.shape.n, Dp1 = dmax + 1;
        const std::int64_t P = volume->out.shape.h;
        double total = 0;
        std::vector<std::uint8_t> valid(size_t(Dp1), 0);
        for (const auto& tg : targets) {
            const int j = tg.pixel % cols;
            for (int d = 0; d <= dmax; ++d)
                valid[size_t(d)] = (col0[size_t(tg.example)] + j - d >= 0) ? 1 : 0;
            const T* row = volume->out.data() + (std::int64_t(tg.example) * P + tg.pixel) * Dp1;
            if (!valid[size_t(tg.disparity)])
                throw Error("softmax loss: target disparity " + std::to_string(tg.disparity) +
                            " is masked at pixel " + std::to_string(tg.pixel));
            const double l = kern::softmax_xent_row(row, Dp1, tg.disparity, valid.data(),
                                                    static_cast<T*>(nullptr));
            total += l / double(targets_per_example[size_t(tg.example)]);
        }
        this->out.values[0] = T(total / double(B));
    }

    void backward(Graph<T>&) override {
        const int B = volume->out.shape.n, Dp1 = dmax + 1;
        const std::int64_t P = volume->out.shape.h;
        const T seed = this->out.grad[0];
        std::vector<std::uint8_t> valid(size_t(Dp1), 0);
        std::vector<T> grow(size_t(Dp1), T(0));
        for (const auto& tg : targets) {
            const int j = tg.pixel % cols;
            for (int d = 0; d <= dmax; ++d)
                valid[size_t(d)] = (col0[size_t(tg.example)] + j - d >= 0) ? 1 : 0;
            const T* row = volume->out.data() + (std::int64_t(tg.example) * P + tg.pixel) * Dp1;
            kern::softmax_xent_row(row, Dp1, tg.disparity, valid.data(), grow.data());
            const T coef = seed / (T(B) * T(targets_per_example[size_t(tg.example)]));
            T* dst = volume->out.grad_data() + (std::int64_t(tg.example) * P + tg.pixel) * Dp1;
            for (int d = 0; d <= dmax; ++d) dst[d] += coef * grow[size_t(d)];
        }
    }
};

// Fixed-coefficient linear readout to a scalar; lets gradient checks drive a
// branch (or any single op) without a classification head.
template <typename T>
struct DotLossNode final : Node<T> {
    Node<T>* in;
    Tensor4T<T> coefs;

    DotLossNode(Node<T>* in_, Tensor4T<T> coefs_) : in(in_), coefs(std::move(coefs_)) {
        detail::check_same_shape(in->out.shape, coefs.shape, "dot loss");
        this->out = Tensor4T<T>(Shape4{1, 1, 1, 1});
    }
    void forward(Graph<T>&) override {
        double acc = 0;
        const T* a = in->out.data();
        const T* c = coefs.data();
        for (std::int64_t t = 0; t < in->out.numel(); ++t) acc += double(a[t]) * double(c[t]);
        this->out.values[0] = T(acc);
    }
    void backward(Graph<T>&) override {
        const T seed = this->out.grad[0];
        T* din = in->out.grad_data();
        const T* c = coefs.data();
        for (std::int64_t t = 0; t < in->out.numel(); ++t) din[t] += seed * c[t];
    }
};

} // namespace stereocorr
