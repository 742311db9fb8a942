#include <doctest.h>

#include <random>

#include "stereocorr/gradcheck.hpp"
#include "stereocorr/graph.hpp"
#include "stereocorr/net.hpp"

using namespace stereocorr;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

Tensor4T<double> drandn(Shape4 s, std::mt19937_64& rng, double sd = 1.0) {
    Tensor4T<double> t(s);
    t.fill_randn(rng, sd);
    return t;
}

// A scalar readout with fixed random coefficients.
Node<double>* add_dot_loss(Graph<double>& g, Node<double>* x, std::mt19937_64& rng) {
    Tensor4T<double> coefs(x->out.shape);
    coefs.fill_randn(rng, 1.0);
    return g.add(std::make_unique<DotLossNode<double>>(x, std::move(coefs)));
}

} // namespace

TEST_CASE("gradcheck: a single linear op is exact to 1e-8") {
    std::mt19937_64 rng(30);
    Graph<double> g;
    auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{1, 2, 6, 6}));
    x->out.fill_randn(rng, 1.0);
    auto w = drandn({3, 2, 3, 3}, rng);
    auto b = Tensor4T<double>(1, 3, 1, 1);
    b.fill_randn(rng, 0.5);
    auto* conv = g.add(std::make_unique<Conv2dNode<double>>(x, &w, &b, 1, 1, 1));
    add_dot_loss(g, conv, rng);
    const auto report = grad_check(g, {{"input", &x->out}, {"w", &w}, {"b", &b}}, kEps, 0, rng);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("gradcheck: every differentiable op on random shapes, 20 seeds each") {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(100 + seed);
        std::uniform_int_distribution<int> bdim(1, 2), cdim(1, 8), sdim(2, 6);
        const int B = bdim(rng), C = cdim(rng), OC = cdim(rng);
        const int H = 2 * sdim(rng), W = 2 * sdim(rng); // <= 2 x 8 x 12 x 12

        SUBCASE("conv2d") {
            Graph<double> g;
            auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{B, C, H, W}));
            x->out.fill_randn(rng, 1.0);
            auto w = drandn({OC, C, 3, 3}, rng);
            auto b = drandn({1, OC, 1, 1}, rng, 0.3);
            auto* conv = g.add(std::make_unique<Conv2dNode<double>>(x, &w, &b, 1, 1, 1));
            add_dot_loss(g, conv, rng);
            const auto rep =
                grad_check(g, {{"input", &x->out}, {"w", &w}, {"b", &b}}, kEps, 24, rng);
            CAPTURE(seed);
            CHECK(rep.max_rel_err < kTol);
        }
        SUBCASE("maxpool2") {
            Graph<double> g;
            auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{B, C, H, W}));
            x->out.fill_randn(rng, 1.0);
            auto* pool = g.add(std::make_unique<MaxPool2Node<double>>(x));
            add_dot_loss(g, pool, rng);
            const auto rep = grad_check(g, {{"input", &x->out}}, kEps, 24, rng);
            CAPTURE(seed);
            CHECK(rep.max_rel_err < kTol);
        }
        SUBCASE("deconv2") {
            Graph<double> g;
            auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{B, C, H / 2, W / 2}));
            x->out.fill_randn(rng, 1.0);
            auto w = drandn({C, OC, 3, 3}, rng);
            auto b = drandn({1, OC, 1, 1}, rng, 0.3);
            auto* dc = g.add(std::make_unique<Deconv2Node<double>>(x, &w, &b));
            add_dot_loss(g, dc, rng);
            const auto rep =
                grad_check(g, {{"input", &x->out}, {"w", &w}, {"b", &b}}, kEps, 24, rng);
            CAPTURE(seed);
            CHECK(rep.max_rel_err < kTol);
        }
        SUBCASE("batchnorm train and infer") {
            for (const Mode mode : {Mode::Train, Mode::Infer}) {
                Graph<double> g;
                g.mode = mode;
                auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{B, C, H, W}));
                x->out.fill_randn(rng, 1.5);
                auto gamma = drandn({1, C, 1, 1}, rng, 0.2);
                for (auto& v : gamma.values) v += 1.0;
                auto beta = drandn({1, C, 1, 1}, rng, 0.2);
                BnMoments<double> moments;
                moments.mean = drandn({1, C, 1, 1}, rng, 0.1);
                moments.var = Tensor4T<double>(1, C, 1, 1);
                for (auto& v : moments.var.values) v = 1.0 + 0.3 * std::fabs(v);
                moments.var.fill(1.2);
                moments.initialized = true;
                auto* bn = g.add(std::make_unique<BatchNormNode<double>>(x, &gamma, &beta, &moments,
                                                                         1e-5, 0.9));
                add_dot_loss(g, bn, rng);
                const auto rep = grad_check(
                    g, {{"input", &x->out}, {"gamma", &gamma}, {"beta", &beta}}, kEps, 24, rng);
                CAPTURE(seed);
                CHECK(rep.max_rel_err < kTol);
            }
        }
        SUBCASE("relu") {
            Graph<double> g;
            auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{B, C, H, W}));
            x->out.fill_randn(rng, 1.0);
            auto* r = g.add(std::make_unique<ReluNode<double>>(x));
            add_dot_loss(g, r, rng);
            const auto rep = grad_check(g, {{"input", &x->out}}, kEps, 24, rng);
            CAPTURE(seed);
            CHECK(rep.max_rel_err < kTol);
        }
        SUBCASE("layout change") {
            Graph<double> g;
            auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{B, C, H, W}));
            x->out.fill_randn(rng, 1.0);
            auto* t = g.add(std::make_unique<ToNhwcNode<double>>(x));
            add_dot_loss(g, t, rng);
            const auto rep = grad_check(g, {{"input", &x->out}}, kEps, 24, rng);
            CAPTURE(seed);
            CHECK(rep.max_rel_err < kTol);
        }
    }
}

TEST_CASE("gradcheck: full s4 branch plus readout on a 12x12 input") {
    std::mt19937_64 rng(31);
    auto net = NetworkT<double>::build(ArchSpec::s4(/*theta=*/6), 77);
    Graph<double> g;
    auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{1, 1, 12, 12}));
    x->out.fill_randn(rng, 1.0);
    auto* feat = net.emit_branch(g, x);
    add_dot_loss(g, feat, rng);

    std::vector<std::pair<std::string, Tensor4T<double>*>> tensors = {{"input", &x->out}};
    for (auto& [name, t] : net.parameters()) tensors.emplace_back(name, t);
    const auto rep = grad_check(g, tensors, kEps, 16, rng);
    CHECK(rep.max_rel_err < kTol);
}

namespace {

// Conv node with a deliberately corrupted backward-weights pass: the input
// patch it correlates against is shifted one column. The gradient check must
// flag it.
struct CorruptedConvNode final : Conv2dNode<double> {
    using Conv2dNode<double>::Conv2dNode;
    void backward(Graph<double>& g) override {
        kern::conv2d_backward_input(*w, this->out, this->out.grad.data(), stride, ph, pw, in->out,
                                    in->out.grad.data());
        w->ensure_grad();
        if (b) b->ensure_grad();
        // off-by-one: pretend the kernel column taps sit one pixel right
        kern::conv2d_backward_weights(in->out, this->out, this->out.grad.data(), stride, ph,
                                      pw - 1, w->shape, w->grad.data(),
                                      b ? b->grad.data() : nullptr);
    }
};

} // namespace

TEST_CASE("gradcheck catches a corrupted backward pass") {
    std::mt19937_64 rng(32);
    Graph<double> g;
    auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{1, 2, 8, 8}));
    x->out.fill_randn(rng, 1.0);
    Tensor4T<double> w(3, 2, 3, 3), b(1, 3, 1, 1);
    w.fill_randn(rng, 0.5);
    auto* conv = g.add(std::make_unique<CorruptedConvNode>(x, &w, &b, 1, 1, 1));
    Tensor4T<double> coefs(conv->out.shape);
    coefs.fill_randn(rng, 1.0);
    g.add(std::make_unique<DotLossNode<double>>(conv, std::move(coefs)));
    const auto rep = grad_check(g, {{"w", &w}}, kEps, 0, rng);
    CHECK(rep.max_rel_err > 1e-2);
}
