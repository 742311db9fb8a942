#pragma once

// Shared-weight two-branch feature extractor. A network is a sequence of
// conv blocks (3x3, pad 1) with batchnorm+relu, max poolings interleaved, and
// one stride-2 deconvolution per pooling appended at the end so the feature
// map returns to input resolution. Both branches reference the same parameter
// tensors.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stereocorr/correlation.hpp"
#include "stereocorr/graph.hpp"
#include "stereocorr/random.hpp"
#include "stereocorr/tensor.hpp"

namespace stereocorr {

constexpr float kBatchNormEps = 1e-5f;
constexpr float kBatchNormMomentum = 0.9f;

struct ArchSpec {
    int conv_layers = 7;
    std::vector<int> pool_after = {2, 4}; // 1-based conv-block indices
    int theta = 64;
    int in_channels = 1;
    double init_gain = 1.0; // multiplies the sqrt(2 / fan_in) init stddev

    int pools() const { return int(pool_after.size()); }
    int pool_factor() const { return 1 << pools(); }

    static ArchSpec s4(int theta = 64, int in_channels = 1) {
        return ArchSpec{4, {2}, theta, in_channels, 1.0};
    }
    static ArchSpec s7(int theta = 64, int in_channels = 1) {
        return ArchSpec{7, {2, 4}, theta, in_channels, 1.0};
    }
    static ArchSpec s9(int theta = 64, int in_channels = 1) {
        return ArchSpec{9, {2, 4, 6}, theta, in_channels, 1.0};
    }
    static ArchSpec preset(const std::string& name, int theta = 64, int in_channels = 1) {
        if (name == "s4") return s4(theta, in_channels);
        if (name == "s7") return s7(theta, in_channels);
        if (name == "s9") return s9(theta, in_channels);
        throw ConfigError("unknown architecture preset: " + name);
    }
    std::string name() const {
        if (*this == s4(theta, in_channels)) return "s4";
        if (*this == s7(theta, in_channels)) return "s7";
        if (*this == s9(theta, in_channels)) return "s9";
        return "custom";
    }

    void validate() const {
        if (conv_layers < 1) throw ConfigError("arch: need at least one conv layer");
        if (theta < 1) throw ConfigError("arch: theta must be >= 1");
        if (in_channels < 1) throw ConfigError("arch: in_channels must be >= 1");
        int prev = 0;
        for (const int p : pool_after) {
            if (p < 1 || p > conv_layers)
                throw ConfigError("arch: pool position " + std::to_string(p) +
                                  " outside conv blocks 1.." + std::to_string(conv_layers));
            if (p <= prev) throw ConfigError("arch: pool positions must be strictly increasing");
            prev = p;
        }
    }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Global receptive field: the widest input extent that influences one output
/// activation. Convolutions and poolings follow the jump recurrence
/// rf += (k-1)*jump, jump *= stride; it reduces to n*(k-1)+1 for a pool-free
/// stack of n convolutions. For the trailing stride-1/2 deconvolutions the
/// recurrence must not compound: one output of a 3x3/2 deconvolution depends
/// on at most 2 adjacent inputs (2i + ki - 1 = r has at most two integer
/// solutions), and a 2-wide run stays 2-wide through further deconvolutions,
/// so the whole stack widens the dependency by exactly one step of the jump
/// at its entry.
inline int receptive_field(const ArchSpec& arch) {
    std::int64_t rf = 1, jump = 1;
    size_t pool_idx = 0;
    for (int k = 1; k <= arch.conv_layers; ++k) {
        rf += 2 * jump; // 3x3 conv
        if (pool_idx < arch.pool_after.size() && arch.pool_after[pool_idx] == k) {
            rf += jump; // 2x2 window
            jump *= 2;
            ++pool_idx;
        }
    }
    if (arch.pools() > 0) rf += jump / 2 * 2; // deconv stack: one 2-wide tap at entry
    return int(rf);
}

template <typename T>
struct NetworkT {
    struct Block {
        bool is_deconv = false;
        Tensor4T<T> w; // conv: (out, in, 3, 3); deconv: (in, out, 3, 3)
        Tensor4T<T> b; // (1, out, 1, 1)
        bool has_bn = false;
        Tensor4T<T> gamma, beta;
        BnMoments<T> moments;
        bool has_relu = false;
    };

    ArchSpec arch;
    std::vector<Block> blocks; // conv blocks then deconv blocks

    static NetworkT build(const ArchSpec& arch, std::uint64_t seed) {
        arch.validate();
        NetworkT net;
        net.arch = arch;
        std::mt19937_64 rng(substream(seed, "net-init"));
        const int n = arch.conv_layers, p = arch.pools(), th = arch.theta;
        for (int k = 0; k < n + p; ++k) {
            Block blk;
            blk.is_deconv = k >= n;
            const int in_c = (k == 0) ? arch.in_channels : th;
            const int out_c = th;
            blk.w = blk.is_deconv ? Tensor4T<T>(in_c, out_c, 3, 3) : Tensor4T<T>(out_c, in_c, 3, 3);
            blk.b = Tensor4T<T>(1, out_c, 1, 1);
            const double fan_in = double(in_c) * 9.0;
            blk.w.fill_randn(rng, T(arch.init_gain * std::sqrt(2.0 / fan_in)));
            const bool last_conv = (k == n - 1);
            const bool last_deconv = (k == n + p - 1) && blk.is_deconv;
            blk.has_bn = blk.has_relu = !(last_conv || last_deconv);
            if (blk.has_bn) {
                blk.gamma = Tensor4T<T>(1, out_c, 1, 1);
                blk.beta = Tensor4T<T>(1, out_c, 1, 1);
                blk.gamma.fill(T(1));
                blk.moments.mean = Tensor4T<T>(1, out_c, 1, 1);
                blk.moments.var = Tensor4T<T>(1, out_c, 1, 1);
                blk.moments.var.fill(T(1));
            }
            net.blocks.push_back(std::move(blk));
        }
        return net;
    }

    std::vector<std::pair<std::string, Tensor4T<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor4T<T>*>> out;
        int conv_i = 0, deconv_i = 0;
        for (auto& blk : blocks) {
            const std::string base = blk.is_deconv ? "deconv" + std::to_string(++deconv_i)
                                                   : "conv" + std::to_string(++conv_i);
            out.emplace_back(base + ".w", &blk.w);
            out.emplace_back(base + ".b", &blk.b);
            if (blk.has_bn) {
                out.emplace_back(base + ".bn.gamma", &blk.gamma);
                out.emplace_back(base + ".bn.beta", &blk.beta);
            }
        }
        return out;
    }

    // Non-trainable state (batchnorm running moments).
    std::vector<std::pair<std::string, Tensor4T<T>*>> buffers() {
        std::vector<std::pair<std::string, Tensor4T<T>*>> out;
        int conv_i = 0, deconv_i = 0;
        for (auto& blk : blocks) {
            const std::string base = blk.is_deconv ? "deconv" + std::to_string(++deconv_i)
                                                   : "conv" + std::to_string(++conv_i);
            if (blk.has_bn) {
                out.emplace_back(base + ".bn.running_mean", &blk.moments.mean);
                out.emplace_back(base + ".bn.running_var", &blk.moments.var);
            }
        }
        return out;
    }

    bool bn_initialized() const {
        for (const auto& blk : blocks)
            if (blk.has_bn && !blk.moments.initialized) return false;
        return true;
    }
    void set_bn_initialized(bool v) {
        for (auto& blk : blocks)
            if (blk.has_bn) blk.moments.initialized = v;
    }

    /// Appends one full branch to the graph; calling this twice shares every
    /// parameter tensor between the two branches.
    Node<T>* emit_branch(Graph<T>& g, Node<T>* x) {
        size_t pool_idx = 0;
        int conv_k = 0;
        for (auto& blk : blocks) {
            if (blk.is_deconv) {
                x = g.add(std::make_unique<Deconv2Node<T>>(x, &blk.w, &blk.b));
            } else {
                x = g.add(std::make_unique<Conv2dNode<T>>(x, &blk.w, &blk.b, 1, 1, 1));
                ++conv_k;
            }
            if (blk.has_bn)
                x = g.add(std::make_unique<BatchNormNode<T>>(x, &blk.gamma, &blk.beta,
                                                             &blk.moments, T(kBatchNormEps),
                                                             T(kBatchNormMomentum)));
            if (blk.has_relu) x = g.add(std::make_unique<ReluNode<T>>(x));
            if (!blk.is_deconv && pool_idx < arch.pool_after.size() &&
                arch.pool_after[pool_idx] == conv_k) {
                x = g.add(std::make_unique<MaxPool2Node<T>>(x));
                ++pool_idx;
            }
        }
        return x;
    }

    /// Per-pixel descriptors for a full image (1, C, H, W). The image is
    /// zero-padded right/bottom to a pooling-compatible size and the features
    /// are cropped back, so output spatial size equals input spatial size.
    /// Never updates batch-norm running moments.
    FeatureMapT<T> extract(const Tensor4T<T>& image, Mode mode) {
        const int H = image.shape.h, W = image.shape.w, F = arch.pool_factor();
        if (image.shape.n != 1)
            throw ShapeError("extract: expected a single image, got batch " +
                             std::to_string(image.shape.n));
        if (image.shape.c != arch.in_channels)
            throw ShapeError("extract: image channels axis " + std::to_string(image.shape.c) +
                             " != network input channels " + std::to_string(arch.in_channels));
        if (H < F || W < F)
            throw ShapeError("extract: image " + std::to_string(H) + "x" + std::to_string(W) +
                             " smaller than pooling factor " + std::to_string(F));
        const int PH = (H + F - 1) / F * F, PW = (W + F - 1) / F * F;

        Graph<T> g;
        g.mode = mode;
        g.update_running_moments = false;
        auto* input = static_cast<InputNode<T>*>(
            g.add(std::make_unique<InputNode<T>>(Shape4{1, arch.in_channels, PH, PW})));
        for (int c = 0; c < arch.in_channels; ++c)
            for (int i = 0; i < H; ++i)
                std::copy(image.plane(0, c) + std::int64_t(i) * W,
                          image.plane(0, c) + std::int64_t(i) * W + W,
                          input->out.plane(0, c) + std::int64_t(i) * PW);
        Node<T>* feat = emit_branch(g, input);
        Node<T>* nhwc = g.add(std::make_unique<ToNhwcNode<T>>(feat));
        g.forward();

        FeatureMapT<T> fm(H, W, arch.theta);
        const int TH = arch.theta;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                std::copy(nhwc->out.data() + (std::int64_t(i) * PW + j) * TH,
                          nhwc->out.data() + (std::int64_t(i) * PW + j) * TH + TH,
                          fm.v.data() + (std::int64_t(i) * W + j) * TH);
        return fm;
    }
};

using Network = NetworkT<float>;

} // namespace stereocorr
