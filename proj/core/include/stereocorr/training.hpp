#pragma once

// Patch-based training: random patches from the left image paired with the
// same-coordinate right patch extended leftward by the maximum disparity,
// per-pixel (D+1)-way softmax classification over the sparse ground truth,
// Adam optimization.

#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stereocorr/adam.hpp"
#include "stereocorr/data_io.hpp"
#include "stereocorr/graph.hpp"
#include "stereocorr/model.hpp"

namespace stereocorr {

struct TrainConfig {
    std::string arch = "s7";
    CorrMode corr = CorrMode::Inner;
    int max_disp = 256;
    int patch = 0;          // 0 = per-arch default (10 / 28 / 56)
    int batch = 0;          // 0 = per-arch x mode default
    std::int64_t iters = 75000;
    double lr = 1e-3;
    bool lr_step_decay = false; // x0.1 at 80% of iterations when enabled
    std::uint64_t seed = 0;
    int theta = 64;
    int in_channels = 1;
    double init_gain = 1.0;
    std::int64_t log_every = 50;

    static int default_patch(const std::string& arch);
    static int default_batch(const std::string& arch, CorrMode corr);

    /// Materializes defaults and validates pooling compatibility.
    TrainConfig resolved() const;
};

/// One training example: an s x s left patch, the same-coordinate right patch
/// extended leftward by D columns (zeros where it leaves the image), and the
/// labeled pixels inside the left patch.
struct PatchExample {
    int size = 0;
    int dmax = 0;
    int channels = 1;
    int row0 = 0;                // absolute image row of left patch row 0
    int col0 = 0;                // absolute image column of left patch column 0
    std::vector<float> left;     // (c, i, j) planes, s*s each
    std::vector<float> right;    // (c, i, j) planes, s*(s+D) each
    struct Target {
        int row, col, disp;
    };
    std::vector<Target> targets;
};

/// Draws a random patch position with at least one labeled pixel (ground
/// truth valid, non-occluded, integer disparity within [0, D] and matchable).
/// Returns nullopt when max_retries positions in this sample all came up
/// empty.
std::optional<PatchExample> sample_patch(const StereoSample& sample, int patch, int max_disp,
                                         std::mt19937_64& rng, int max_retries = 64);

// ---------------------------------------------------------------------------
// The per-batch compute graph, shared by training (float) and the gradient
// checks (double).
// ---------------------------------------------------------------------------

template <typename T>
struct PatchPipeline {
    Graph<T> graph;
    InputNode<T>* left_in = nullptr;
    InputNode<T>* right_in = nullptr;
    Node<T>* volume = nullptr;
    PsiBuildNode<T>* psi = nullptr;
    InnerProductNode<T>* inner = nullptr;
    SoftmaxXentVolumeNode<T>* loss = nullptr;
    int patch = 0, dmax = 0;

    static std::unique_ptr<PatchPipeline> build(NetworkT<T>& net, CorrHeadT<T>* head,
                                                CorrMode corr, int batch, int patch, int dmax) {
        auto pp = std::make_unique<PatchPipeline>();
        pp->patch = patch;
        pp->dmax = dmax;
        const int F = net.arch.pool_factor();
        if (patch < F || patch % F != 0)
            throw ConfigError("patch size " + std::to_string(patch) +
                              " incompatible with " + std::to_string(net.arch.pools()) +
                              " pooling layers (need a positive multiple of " +
                              std::to_string(F) + ")");
        const int right_w = (patch + dmax + F - 1) / F * F;
        Graph<T>& g = pp->graph;
        g.mode = Mode::Train;
        pp->left_in = static_cast<InputNode<T>*>(g.add(std::make_unique<InputNode<T>>(
            Shape4{batch, net.arch.in_channels, patch, patch})));
        pp->right_in = static_cast<InputNode<T>*>(g.add(std::make_unique<InputNode<T>>(
            Shape4{batch, net.arch.in_channels, patch, right_w})));
        Node<T>* fl = net.emit_branch(g, pp->left_in);
        Node<T>* fr = net.emit_branch(g, pp->right_in);
        fl = g.add(std::make_unique<ToNhwcNode<T>>(fl));
        fr = g.add(std::make_unique<ToNhwcNode<T>>(fr));
        if (corr == CorrMode::Learned) {
            auto* psi = static_cast<PsiBuildNode<T>*>(
                g.add(std::make_unique<PsiBuildNode<T>>(fl, fr, dmax)));
            pp->psi = psi;
            Node<T>* h = g.add(std::make_unique<Conv2dNode<T>>(psi, &head->hidden_w,
                                                               &head->hidden_b, 1, 0, 1));
            h = g.add(std::make_unique<ReluNode<T>>(h));
            pp->volume = g.add(std::make_unique<Conv2dNode<T>>(h, &head->out_w, &head->out_b, 1, 0, 1));
        } else {
            auto* ip = static_cast<InnerProductNode<T>*>(
                g.add(std::make_unique<InnerProductNode<T>>(fl, fr, dmax)));
            pp->inner = ip;
            pp->volume = ip;
        }
        pp->loss = static_cast<SoftmaxXentVolumeNode<T>*>(
            g.add(std::make_unique<SoftmaxXentVolumeNode<T>>(pp->volume, dmax, patch)));
        return pp;
    }

    void set_col0(const std::vector<int>& col0) {
        if (psi) psi->col0 = col0;
        if (inner) inner->col0 = col0;
        loss->col0 = col0;
    }

    /// Copies one example into batch slot e.
    void load_example(int e, const PatchExample& ex) {
        const int s = patch;
        const int rw = right_in->out.shape.w, rw_src = s + dmax;
        for (int c = 0; c < ex.channels; ++c) {
            std::copy(ex.left.begin() + std::int64_t(c) * s * s,
                      ex.left.begin() + std::int64_t(c + 1) * s * s, left_in->out.plane(e, c));
            for (int i = 0; i < s; ++i) {
                auto src = ex.right.begin() + (std::int64_t(c) * s + i) * rw_src;
                std::copy(src, src + rw_src, right_in->out.plane(e, c) + std::int64_t(i) * rw);
            }
        }
    }
};

/// Mean masked softmax cross-entropy of one example through the full model;
/// gradients land in the model's parameter tensors.
double patch_loss(StereoModel& model, const PatchExample& example, bool backward = true);

struct TrainLogRow {
    std::int64_t iter;
    double loss;
    double elapsed_s;
};

struct TrainResult {
    StereoModel model;
    std::vector<TrainLogRow> log;
    double final_loss = 0;
    std::int64_t skipped_patches = 0;
};

/// Runs cfg.iters Adam steps of randomly sampled patch batches. Deterministic
/// for a fixed seed (bitwise, independent of thread count). Throws
/// NumericError naming the iteration on a NaN loss.
TrainResult train(const TrainConfig& cfg, const std::vector<StereoSample>& dataset,
                  std::ostream* log_stream = nullptr);

} // namespace stereocorr
