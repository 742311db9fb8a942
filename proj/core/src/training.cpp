#include <chrono>
#include <cmath>
#include <ostream>

#include "stereocorr/training.hpp"

namespace stereocorr {

int TrainConfig::default_patch(const std::string& arch) {
    if (arch == "s4") return 10;
    if (arch == "s7") return 28;
    if (arch == "s9") return 56;
    throw ConfigError("no default patch size for arch " + arch);
}

int TrainConfig::default_batch(const std::string& arch, CorrMode corr) {
    if (arch == "s4") return 128;
    if (arch == "s7") return corr == CorrMode::Inner ? 32 : 20;
    if (arch == "s9") return corr == CorrMode::Inner ? 20 : 8;
    throw ConfigError("no default batch size for arch " + arch);
}

TrainConfig TrainConfig::resolved() const {
    TrainConfig out = *this;
    if (out.patch == 0) out.patch = default_patch(out.arch);
    if (out.batch == 0) out.batch = default_batch(out.arch, out.corr);
    const ArchSpec arch = ArchSpec::preset(out.arch, out.theta, out.in_channels);
    const int F = arch.pool_factor();
    if (out.patch < F || out.patch % F != 0)
        throw ConfigError("patch size " + std::to_string(out.patch) + " incompatible with " +
                          std::to_string(arch.pools()) + " pooling layers (need a multiple of " +
                          std::to_string(F) + ")");
    if (out.max_disp < 1) throw ConfigError("max disparity must be >= 1");
    if (out.iters < 1) throw ConfigError("iteration count must be >= 1");
    if (out.batch < 1) throw ConfigError("batch size must be >= 1");
    if (out.lr < 0) throw ConfigError("learning rate must be >= 0");
    return out;
}

std::optional<PatchExample> sample_patch(const StereoSample& sample, int patch, int max_disp,
                                         std::mt19937_64& rng, int max_retries) {
    const int H = sample.left.rows, W = sample.left.cols, C = sample.left.channels;
    if (H < patch || W < patch)
        throw ConfigError("sample " + sample.id + " (" + std::to_string(H) + "x" +
                          std::to_string(W) + ") smaller than patch " + std::to_string(patch));
    if (sample.gt.empty()) return std::nullopt;

    const auto lstats = channel_stats(sample.left);
    const auto rstats = channel_stats(sample.right);
    std::uniform_int_distribution<int> ipick(0, H - patch);
    std::uniform_int_distribution<int> jpick(0, W - patch);

    for (int attempt = 0; attempt < max_retries; ++attempt) {
        const int i0 = ipick(rng), j0 = jpick(rng);
        std::vector<PatchExample::Target> targets;
        for (int i = 0; i < patch; ++i) {
            for (int j = 0; j < patch; ++j) {
                const std::int64_t t = std::int64_t(i0 + i) * W + (j0 + j);
                if (!sample.gt.valid[size_t(t)]) continue;
                if (!sample.noc.empty() && !sample.noc[size_t(t)]) continue;
                const int d = int(std::lround(double(sample.gt.d[size_t(t)])));
                if (d < 0 || d > max_disp) continue; // beyond range: dropped, not clamped
                if (j0 + j - d < 0) continue;        // unmatchable this close to the border
                targets.push_back({i, j, d});
            }
        }
        if (targets.empty()) continue;

        PatchExample ex;
        ex.size = patch;
        ex.dmax = max_disp;
        ex.channels = C;
        ex.row0 = i0;
        ex.col0 = j0;
        ex.targets = std::move(targets);
        ex.left.resize(size_t(C) * patch * patch);
        ex.right.resize(size_t(C) * patch * (patch + max_disp));
        for (int c = 0; c < C; ++c) {
            const float lmean = float(lstats[size_t(c)].first);
            const float linv = float(1.0 / lstats[size_t(c)].second);
            const float rmean = float(rstats[size_t(c)].first);
            const float rinv = float(1.0 / rstats[size_t(c)].second);
            for (int i = 0; i < patch; ++i) {
                float* lrow = ex.left.data() + (std::int64_t(c) * patch + i) * patch;
                for (int j = 0; j < patch; ++j)
                    lrow[j] = (float(sample.left.at(i0 + i, j0 + j, c)) - lmean) * linv;
                float* rrow = ex.right.data() + (std::int64_t(c) * patch + i) * (patch + max_disp);
                for (int j = 0; j < patch + max_disp; ++j) {
                    const int x = j0 - max_disp + j; // right patch starts D columns left
                    rrow[j] = (x >= 0 && x < W)
                                  ? (float(sample.right.at(i0 + i, x, c)) - rmean) * rinv
                                  : 0.f;
                }
            }
        }
        return ex;
    }
    return std::nullopt;
}

namespace {

std::vector<PixelTarget> to_node_targets(const std::vector<PatchExample>& batch, int patch) {
    std::vector<PixelTarget> out;
    for (int e = 0; e < int(batch.size()); ++e)
        for (const auto& t : batch[size_t(e)].targets)
            out.push_back({e, t.row * patch + t.col, t.disp});
    return out;
}

} // namespace

double patch_loss(StereoModel& model, const PatchExample& example, bool backward) {
    auto pp = PatchPipeline<float>::build(model.net, model.head ? &*model.head : nullptr,
                                          model.corr, 1, example.size, example.dmax);
    pp->load_example(0, example);
    pp->set_col0({example.col0});
    pp->loss->set_targets(to_node_targets({example}, example.size));
    pp->graph.update_running_moments = false;
    pp->graph.forward();
    if (backward) pp->graph.backward();
    return double(pp->graph.loss());
}

TrainResult train(const TrainConfig& cfg_in, const std::vector<StereoSample>& dataset,
                  std::ostream* log_stream) {
    const TrainConfig cfg = cfg_in.resolved();
    if (dataset.empty()) throw ConfigError("train: empty dataset");
    std::vector<size_t> usable;
    for (size_t k = 0; k < dataset.size(); ++k)
        if (!dataset[k].gt.empty()) usable.push_back(k);
    if (usable.empty()) throw ConfigError("train: no sample carries ground truth");

    const ArchSpec arch = [&] {
        ArchSpec a = ArchSpec::preset(cfg.arch, cfg.theta, cfg.in_channels);
        a.init_gain = cfg.init_gain;
        return a;
    }();
    StereoModel model = StereoModel::build(arch, cfg.corr, cfg.seed);

    auto pipeline = PatchPipeline<float>::build(model.net, model.head ? &*model.head : nullptr,
                                                cfg.corr, cfg.batch, cfg.patch, cfg.max_disp);
    pipeline->graph.mode = Mode::Train;

    std::vector<Tensor4*> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    AdamOptimizer<float> opt(params, float(cfg.lr));

    std::mt19937_64 sample_rng(substream(cfg.seed, "sampling"));
    std::uniform_int_distribution<size_t> pick(0, usable.size() - 1);

    TrainResult result;
    if (log_stream) *log_stream << "iter,loss,elapsed_s\n";
    const auto t_start = std::chrono::steady_clock::now();
    const std::int64_t decay_at = cfg.lr_step_decay ? (cfg.iters * 8) / 10 : -1;

    for (std::int64_t iter = 1; iter <= cfg.iters; ++iter) {
        if (iter == decay_at) opt.set_lr(float(cfg.lr * 0.1));

        std::vector<PatchExample> batch;
        batch.reserve(size_t(cfg.batch));
        std::vector<int> col0(size_t(cfg.batch), 0);
        for (int e = 0; e < cfg.batch; ++e) {
            std::optional<PatchExample> ex;
            while (!ex) {
                ex = sample_patch(dataset[usable[pick(sample_rng)]], cfg.patch, cfg.max_disp,
                                  sample_rng);
                if (!ex) {
                    ++result.skipped_patches;
                    if (result.skipped_patches > 64 * cfg.iters)
                        throw ConfigError("train: dataset yields no labeled patches");
                }
            }
            pipeline->load_example(e, *ex);
            col0[size_t(e)] = ex->col0;
            batch.push_back(std::move(*ex));
        }
        pipeline->set_col0(col0);
        pipeline->loss->set_targets(to_node_targets(batch, cfg.patch));

        pipeline->graph.forward();
        const double loss = double(pipeline->graph.loss());
        if (!std::isfinite(loss))
            throw NumericError("train: non-finite loss at iteration " + std::to_string(iter) +
                               " (lr=" + std::to_string(cfg.lr) + ", batch id " +
                               std::to_string(iter) + ")");
        opt.zero_grads();
        pipeline->graph.backward();
        opt.step();

        result.final_loss = loss;
        if (iter == 1 || iter == cfg.iters || (cfg.log_every > 0 && iter % cfg.log_every == 0)) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            result.log.push_back({iter, loss, elapsed});
            if (log_stream) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "%lld,%.6f,%.3f\n", static_cast<long long>(iter),
                              loss, elapsed);
                *log_stream << buf << std::flush;
            }
        }
    }

    pipeline.reset(); // graph holds pointers into the model; drop it before moving
    result.model = std::move(model);
    return result;
}

} // namespace stereocorr
