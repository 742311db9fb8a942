// stereocorr: train, run and evaluate the stereo matching networks.
//
// Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 model/format
// mismatch, 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "manifest.hpp"
#include "stereocorr/checkpoint.hpp"
#include "stereocorr/gradcheck.hpp"
#include "stereocorr/inference.hpp"
#include "stereocorr/metrics.hpp"
#include "stereocorr/training.hpp"
#include "stereocorr/version.hpp"

namespace fs = std::filesystem;
using namespace stereocorr;
using stereocorr::cli::json;

namespace {

struct CommonArgs {
    int threads = 0;
    std::string manifest_path;
};

void apply_threads(int threads) {
    if (threads > 0) kern::set_num_threads(threads);
}

json base_manifest(const std::string& command, const CommonArgs& common,
                   std::chrono::system_clock::time_point start) {
    json doc;
    doc["command"] = command;
    doc["version"] = kVersion;
    doc["threads"] = common.threads;
    doc["start_time"] = cli::timestamp_utc(start);
    doc["end_time"] = cli::timestamp_utc(std::chrono::system_clock::now());
    return doc;
}

KittiEdition edition_from(const std::string& s) {
    if (s == "auto") return KittiEdition::Auto;
    if (s == "2012") return KittiEdition::K2012;
    if (s == "2015") return KittiEdition::K2015;
    throw ConfigError("unknown dataset edition: " + s);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonArgs common;
    std::string data_root;
    std::string out_path;
    std::string log_path;
    std::string edition = "auto";
    std::string channels = "gray";
    std::string from_manifest;
    int split_train = 0; // 0 = train on every labeled frame
    TrainConfig cfg;
};

void add_train(CLI::App& app, TrainArgs& a, bool& seed_given) {
    auto* cmd = app.add_subcommand("train", "Train a matcher on a KITTI-layout dataset");
    cmd->add_option("--data", a.data_root, "dataset root directory")->required();
    cmd->add_option("--arch", a.cfg.arch, "siamese preset: s4|s7|s9")
        ->required()
        ->check(CLI::IsMember({"s4", "s7", "s9"}));
    std::function<void(const std::string&)> corr_setter;
    cmd->add_option_function<std::string>(
           "--corr", [&a](const std::string& v) { a.cfg.corr = corr_mode_from_name(v); },
           "correlation stage: inner|learned")
        ->required()
        ->check(CLI::IsMember({"inner", "learned"}));
    cmd->add_option("--max-disp", a.cfg.max_disp, "maximum disparity D")->required();
    cmd->add_option("--out", a.out_path, "checkpoint output path")->required();
    cmd->add_option("--iters", a.cfg.iters, "training iterations (default 75000)");
    cmd->add_option("--lr", a.cfg.lr, "starting learning rate (default 1e-3)");
    cmd->add_option("--batch", a.cfg.batch, "patches per iteration (default per arch/mode)");
    cmd->add_option("--patch", a.cfg.patch, "left patch size (default 10/28/56)");
    cmd->add_option("--seed", a.cfg.seed, "master seed")
        ->envname("STEREOCORR_SEED")
        ->each([&seed_given](const std::string&) { seed_given = true; });
    cmd->add_option("--theta", a.cfg.theta, "feature dimension (default 64)");
    cmd->add_flag("--lr-step-decay", a.cfg.lr_step_decay, "x0.1 at 80% of iterations");
    cmd->add_option("--log-every", a.cfg.log_every, "log cadence in iterations");
    cmd->add_option("--channels", a.channels, "input channels: gray|rgb")
        ->check(CLI::IsMember({"gray", "rgb"}));
    cmd->add_option("--edition", a.edition, "dataset layout: auto|2012|2015")
        ->check(CLI::IsMember({"auto", "2012", "2015"}));
    cmd->add_option("--split-train", a.split_train,
                    "train on a deterministic N-frame split instead of all frames");
    cmd->add_option("--log", a.log_path, "training log path (default <out>.log)");
    cmd->add_option("--threads", a.common.threads, "cap internal parallelism (1 = bitwise runs)")
        ->envname("STEREOCORR_THREADS");
    cmd->add_option("--manifest", a.common.manifest_path,
                    "manifest path (default <out>.manifest.json)");
    cmd->add_option("--from-manifest", a.from_manifest,
                    "load config defaults from an earlier run's manifest");
}

void merge_train_manifest(const CLI::App& cmd, TrainArgs& a) {
    const json doc = cli::load_manifest(a.from_manifest);
    if (!doc.contains("config")) throw FormatError("manifest has no config block");
    const json& c = doc["config"];
    const auto take = [&](const char* flag, auto& dst, const char* key) {
        if (cmd.get_subcommand("train")->count(flag) == 0 && c.contains(key))
            dst = c[key].template get<std::decay_t<decltype(dst)>>();
    };
    take("--arch", a.cfg.arch, "arch");
    if (cmd.get_subcommand("train")->count("--corr") == 0 && c.contains("corr"))
        a.cfg.corr = corr_mode_from_name(c["corr"].get<std::string>());
    take("--max-disp", a.cfg.max_disp, "max_disp");
    take("--iters", a.cfg.iters, "iters");
    take("--lr", a.cfg.lr, "lr");
    take("--batch", a.cfg.batch, "batch");
    take("--patch", a.cfg.patch, "patch");
    take("--seed", a.cfg.seed, "seed");
    take("--theta", a.cfg.theta, "theta");
    take("--channels", a.channels, "channels");
    take("--edition", a.edition, "edition");
    take("--split-train", a.split_train, "split_train");
    take("--data", a.data_root, "data");
}

int run_train(TrainArgs& a) {
    const auto start = std::chrono::system_clock::now();
    apply_threads(a.common.threads);
    a.cfg.in_channels = a.channels == "rgb" ? 3 : 1;

    LoadOptions load_opt;
    load_opt.edition = edition_from(a.edition);
    load_opt.grayscale = a.channels == "gray";
    auto dataset = load_kitti(a.data_root, load_opt);

    json split_info;
    if (a.split_train > 0) {
        std::vector<std::string> ids;
        for (const auto& s : dataset) ids.push_back(s.id);
        const auto split = split_dataset(ids, a.split_train, a.cfg.seed);
        std::vector<StereoSample> subset;
        for (auto& s : dataset)
            if (std::find(split.train_ids.begin(), split.train_ids.end(), s.id) !=
                split.train_ids.end())
                subset.push_back(std::move(s));
        dataset = std::move(subset);
        split_info["train_count"] = split.train_ids.size();
        split_info["val_count"] = split.val_ids.size();
        split_info["seed"] = split.seed;
    }

    const TrainConfig cfg = a.cfg.resolved();
    const std::string log_path = a.log_path.empty() ? a.out_path + ".log" : a.log_path;
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open log " + log_path);

    std::cout << "training " << cfg.arch << " / " << corr_mode_name(cfg.corr) << " on "
              << dataset.size() << " frames, D=" << cfg.max_disp << ", " << cfg.iters
              << " iterations\n";
    auto result = train(cfg, dataset, &log);
    save_checkpoint(a.out_path, result.model);

    json doc = base_manifest("train", a.common, start);
    json& c = doc["config"];
    c["data"] = a.data_root;
    c["arch"] = cfg.arch;
    c["corr"] = corr_mode_name(cfg.corr);
    c["max_disp"] = cfg.max_disp;
    c["patch"] = cfg.patch;
    c["batch"] = cfg.batch;
    c["iters"] = cfg.iters;
    c["lr"] = cfg.lr;
    c["lr_step_decay"] = cfg.lr_step_decay;
    c["seed"] = cfg.seed;
    c["theta"] = cfg.theta;
    c["channels"] = a.channels;
    c["edition"] = a.edition;
    c["split_train"] = a.split_train;
    doc["seed"] = cfg.seed;
    if (!split_info.empty()) doc["split"] = split_info;
    doc["dataset"] = {{"root", a.data_root}, {"frames", dataset.size()}};
    doc["outputs"] = {{"checkpoint", a.out_path}, {"log", log_path}};
    doc["final_loss"] = result.final_loss;
    doc["skipped_patches"] = result.skipped_patches;
    const std::string mpath =
        a.common.manifest_path.empty() ? a.out_path + ".manifest.json" : a.common.manifest_path;
    cli::write_manifest(mpath, doc);
    std::cout << "final loss " << result.final_loss << ", checkpoint " << a.out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArgs {
    CommonArgs common;
    std::string model_path, left_path, right_path, out_path, volume_path;
    int max_disp = 0;
    int band_rows = 8;
};

void add_infer(CLI::App& app, InferArgs& a) {
    auto* cmd = app.add_subcommand("infer", "Disparity map for one rectified pair");
    cmd->add_option("--model", a.model_path, "checkpoint path")->required();
    cmd->add_option("--left", a.left_path, "left image PNG")->required();
    cmd->add_option("--right", a.right_path, "right image PNG")->required();
    cmd->add_option("--max-disp", a.max_disp, "maximum disparity D")->required();
    cmd->add_option("--out", a.out_path, "disparity PNG output")->required();
    cmd->add_option("--band-rows", a.band_rows, "rows per scoring band (default 8)")
        ->envname("STEREOCORR_BAND_ROWS");
    cmd->add_option("--dump-volume", a.volume_path, "also dump the raw cost volume");
    cmd->add_option("--threads", a.common.threads, "cap internal parallelism")
        ->envname("STEREOCORR_THREADS");
    cmd->add_option("--manifest", a.common.manifest_path,
                    "manifest path (default <out>.manifest.json)");
}

void dump_volume(const std::string& path, const CostVolume& vol) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    const std::uint32_t header[3] = {std::uint32_t(vol.rows), std::uint32_t(vol.cols),
                                     std::uint32_t(vol.dmax + 1)};
    f.write(reinterpret_cast<const char*>(header), sizeof header);
    f.write(reinterpret_cast<const char*>(vol.v.data()), std::streamsize(vol.v.size() * 4));
    if (!f) throw IoError("short write to " + path);
}

int run_infer(InferArgs& a) {
    const auto start = std::chrono::system_clock::now();
    apply_threads(a.common.threads);
    StereoModel model = load_checkpoint(a.model_path);

    ImageU8 left = read_image_png(a.left_path);
    ImageU8 right = read_image_png(a.right_path);
    if (model.net.arch.in_channels == 1) {
        left = to_grayscale(left);
        right = to_grayscale(right);
    } else if (left.channels != model.net.arch.in_channels ||
               right.channels != model.net.arch.in_channels) {
        throw FormatError("model expects " + std::to_string(model.net.arch.in_channels) +
                          "-channel input, images carry " + std::to_string(left.channels));
    }

    InferOptions opt;
    opt.band_rows = a.band_rows;
    opt.want_volume = !a.volume_path.empty();
    const auto res = infer(model, left, right, a.max_disp, opt);
    write_disparity_png(a.out_path, res.disp.to_dispmap());
    if (res.volume) dump_volume(a.volume_path, *res.volume);

    json doc = base_manifest("infer", a.common, start);
    doc["config"] = {{"model", a.model_path}, {"left", a.left_path},
                     {"right", a.right_path},  {"max_disp", a.max_disp},
                     {"band_rows", a.band_rows}};
    doc["outputs"] = {{"disparity", a.out_path}};
    if (!a.volume_path.empty()) doc["outputs"]["volume"] = a.volume_path;
    const std::string mpath =
        a.common.manifest_path.empty() ? a.out_path + ".manifest.json" : a.common.manifest_path;
    cli::write_manifest(mpath, doc);
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    CommonArgs common;
    std::string pred_dir, gt_dir, noc_dir, records_path;
    std::vector<double> thresholds = {2.0, 3.0, 5.0};
};

void add_eval(CLI::App& app, EvalArgs& a) {
    auto* cmd = app.add_subcommand("eval", "Bad-pixel metrics over a prediction directory");
    cmd->add_option("--pred", a.pred_dir, "directory of predicted disparity PNGs")->required();
    cmd->add_option("--gt", a.gt_dir, "directory of ground-truth disparity PNGs")->required();
    cmd->add_option("--noc-masks", a.noc_dir, "directory of non-occluded GT PNGs");
    cmd->add_option("--thresholds", a.thresholds, "error thresholds in pixels")->delimiter(',');
    cmd->add_option("--records", a.records_path, "write CSV records here (default stdout)");
    cmd->add_option("--manifest", a.common.manifest_path,
                    "manifest path (default ./eval.manifest.json)");
}

int run_eval(EvalArgs& a) {
    const auto start = std::chrono::system_clock::now();
    const auto report = evaluate_dirs(a.pred_dir, a.gt_dir, a.noc_dir, a.thresholds);
    std::cout << format_metrics_table(report);
    if (a.records_path.empty()) {
        write_metrics_records(report, std::cout);
    } else {
        std::ofstream rec(a.records_path, std::ios::trunc);
        if (!rec) throw IoError("cannot open " + a.records_path);
        write_metrics_records(report, rec);
    }

    json doc = base_manifest("eval", a.common, start);
    doc["config"] = {{"pred", a.pred_dir},
                     {"gt", a.gt_dir},
                     {"noc_masks", a.noc_dir},
                     {"thresholds", a.thresholds}};
    doc["images"] = report.per_image.size();
    doc["missing"] = report.missing;
    if (!a.records_path.empty()) doc["outputs"] = {{"records", a.records_path}};
    cli::write_manifest(
        a.common.manifest_path.empty() ? "eval.manifest.json" : a.common.manifest_path, doc);
    return report.missing.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
    CommonArgs common;
    std::string ops = "all";
    std::uint64_t seed = 1;
    int samples = 32;
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a) {
    auto* cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every op");
    cmd->add_option("--ops", a.ops, "all or one of conv,pool,deconv,batchnorm,relu,branch");
    cmd->add_option("--seed", a.seed, "probe seed")->envname("STEREOCORR_SEED");
    cmd->add_option("--samples", a.samples, "coordinates probed per tensor (0 = all)");
    cmd->add_option("--manifest", a.common.manifest_path,
                    "manifest path (default ./gradcheck.manifest.json)");
}

int run_gradcheck(GradcheckArgs& a) {
    const auto start = std::chrono::system_clock::now();
    std::mt19937_64 rng(a.seed);
    const double eps = 1e-5, tol = 1e-4;
    double worst = 0;
    json per_op;

    const auto note = [&](const std::string& name, double err) {
        std::cout << name << ": max relative error " << err << (err < tol ? "" : "  <-- FAIL")
                  << "\n";
        per_op[name] = err;
        worst = std::max(worst, err);
    };
    const auto want = [&](const char* name) { return a.ops == "all" || a.ops == name; };

    if (want("conv")) {
        Graph<double> g;
        auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{2, 3, 8, 8}));
        x->out.fill_randn(rng, 1.0);
        Tensor4T<double> w(4, 3, 3, 3), b(1, 4, 1, 1);
        w.fill_randn(rng, 0.4);
        b.fill_randn(rng, 0.2);
        auto* conv = g.add(std::make_unique<Conv2dNode<double>>(x, &w, &b, 1, 1, 1));
        Tensor4T<double> coefs(conv->out.shape);
        coefs.fill_randn(rng, 1.0);
        g.add(std::make_unique<DotLossNode<double>>(conv, std::move(coefs)));
        note("conv", grad_check(g, {{"x", &x->out}, {"w", &w}, {"b", &b}}, eps, a.samples, rng)
                         .max_rel_err);
    }
    if (want("pool")) {
        Graph<double> g;
        auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{2, 4, 8, 8}));
        x->out.fill_randn(rng, 1.0);
        auto* p = g.add(std::make_unique<MaxPool2Node<double>>(x));
        Tensor4T<double> coefs(p->out.shape);
        coefs.fill_randn(rng, 1.0);
        g.add(std::make_unique<DotLossNode<double>>(p, std::move(coefs)));
        note("pool", grad_check(g, {{"x", &x->out}}, eps, a.samples, rng).max_rel_err);
    }
    if (want("deconv")) {
        Graph<double> g;
        auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{2, 3, 4, 4}));
        x->out.fill_randn(rng, 1.0);
        Tensor4T<double> w(3, 4, 3, 3), b(1, 4, 1, 1);
        w.fill_randn(rng, 0.4);
        b.fill_randn(rng, 0.2);
        auto* dc = g.add(std::make_unique<Deconv2Node<double>>(x, &w, &b));
        Tensor4T<double> coefs(dc->out.shape);
        coefs.fill_randn(rng, 1.0);
        g.add(std::make_unique<DotLossNode<double>>(dc, std::move(coefs)));
        note("deconv", grad_check(g, {{"x", &x->out}, {"w", &w}, {"b", &b}}, eps, a.samples, rng)
                           .max_rel_err);
    }
    if (want("batchnorm")) {
        Graph<double> g;
        auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{2, 3, 6, 6}));
        x->out.fill_randn(rng, 1.5);
        Tensor4T<double> gamma(1, 3, 1, 1), beta(1, 3, 1, 1);
        gamma.fill(1.1);
        beta.fill(0.2);
        BnMoments<double> moments;
        moments.mean = Tensor4T<double>(1, 3, 1, 1);
        moments.var = Tensor4T<double>(1, 3, 1, 1);
        moments.var.fill(1.0);
        auto* bn =
            g.add(std::make_unique<BatchNormNode<double>>(x, &gamma, &beta, &moments, 1e-5, 0.9));
        Tensor4T<double> coefs(bn->out.shape);
        coefs.fill_randn(rng, 1.0);
        g.add(std::make_unique<DotLossNode<double>>(bn, std::move(coefs)));
        note("batchnorm",
             grad_check(g, {{"x", &x->out}, {"gamma", &gamma}, {"beta", &beta}}, eps, a.samples,
                        rng)
                 .max_rel_err);
    }
    if (want("relu")) {
        Graph<double> g;
        auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{2, 4, 6, 6}));
        x->out.fill_randn(rng, 1.0);
        auto* r = g.add(std::make_unique<ReluNode<double>>(x));
        Tensor4T<double> coefs(r->out.shape);
        coefs.fill_randn(rng, 1.0);
        g.add(std::make_unique<DotLossNode<double>>(r, std::move(coefs)));
        note("relu", grad_check(g, {{"x", &x->out}}, eps, a.samples, rng).max_rel_err);
    }
    if (want("branch")) {
        auto net = NetworkT<double>::build(ArchSpec::s4(6), a.seed);
        Graph<double> g;
        auto* x = g.add(std::make_unique<InputNode<double>>(Shape4{1, 1, 12, 12}));
        x->out.fill_randn(rng, 1.0);
        auto* feat = net.emit_branch(g, x);
        Tensor4T<double> coefs(feat->out.shape);
        coefs.fill_randn(rng, 1.0);
        g.add(std::make_unique<DotLossNode<double>>(feat, std::move(coefs)));
        std::vector<std::pair<std::string, Tensor4T<double>*>> tensors = {{"x", &x->out}};
        for (auto& [n, t] : net.parameters()) tensors.emplace_back(n, t);
        note("branch", grad_check(g, tensors, eps, a.samples, rng).max_rel_err);
    }
    if (per_op.empty()) throw ConfigError("unknown op selection: " + a.ops);

    json doc = base_manifest("gradcheck", a.common, start);
    doc["config"] = {{"ops", a.ops}, {"seed", a.seed}, {"samples", a.samples}};
    doc["worst_rel_err"] = worst;
    doc["per_op"] = per_op;
    cli::write_manifest(
        a.common.manifest_path.empty() ? "gradcheck.manifest.json" : a.common.manifest_path, doc);
    std::cout << "worst relative error " << worst << "\n";
    return worst < tol ? 0 : 3;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    CommonArgs common;
    std::string out_dir;
    std::string size = "64x96";
    SynthConfig cfg;
};

void add_synth(CLI::App& app, SynthArgs& a) {
    auto* cmd = app.add_subcommand("synth", "Generate a synthetic stereo dataset");
    cmd->add_option("--out", a.out_dir, "output dataset directory")->required();
    cmd->add_option("--count", a.cfg.count, "number of pairs (default 20)");
    cmd->add_option("--max-disp", a.cfg.max_disp, "maximum disparity (default 16)");
    cmd->add_option("--size", a.size, "image size HxW (default 64x96)");
    cmd->add_option("--seed", a.cfg.seed, "generator seed")->envname("STEREOCORR_SEED");
    cmd->add_option("--occluders", a.cfg.occluder_count, "rectangles per scene (default 3)");
    cmd->add_option("--bands", a.cfg.textureless_bands, "textureless vertical bands (default 0)");
    cmd->add_option("--band-width", a.cfg.band_width, "band width in pixels (default 12)");
    cmd->add_option("--texture-scale", a.cfg.texture_scale, "texture contrast (default 1.0)");
    cmd->add_option("--bg-min", a.cfg.bg_disp_min, "min background disparity (default 2)");
    cmd->add_option("--bg-max", a.cfg.bg_disp_max, "max background disparity (default 8)");
    cmd->add_option("--manifest", a.common.manifest_path,
                    "manifest path (default <out>/manifest.json)");
}

int run_synth(SynthArgs& a) {
    const auto start = std::chrono::system_clock::now();
    const auto x = a.size.find('x');
    if (x == std::string::npos) throw ConfigError("--size expects HxW, got " + a.size);
    a.cfg.rows = std::stoi(a.size.substr(0, x));
    a.cfg.cols = std::stoi(a.size.substr(x + 1));
    if (a.cfg.bg_disp_min < 1)
        a.cfg.bg_disp_min = 1; // disparity 0 is not representable in the PNG convention

    const auto samples = synth_generate(a.cfg);
    write_synth_dataset(a.out_dir, samples);

    json doc = base_manifest("synth", a.common, start);
    doc["config"] = {{"count", a.cfg.count},
                     {"rows", a.cfg.rows},
                     {"cols", a.cfg.cols},
                     {"max_disp", a.cfg.max_disp},
                     {"bg_disp_min", a.cfg.bg_disp_min},
                     {"bg_disp_max", a.cfg.bg_disp_max},
                     {"occluders", a.cfg.occluder_count},
                     {"textureless_bands", a.cfg.textureless_bands},
                     {"band_width", a.cfg.band_width},
                     {"texture_scale", a.cfg.texture_scale},
                     {"seed", a.cfg.seed}};
    doc["seed"] = a.cfg.seed;
    doc["outputs"] = {{"dataset", a.out_dir}};
    cli::write_manifest(a.common.manifest_path.empty()
                            ? (fs::path(a.out_dir) / "manifest.json").string()
                            : a.common.manifest_path,
                        doc);
    std::cout << "wrote " << samples.size() << " pairs to " << a.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stereo matching with wide-context siamese features"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    TrainArgs train_args;
    InferArgs infer_args;
    EvalArgs eval_args;
    GradcheckArgs gradcheck_args;
    SynthArgs synth_args;
    bool seed_given = false;

    add_train(app, train_args, seed_given);
    add_infer(app, infer_args);
    add_eval(app, eval_args);
    add_gradcheck(app, gradcheck_args);
    add_synth(app, synth_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand("train")) {
            if (!train_args.from_manifest.empty()) merge_train_manifest(app, train_args);
            return run_train(train_args);
        }
        if (app.got_subcommand("infer")) return run_infer(infer_args);
        if (app.got_subcommand("eval")) return run_eval(eval_args);
        if (app.got_subcommand("gradcheck")) return run_gradcheck(gradcheck_args);
        if (app.got_subcommand("synth")) return run_synth(synth_args);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
