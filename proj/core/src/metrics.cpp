#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "stereocorr/metrics.hpp"

namespace fs = std::filesystem;

namespace stereocorr {

DispMapF DisparityMap::to_dispmap() const {
    DispMapF out(rows, cols);
    for (size_t t = 0; t < d.size(); ++t) {
        out.d[t] = float(d[t]);
        out.valid[t] = valid[t];
    }
    return out;
}

namespace {

MetricsCell count_errors(const DisparityMap& pred, const DispMapF& gt,
                         const std::vector<std::uint8_t>* subset, double threshold) {
    MetricsCell cell;
    for (size_t t = 0; t < gt.d.size(); ++t) {
        if (!gt.valid[t]) continue;
        if (subset && !(*subset)[t]) continue;
        ++cell.evaluated;
        if (!pred.valid[t] || std::fabs(double(pred.d[t]) - double(gt.d[t])) > threshold)
            ++cell.errored;
    }
    cell.error_pct = cell.evaluated ? 100.0 * double(cell.errored) / double(cell.evaluated) : 0.0;
    return cell;
}

} // namespace

double pixel_error(const DisparityMap& pred, const DispMapF& gt,
                   const std::vector<std::uint8_t>* subset, double threshold) {
    if (pred.rows != gt.rows || pred.cols != gt.cols)
        throw ShapeError("pixel_error: prediction " + std::to_string(pred.rows) + "x" +
                         std::to_string(pred.cols) + " vs ground truth " +
                         std::to_string(gt.rows) + "x" + std::to_string(gt.cols));
    const MetricsCell cell = count_errors(pred, gt, subset, threshold);
    if (cell.evaluated == 0)
        throw Error("pixel_error: no ground-truth pixels in the evaluated subset");
    return cell.error_pct;
}

MetricsReport evaluate_pairs(const std::vector<std::string>& ids,
                             const std::vector<DisparityMap>& preds,
                             const std::vector<DispMapF>& gts,
                             const std::vector<const std::vector<std::uint8_t>*>& noc_masks,
                             std::vector<double> thresholds) {
    MetricsReport report;
    report.thresholds = std::move(thresholds);
    const size_t nt = report.thresholds.size();
    report.aggregate.id = "aggregate";
    report.aggregate.cells.assign(nt * 2, MetricsCell{});

    for (size_t k = 0; k < ids.size(); ++k) {
        ImageMetrics im;
        im.id = ids[k];
        im.cells.reserve(nt * 2);
        for (size_t t = 0; t < nt; ++t) {
            const MetricsCell noc =
                count_errors(preds[k], gts[k], noc_masks[k], report.thresholds[t]);
            const MetricsCell all = count_errors(preds[k], gts[k], nullptr, report.thresholds[t]);
            im.cells.push_back(noc);
            im.cells.push_back(all);
            for (int s = 0; s < 2; ++s) {
                auto& agg = report.aggregate.cells[t * 2 + size_t(s)];
                const auto& cell = s == 0 ? noc : all;
                agg.evaluated += cell.evaluated;
                agg.errored += cell.errored;
            }
        }
        report.per_image.push_back(std::move(im));
    }
    for (auto& cell : report.aggregate.cells)
        cell.error_pct =
            cell.evaluated ? 100.0 * double(cell.errored) / double(cell.evaluated) : 0.0;
    return report;
}

MetricsReport evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir,
                            const std::string& noc_dir, std::vector<double> thresholds) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(pred_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());

    std::vector<std::string> ids, missing;
    std::vector<DisparityMap> preds;
    std::vector<DispMapF> gts;
    std::vector<std::vector<std::uint8_t>> nocs;
    for (const auto& name : names) {
        const fs::path gt_path = fs::path(gt_dir) / name;
        if (!fs::exists(gt_path)) {
            missing.push_back(name + " (no ground truth)");
            continue;
        }
        const DispMapF raw_pred = read_disparity_png((fs::path(pred_dir) / name).string());
        const DispMapF gt = read_disparity_png(gt_path.string());
        DisparityMap pred(raw_pred.rows, raw_pred.cols);
        for (size_t t = 0; t < raw_pred.d.size(); ++t) {
            pred.d[t] = int(std::lround(double(raw_pred.d[t])));
            pred.valid[t] = raw_pred.valid[t];
        }
        std::vector<std::uint8_t> noc;
        if (!noc_dir.empty()) {
            const fs::path noc_path = fs::path(noc_dir) / name;
            if (!fs::exists(noc_path)) {
                missing.push_back(name + " (no occlusion mask)");
                continue;
            }
            noc = read_disparity_png(noc_path.string()).valid;
        } else {
            noc = gt.valid;
        }
        ids.push_back(fs::path(name).stem().string());
        preds.push_back(std::move(pred));
        gts.push_back(std::move(gt));
        nocs.push_back(std::move(noc));
    }
    for (const auto& entry : fs::directory_iterator(gt_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        if (!fs::exists(fs::path(pred_dir) / entry.path().filename()))
            missing.push_back(entry.path().filename().string() + " (no prediction)");
    }
    std::sort(missing.begin(), missing.end());

    std::vector<const std::vector<std::uint8_t>*> noc_ptrs;
    noc_ptrs.reserve(nocs.size());
    for (const auto& n : nocs) noc_ptrs.push_back(&n);
    MetricsReport report = evaluate_pairs(ids, preds, gts, noc_ptrs, std::move(thresholds));
    report.missing = std::move(missing);
    return report;
}

std::string format_metrics_table(const MetricsReport& report) {
    std::string out;
    char buf[256];
    out += "image          ";
    for (const double t : report.thresholds) {
        std::snprintf(buf, sizeof buf, " | >%g px Non-Occ  >%g px All", t, t);
        out += buf;
    }
    out += "\n";
    const auto row = [&](const ImageMetrics& im) {
        std::snprintf(buf, sizeof buf, "%-15s", im.id.c_str());
        out += buf;
        for (size_t t = 0; t < report.thresholds.size(); ++t) {
            std::snprintf(buf, sizeof buf, " | %9.2f %%  %7.2f %%", im.cells[t * 2].error_pct,
                          im.cells[t * 2 + 1].error_pct);
            out += buf;
        }
        out += "\n";
    };
    for (const auto& im : report.per_image) row(im);
    row(report.aggregate);
    if (!report.missing.empty()) {
        out += "unmatched files:\n";
        for (const auto& m : report.missing) out += "  " + m + "\n";
    }
    return out;
}

void write_metrics_records(const MetricsReport& report, std::ostream& os) {
    os << "image,threshold,subset,error_pct,px_count\n";
    char buf[256];
    const auto rows = [&](const ImageMetrics& im) {
        for (size_t t = 0; t < report.thresholds.size(); ++t) {
            for (int s = 0; s < 2; ++s) {
                const auto& cell = im.cells[t * 2 + size_t(s)];
                std::snprintf(buf, sizeof buf, "%s,%g,%s,%.6f,%lld\n", im.id.c_str(),
                              report.thresholds[t], s == 0 ? "noc" : "all", cell.error_pct,
                              static_cast<long long>(cell.evaluated));
                os << buf;
            }
        }
    };
    for (const auto& im : report.per_image) rows(im);
    rows(report.aggregate);
}

} // namespace stereocorr
