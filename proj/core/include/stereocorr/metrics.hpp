#pragma once

// KITTI-protocol bad-pixel rates: percentage of evaluated pixels whose
// predicted disparity is off by more than a threshold, over the Non-Occ and
// All ground-truth subsets.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stereocorr/data_io.hpp"

namespace stereocorr {

/// Integer disparity per pixel; valid == 0 means no prediction (counts as an
/// error at every threshold when evaluated).
struct DisparityMap {
    int rows = 0;
    int cols = 0;
    std::vector<int> d;
    std::vector<std::uint8_t> valid;

    DisparityMap() = default;
    DisparityMap(int r, int c) : rows(r), cols(c) {
        d.assign(size_t(std::int64_t(r) * c), 0);
        valid.assign(size_t(std::int64_t(r) * c), 1);
    }
    DispMapF to_dispmap() const;
};

/// 100 * |{p in subset, GT-valid : |pred(p) - gt(p)| > threshold}| / |{p in subset, GT-valid}|.
/// subset == nullptr means all GT-valid pixels. Throws when the denominator
/// is empty.
double pixel_error(const DisparityMap& pred, const DispMapF& gt,
                   const std::vector<std::uint8_t>* subset, double threshold);

struct MetricsCell {
    double error_pct = 0;
    std::int64_t evaluated = 0;
    std::int64_t errored = 0;
};

struct ImageMetrics {
    std::string id;
    // cells[t * 2 + s]: threshold index t, subset s (0 = Non-Occ, 1 = All)
    std::vector<MetricsCell> cells;
};

struct MetricsReport {
    std::vector<double> thresholds;
    std::vector<ImageMetrics> per_image;
    ImageMetrics aggregate; // pixel-weighted over images
    std::vector<std::string> missing; // prediction files without a GT partner or vice versa
};

/// Per-image metrics for filename-matched (prediction, GT) pairs plus the
/// pixel-weighted aggregate. noc_dir empty -> Non-Occ columns use the All
/// subset counts.
MetricsReport evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir,
                            const std::string& noc_dir, std::vector<double> thresholds);

MetricsReport evaluate_pairs(const std::vector<std::string>& ids,
                             const std::vector<DisparityMap>& preds,
                             const std::vector<DispMapF>& gts,
                             const std::vector<const std::vector<std::uint8_t>*>& noc_masks,
                             std::vector<double> thresholds);

/// Aligned text table in the style of the usual benchmark summaries.
std::string format_metrics_table(const MetricsReport& report);

/// Line records: image,threshold,subset,error_pct,px_count
void write_metrics_records(const MetricsReport& report, std::ostream& out);

} // namespace stereocorr
