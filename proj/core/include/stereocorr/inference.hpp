#pragma once

// One-pass full-image inference: features are extracted once per image, then
// scores are computed in horizontal row bands so the aggregated volume never
// materializes for more than a band at a time. Band height does not change
// any value; every disparity column of a pixel depends only on that pixel's
// feature pairings.

#include <optional>

#include "stereocorr/data_io.hpp"
#include "stereocorr/metrics.hpp"
#include "stereocorr/model.hpp"

namespace stereocorr {

struct InferOptions {
    int band_rows = 8;
    bool want_volume = false; // also return the full cost volume
};

struct InferResult {
    DisparityMap disp;
    std::optional<CostVolume> volume;
};

/// Argmax disparity per pixel (ties break to the smallest disparity,
/// candidates restricted to d <= image column). Images must be rectified and
/// the same size.
InferResult infer(StereoModel& model, const ImageU8& left, const ImageU8& right, int max_disp,
                  const InferOptions& opt = {});

/// Same, starting from already-extracted feature maps.
InferResult infer_features(const StereoModel& model, const FeatureMap& fl, const FeatureMap& fr,
                           int max_disp, const InferOptions& opt = {});

} // namespace stereocorr
