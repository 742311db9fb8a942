#pragma once

// Correlation stage: inner-product cost volumes, the aggregated feature space
// pairing replicated left descriptors with disparity-shifted right
// descriptors, and the small learned scoring head that convolves along the
// disparity axis. Head parameters never span the pixel axis, so a trained
// head can score any maximum disparity.

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "stereocorr/kernels.hpp"
#include "stereocorr/random.hpp"
#include "stereocorr/tensor.hpp"

namespace stereocorr {

/// Per-pixel descriptor map with contiguous channel vectors: (rows, cols, channels).
template <typename T>
struct FeatureMapT {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    std::vector<T> v;

    FeatureMapT() = default;
    FeatureMapT(int r, int c, int ch) : rows(r), cols(c), channels(ch) {
        v.assign(size_t(std::int64_t(r) * c * ch), T(0));
    }
    T& at(int i, int j, int c) { return v[size_t((std::int64_t(i) * cols + j) * channels + c)]; }
    const T& at(int i, int j, int c) const {
        return v[size_t((std::int64_t(i) * cols + j) * channels + c)];
    }
    const T* pixel(int i, int j) const {
        return v.data() + size_t((std::int64_t(i) * cols + j) * channels);
    }
};

using FeatureMap = FeatureMapT<float>;

/// Matching score per left pixel per candidate disparity: (rows, cols, D+1),
/// entry (i, j, d) scores left (i, j) against right (i, j-d).
template <typename T>
struct CostVolumeT {
    int rows = 0;
    int cols = 0;
    int dmax = 0;
    std::vector<T> v;

    CostVolumeT() = default;
    CostVolumeT(int r, int c, int d) : rows(r), cols(c), dmax(d) {
        v.assign(size_t(std::int64_t(r) * c * (d + 1)), T(0));
    }
    T& at(int i, int j, int d) { return v[size_t((std::int64_t(i) * cols + j) * (dmax + 1) + d)]; }
    const T& at(int i, int j, int d) const {
        return v[size_t((std::int64_t(i) * cols + j) * (dmax + 1) + d)];
    }
};

using CostVolume = CostVolumeT<float>;

/// Aggregated feature space: (rows*cols, D+1, 2*theta), pixel index
/// p = i*cols + j, channels innermost. Left features occupy [0, theta),
/// right features [theta, 2*theta), zeros where j - d < 0.
template <typename T>
struct PsiVolumeT {
    int rows = 0;
    int cols = 0;
    int dmax = 0;
    int theta = 0;
    std::vector<T> v;

    PsiVolumeT() = default;
    PsiVolumeT(int r, int c, int d, int th) : rows(r), cols(c), dmax(d), theta(th) {
        v.assign(size_t(std::int64_t(r) * c * (d + 1) * 2 * th), T(0));
    }
    std::int64_t pixels() const { return std::int64_t(rows) * cols; }
    T& at(std::int64_t p, int d, int c) {
        return v[size_t((p * (dmax + 1) + d) * 2 * theta + c)];
    }
    const T& at(std::int64_t p, int d, int c) const {
        return v[size_t((p * (dmax + 1) + d) * 2 * theta + c)];
    }
};

using PsiVolume = PsiVolumeT<float>;

/// Learned scoring head: one activated hidden layer (2*theta units) and one
/// output unit, both 1x3 along the disparity axis with zero padding 1.
template <typename T>
struct CorrHeadT {
    int theta = 0;
    Tensor4T<T> hidden_w; // (2*theta, 2*theta, 1, 3)
    Tensor4T<T> hidden_b; // (1, 2*theta, 1, 1)
    Tensor4T<T> out_w;    // (1, 2*theta, 1, 3)
    Tensor4T<T> out_b;    // (1, 1, 1, 1)

    static CorrHeadT build(int theta, std::uint64_t seed, double init_gain = 1.0) {
        CorrHeadT h;
        h.theta = theta;
        const int c2 = 2 * theta;
        h.hidden_w = Tensor4T<T>(c2, c2, 1, 3);
        h.hidden_b = Tensor4T<T>(1, c2, 1, 1);
        h.out_w = Tensor4T<T>(1, c2, 1, 3);
        h.out_b = Tensor4T<T>(1, 1, 1, 1);
        std::mt19937_64 rng(substream(seed, "corr-head"));
        h.hidden_w.fill_randn(rng, T(init_gain * std::sqrt(2.0 / double(c2 * 3))));
        h.out_w.fill_randn(rng, T(init_gain * std::sqrt(2.0 / double(c2 * 3))));
        return h;
    }

    std::vector<std::pair<std::string, Tensor4T<T>*>> parameters() {
        return {{"head.hidden.w", &hidden_w},
                {"head.hidden.b", &hidden_b},
                {"head.out.w", &out_w},
                {"head.out.b", &out_b}};
    }

    std::int64_t param_count() const {
        return hidden_w.numel() + hidden_b.numel() + out_w.numel() + out_b.numel();
    }
};

using CorrHead = CorrHeadT<float>;

namespace detail {
template <typename T>
void check_feature_pair(const FeatureMapT<T>& l, const FeatureMapT<T>& r, int dmax) {
    if (l.rows != r.rows || l.cols != r.cols || l.channels != r.channels)
        throw ShapeError("correlation: feature maps must share shape, got " +
                         std::to_string(l.rows) + "x" + std::to_string(l.cols) + "x" +
                         std::to_string(l.channels) + " vs " + std::to_string(r.rows) + "x" +
                         std::to_string(r.cols) + "x" + std::to_string(r.channels));
    if (dmax < 1) throw ShapeError("correlation: max disparity must be >= 1");
    if (dmax >= l.cols)
        throw ShapeError("correlation: max disparity " + std::to_string(dmax) +
                         " must be < cols = " + std::to_string(l.cols));
}
} // namespace detail

/// Inner-product cost volume over two same-shape feature maps. Out-of-image
/// pairings (j - d < 0) get the most-negative finite score.
template <typename T>
CostVolumeT<T> inner_product_volume(const FeatureMapT<T>& l, const FeatureMapT<T>& r, int dmax) {
    detail::check_feature_pair(l, r, dmax);
    CostVolumeT<T> vol(l.rows, l.cols, dmax);
    const int TH = l.channels, Dp1 = dmax + 1;
    kern::parallel_for(l.rows, [&](std::int64_t i) {
        for (int j = 0; j < l.cols; ++j) {
            const T* lv = l.pixel(int(i), j);
            T* orow = vol.v.data() + (i * l.cols + j) * Dp1;
            for (int d = 0; d <= dmax; ++d) {
                if (j - d < 0) {
                    orow[d] = std::numeric_limits<T>::lowest();
                    continue;
                }
                const T* rv = r.pixel(int(i), j - d);
                T acc = T(0);
                for (int c = 0; c < TH; ++c) acc += lv[c] * rv[c];
                orow[d] = acc;
            }
        }
    });
    return vol;
}

/// Pure re-indexing of the two feature maps into the aggregated volume.
template <typename T>
PsiVolumeT<T> build_psi(const FeatureMapT<T>& l, const FeatureMapT<T>& r, int dmax) {
    detail::check_feature_pair(l, r, dmax);
    PsiVolumeT<T> psi(l.rows, l.cols, dmax, l.channels);
    const int TH = l.channels;
    kern::parallel_for(l.rows, [&](std::int64_t i) {
        for (int j = 0; j < l.cols; ++j) {
            const std::int64_t p = i * l.cols + j;
            const T* lv = l.pixel(int(i), j);
            for (int d = 0; d <= dmax; ++d) {
                T* dst = &psi.at(p, d, 0);
                for (int c = 0; c < TH; ++c) dst[c] = lv[c];
                if (j - d >= 0) {
                    const T* rv = r.pixel(int(i), j - d);
                    for (int c = 0; c < TH; ++c) dst[TH + c] = rv[c];
                } else {
                    for (int c = 0; c < TH; ++c) dst[TH + c] = T(0);
                }
            }
        }
    });
    return psi;
}

/// Applies the scoring head along the disparity axis of a pre-built volume
/// and reshapes back to (rows, cols, D+1).
template <typename T>
CostVolumeT<T> learned_scores(const PsiVolumeT<T>& psi, const CorrHeadT<T>& head) {
    if (psi.theta != head.theta)
        throw ShapeError("learned_scores: volume carries 2*theta = " +
                         std::to_string(2 * psi.theta) + " channels, head expects " +
                         std::to_string(2 * head.theta));
    const int c2 = 2 * psi.theta, Dp1 = psi.dmax + 1;
    const std::int64_t P = psi.pixels();

    // (p, d, c) -> (1, c, p, d)
    Tensor4T<T> x(Shape4{1, c2, int(P), Dp1});
    kern::parallel_for(P, [&](std::int64_t p) {
        for (int d = 0; d < Dp1; ++d) {
            const T* src = &psi.at(p, d, 0);
            for (int c = 0; c < c2; ++c)
                x.values[size_t((std::int64_t(c) * P + p) * Dp1 + d)] = src[c];
        }
    });

    Tensor4T<T> hidden(Shape4{1, c2, int(P), Dp1});
    kern::conv2d_forward(x, head.hidden_w, head.hidden_b.values, 1, 0, 1, hidden);
    Tensor4T<T> activated(hidden.shape);
    kern::relu_forward(hidden, activated);
    Tensor4T<T> scores(Shape4{1, 1, int(P), Dp1});
    kern::conv2d_forward(activated, head.out_w, head.out_b.values, 1, 0, 1, scores);

    CostVolumeT<T> vol(psi.rows, psi.cols, psi.dmax);
    std::copy(scores.values.begin(), scores.values.end(), vol.v.begin());
    return vol;
}

/// Rebuilds the aggregated volume for a new maximum disparity and rescores it
/// with the same trained head; no retraining involved.
template <typename T>
CostVolumeT<T> rebuild_scores_variable_d(const CorrHeadT<T>& head, const FeatureMapT<T>& l,
                                         const FeatureMapT<T>& r, int dmax_new) {
    return learned_scores(build_psi(l, r, dmax_new), head);
}

} // namespace stereocorr
