#include <algorithm>

#include "stereocorr/inference.hpp"

namespace stereocorr {

namespace {

// Scores one row band [r0, r1) into band_scores ((r1-r0)*cols rows of D+1).
void score_band(const StereoModel& model, const FeatureMap& fl, const FeatureMap& fr, int max_disp,
                int r0, int r1, std::vector<float>& band_scores) {
    const int W = fl.cols, TH = fl.channels, Dp1 = max_disp + 1;
    const int band = r1 - r0;
    const std::int64_t px = std::int64_t(band) * W;
    band_scores.resize(size_t(px * Dp1));

    if (model.corr == CorrMode::Inner) {
        kern::parallel_for(band, [&](std::int64_t bi) {
            const int i = r0 + int(bi);
            for (int j = 0; j < W; ++j) {
                float* orow = band_scores.data() + (bi * W + j) * Dp1;
                const float* lv = fl.pixel(i, j);
                for (int d = 0; d <= max_disp; ++d) {
                    if (j - d < 0) {
                        orow[d] = std::numeric_limits<float>::lowest();
                        continue;
                    }
                    const float* rv = fr.pixel(i, j - d);
                    float acc = 0.f;
                    for (int c = 0; c < TH; ++c) acc += lv[c] * rv[c];
                    orow[d] = acc;
                }
            }
        });
        return;
    }

    const CorrHead& head = *model.head;
    Tensor4 psi(Shape4{1, 2 * TH, int(px), Dp1});
    kern::parallel_for(band, [&](std::int64_t bi) {
        const int i = r0 + int(bi);
        for (int j = 0; j < W; ++j) {
            const std::int64_t p = bi * W + j;
            for (int c = 0; c < TH; ++c) {
                const float lv = fl.at(i, j, c);
                float* ol = psi.data() + (std::int64_t(c) * px + p) * Dp1;
                float* orr = psi.data() + ((std::int64_t(TH) + c) * px + p) * Dp1;
                for (int d = 0; d <= max_disp; ++d) {
                    ol[d] = lv;
                    orr[d] = (j - d >= 0) ? fr.at(i, j - d, c) : 0.f;
                }
            }
        }
    });
    Tensor4 hidden(psi.shape);
    kern::conv2d_forward(psi, head.hidden_w, head.hidden_b.values, 1, 0, 1, hidden);
    Tensor4 activated(hidden.shape);
    kern::relu_forward(hidden, activated);
    Tensor4 scores(Shape4{1, 1, int(px), Dp1});
    kern::conv2d_forward(activated, head.out_w, head.out_b.values, 1, 0, 1, scores);
    std::copy(scores.values.begin(), scores.values.end(), band_scores.begin());
}

} // namespace

InferResult infer_features(const StereoModel& model, const FeatureMap& fl, const FeatureMap& fr,
                           int max_disp, const InferOptions& opt) {
    if (fl.rows != fr.rows || fl.cols != fr.cols || fl.channels != fr.channels)
        throw ShapeError("infer: feature maps must share shape");
    if (max_disp < 1 || max_disp >= fl.cols)
        throw ShapeError("infer: max disparity " + std::to_string(max_disp) +
                         " must be in [1, cols) with cols = " + std::to_string(fl.cols));
    if (model.corr == CorrMode::Learned && !model.head)
        throw ConfigError("infer: learned correlation requested but model has no head");

    const int H = fl.rows, W = fl.cols, Dp1 = max_disp + 1;
    const int band_rows = opt.band_rows > 0 ? std::min(opt.band_rows, H) : H;

    InferResult res;
    res.disp = DisparityMap(H, W);
    if (opt.want_volume) res.volume = CostVolume(H, W, max_disp);

    std::vector<float> band_scores;
    for (int r0 = 0; r0 < H; r0 += band_rows) {
        const int r1 = std::min(H, r0 + band_rows);
        score_band(model, fl, fr, max_disp, r0, r1, band_scores);
        for (int i = r0; i < r1; ++i) {
            for (int j = 0; j < W; ++j) {
                const float* row = band_scores.data() + (std::int64_t(i - r0) * W + j) * Dp1;
                const int dcap = std::min(max_disp, j);
                int best = 0;
                for (int d = 1; d <= dcap; ++d)
                    if (row[d] > row[best]) best = d;
                res.disp.d[size_t(std::int64_t(i) * W + j)] = best;
            }
        }
        if (res.volume)
            std::copy(band_scores.begin(),
                      band_scores.begin() + std::int64_t(r1 - r0) * W * Dp1,
                      res.volume->v.begin() + std::int64_t(r0) * W * Dp1);
    }
    return res;
}

InferResult infer(StereoModel& model, const ImageU8& left, const ImageU8& right, int max_disp,
                  const InferOptions& opt) {
    if (left.rows != right.rows || left.cols != right.cols)
        throw ShapeError("infer: images must share size, got " + std::to_string(left.rows) + "x" +
                         std::to_string(left.cols) + " vs " + std::to_string(right.rows) + "x" +
                         std::to_string(right.cols));
    const Tensor4 lt = normalize(left);
    const Tensor4 rt = normalize(right);
    const FeatureMap fl = model.net.extract(lt, Mode::Infer);
    const FeatureMap fr = model.net.extract(rt, Mode::Infer);
    return infer_features(model, fl, fr, max_disp, opt);
}

} // namespace stereocorr
