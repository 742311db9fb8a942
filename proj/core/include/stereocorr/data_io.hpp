#pragma once

// Dataset ingestion and the disparity-PNG codec. Everything on disk follows
// the KITTI conventions: left/right image directories, sparse ground-truth
// disparity PNGs (uint16, value = disparity * 256, 0 = invalid), and an
// occluded/non-occluded GT split. The synthetic generator writes the same
// layout so downstream tools never care where data came from.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stereocorr/tensor.hpp"

namespace stereocorr {

struct ImageU8 {
    int rows = 0;
    int cols = 0;
    int channels = 0; // 1 or 3
    std::vector<std::uint8_t> v;

    ImageU8() = default;
    ImageU8(int r, int c, int ch) : rows(r), cols(c), channels(ch) {
        v.assign(size_t(std::int64_t(r) * c * ch), 0);
    }
    std::uint8_t& at(int i, int j, int c = 0) {
        return v[size_t((std::int64_t(i) * cols + j) * channels + c)];
    }
    std::uint8_t at(int i, int j, int c = 0) const {
        return v[size_t((std::int64_t(i) * cols + j) * channels + c)];
    }
    bool empty() const { return v.empty(); }
};

/// Sparse real-valued disparity map; valid[i] == 0 marks missing ground truth.
struct DispMapF {
    int rows = 0;
    int cols = 0;
    std::vector<float> d;
    std::vector<std::uint8_t> valid;

    DispMapF() = default;
    DispMapF(int r, int c) : rows(r), cols(c) {
        d.assign(size_t(std::int64_t(r) * c), 0.f);
        valid.assign(size_t(std::int64_t(r) * c), 0);
    }
    std::int64_t idx(int i, int j) const { return std::int64_t(i) * cols + j; }
    bool empty() const { return d.empty(); }
};

struct StereoSample {
    std::string id;
    ImageU8 left, right;
    DispMapF gt;                   // "All" subset: every GT-valid pixel
    std::vector<std::uint8_t> noc; // 1 = non-occluded (subset of gt.valid)

    void check() const;
};

// --- images ---------------------------------------------------------------

ImageU8 read_image_png(const std::string& path);
void write_image_png(const std::string& path, const ImageU8& img);
ImageU8 to_grayscale(const ImageU8& img);

/// Per-image, per-channel zero-mean / unit-std tensor (1, C, H, W); a channel
/// whose std falls below 1e-8 maps to all zeros.
Tensor4 normalize(const ImageU8& img);

/// The (mean, std-with-floor) pairs normalize() divides by, per channel.
std::vector<std::pair<double, double>> channel_stats(const ImageU8& img);

// --- disparity codec -------------------------------------------------------

/// KITTI uint16 PNG bytes: stored value = round(d * 256), 0 reserved for
/// invalid. Valid disparities must satisfy 0 < d < 256.
std::vector<std::uint8_t> disparity_png_encode(const DispMapF& map);
DispMapF disparity_png_decode(const std::vector<std::uint8_t>& bytes);
DispMapF read_disparity_png(const std::string& path);
void write_disparity_png(const std::string& path, const DispMapF& map);

// --- dataset ---------------------------------------------------------------

enum class KittiEdition { K2012, K2015, Auto };

struct LoadOptions {
    KittiEdition edition = KittiEdition::Auto;
    bool grayscale = true; // convert color inputs to luminance
    bool require_gt = false;
};

/// Loads `root/{image_0,image_1,disp_noc,disp_occ}` (2012 layout) or
/// `root/{image_2,image_3,disp_noc_0,disp_occ_0}` (2015 layout). Frames are
/// matched by filename; ground truth is optional unless require_gt.
std::vector<StereoSample> load_kitti(const std::string& root, const LoadOptions& opt = {});

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::uint64_t seed = 0;
};

/// Deterministic shuffle-split of the sorted id list: first train_count ids
/// of the permutation train, the rest validate.
DatasetSplit split_dataset(std::vector<std::string> ids, int train_count, std::uint64_t seed);

// --- synthetic scenes --------------------------------------------------------

struct SynthConfig {
    int count = 20;
    int rows = 64;
    int cols = 96;
    int max_disp = 16;
    int bg_disp_min = 2;
    int bg_disp_max = 8;
    int occluder_count = 3;       // rectangles at disparities > background
    double texture_scale = 1.0;   // contrast of the blurred-noise texture
    int textureless_bands = 0;    // vertical constant-intensity stripes
    int band_width = 12;
    std::uint64_t seed = 1;
};

/// Smooth-textured background at a planted disparity plus rectangular
/// occluders at larger disparities; the right view is an exact per-region
/// horizontal shift, ground truth is dense, and left pixels invisible in the
/// right view are marked occluded.
std::vector<StereoSample> synth_generate(const SynthConfig& cfg);

/// Writes samples in the 2012 KITTI directory layout.
void write_synth_dataset(const std::string& dir, const std::vector<StereoSample>& samples);

} // namespace stereocorr
