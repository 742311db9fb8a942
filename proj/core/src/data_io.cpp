#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "stereocorr/data_io.hpp"
#include "stereocorr/random.hpp"

namespace fs = std::filesystem;

namespace stereocorr {

void StereoSample::check() const {
    if (left.rows != right.rows || left.cols != right.cols)
        throw FormatError("sample " + id + ": left " + std::to_string(left.rows) + "x" +
                          std::to_string(left.cols) + " vs right " + std::to_string(right.rows) +
                          "x" + std::to_string(right.cols));
    if (left.channels != right.channels)
        throw FormatError("sample " + id + ": channel mismatch between views");
    if (!gt.empty()) {
        if (gt.rows != left.rows || gt.cols != left.cols)
            throw FormatError("sample " + id + ": ground truth size mismatch");
        for (size_t t = 0; t < gt.d.size(); ++t)
            if (gt.valid[t] && gt.d[t] < 0.f)
                throw FormatError("sample " + id + ": negative ground-truth disparity");
    }
    if (!noc.empty() && noc.size() != size_t(std::int64_t(left.rows) * left.cols))
        throw FormatError("sample " + id + ": occlusion mask size mismatch");
}

ImageU8 to_grayscale(const ImageU8& img) {
    if (img.channels == 1) return img;
    ImageU8 out(img.rows, img.cols, 1);
    for (std::int64_t t = 0; t < std::int64_t(img.rows) * img.cols; ++t) {
        const double r = img.v[size_t(3 * t)], g = img.v[size_t(3 * t + 1)],
                     b = img.v[size_t(3 * t + 2)];
        out.v[size_t(t)] = std::uint8_t(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
    }
    return out;
}

std::vector<std::pair<double, double>> channel_stats(const ImageU8& img) {
    if (img.empty()) throw ShapeError("normalize: empty image");
    const std::int64_t n = std::int64_t(img.rows) * img.cols;
    std::vector<std::pair<double, double>> stats(size_t(img.channels));
    for (int c = 0; c < img.channels; ++c) {
        double sum = 0;
        for (std::int64_t t = 0; t < n; ++t) sum += img.v[size_t(t * img.channels + c)];
        const double mean = sum / double(n);
        double ssq = 0;
        for (std::int64_t t = 0; t < n; ++t) {
            const double dv = double(img.v[size_t(t * img.channels + c)]) - mean;
            ssq += dv * dv;
        }
        const double stddev = std::sqrt(ssq / double(n));
        stats[size_t(c)] = {mean, std::max(stddev, 1e-8)};
    }
    return stats;
}

Tensor4 normalize(const ImageU8& img) {
    const auto stats = channel_stats(img);
    Tensor4 out(1, img.channels, img.rows, img.cols);
    for (int c = 0; c < img.channels; ++c) {
        const float mean = float(stats[size_t(c)].first);
        const float inv = float(1.0 / stats[size_t(c)].second);
        float* plane = out.plane(0, c);
        for (std::int64_t t = 0; t < std::int64_t(img.rows) * img.cols; ++t)
            plane[t] = (float(img.v[size_t(t * img.channels + c)]) - mean) * inv;
    }
    return out;
}

namespace {

struct KittiDirs {
    std::string left, right, occ, noc;
};

KittiDirs kitti_dirs(const std::string& root, KittiEdition edition) {
    const auto has = [&](const char* d) { return fs::is_directory(fs::path(root) / d); };
    if (edition == KittiEdition::Auto) {
        if (has("image_2") && has("image_3")) edition = KittiEdition::K2015;
        else if (has("image_0") || has("colored_0")) edition = KittiEdition::K2012;
        else
            throw FormatError("no KITTI image directories under " + root +
                              " (expected image_0/image_1 or image_2/image_3)");
    }
    if (edition == KittiEdition::K2015)
        return {"image_2", "image_3", "disp_occ_0", "disp_noc_0"};
    if (has("image_0")) return {"image_0", "image_1", "disp_occ", "disp_noc"};
    return {"colored_0", "colored_1", "disp_occ", "disp_noc"};
}

} // namespace

std::vector<StereoSample> load_kitti(const std::string& root, const LoadOptions& opt) {
    const KittiDirs dirs = kitti_dirs(root, opt.edition);
    const fs::path left_dir = fs::path(root) / dirs.left;
    if (!fs::is_directory(left_dir))
        throw FormatError("missing image directory " + left_dir.string());

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(left_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());

    std::vector<StereoSample> samples;
    samples.reserve(names.size());
    for (const auto& name : names) {
        StereoSample s;
        s.id = fs::path(name).stem().string();
        s.left = read_image_png((left_dir / name).string());
        const fs::path right_path = fs::path(root) / dirs.right / name;
        if (!fs::exists(right_path))
            throw FormatError("missing right view " + right_path.string());
        s.right = read_image_png(right_path.string());
        if (opt.grayscale) {
            s.left = to_grayscale(s.left);
            s.right = to_grayscale(s.right);
        }

        const fs::path occ_path = fs::path(root) / dirs.occ / name;
        const fs::path noc_path = fs::path(root) / dirs.noc / name;
        DispMapF noc_map;
        if (fs::exists(noc_path)) noc_map = read_disparity_png(noc_path.string());
        if (fs::exists(occ_path)) s.gt = read_disparity_png(occ_path.string());
        else if (!noc_map.empty()) s.gt = noc_map;
        else if (opt.require_gt)
            throw FormatError("no ground truth for frame " + s.id + " under " + root);

        if (!s.gt.empty()) {
            s.noc = noc_map.empty() ? s.gt.valid : noc_map.valid;
        }
        s.check();
        samples.push_back(std::move(s));
    }
    return samples;
}

DatasetSplit split_dataset(std::vector<std::string> ids, int train_count, std::uint64_t seed) {
    if (train_count < 0 || train_count > int(ids.size()))
        throw ConfigError("split: train count " + std::to_string(train_count) +
                          " outside dataset size " + std::to_string(ids.size()));
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(substream(seed, "split"));
    std::shuffle(ids.begin(), ids.end(), rng);
    DatasetSplit split;
    split.seed = seed;
    split.train_ids.assign(ids.begin(), ids.begin() + train_count);
    split.val_ids.assign(ids.begin() + train_count, ids.end());
    return split;
}

void write_synth_dataset(const std::string& dir, const std::vector<StereoSample>& samples) {
    const fs::path root(dir);
    for (const char* sub : {"image_0", "image_1", "disp_occ", "disp_noc"})
        fs::create_directories(root / sub);
    for (const auto& s : samples) {
        const std::string name = s.id + ".png";
        write_image_png((root / "image_0" / name).string(), s.left);
        write_image_png((root / "image_1" / name).string(), s.right);
        write_disparity_png((root / "disp_occ" / name).string(), s.gt);
        DispMapF noc_map = s.gt;
        for (size_t t = 0; t < noc_map.valid.size(); ++t)
            if (!s.noc[t]) noc_map.valid[t] = 0;
        write_disparity_png((root / "disp_noc" / name).string(), noc_map);
    }
}

} // namespace stereocorr
