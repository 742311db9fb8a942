// Synthetic stereo scenes for desk-scale verification. Each scene is a
// smooth-textured background plane at one disparity plus rectangular
// occluders at larger disparities. Every surface has its own texture plane
// indexed in left-image coordinates, so the right view is an exact integer
// shift of the same rounded texture and the re-warp identity
// right(i, j - gt(i, j)) == left(i, j) holds exactly on non-occluded pixels.

#include <algorithm>
#include <cmath>
#include <random>

#include "stereocorr/data_io.hpp"
#include "stereocorr/random.hpp"

namespace stereocorr {

namespace {

struct Rect {
    int i0, i1, j0, j1; // half-open
    int disp;
    bool contains(int i, int j) const { return i >= i0 && i < i1 && j >= j0 && j < j1; }
};

// Blurred-noise texture plane, width plane_w (left coords 0..plane_w).
std::vector<std::uint8_t> make_texture(int rows, int plane_w, double contrast,
                                       std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 255.0);
    std::vector<double> noise(size_t(std::int64_t(rows) * plane_w));
    for (auto& v : noise) v = uni(rng);
    std::vector<std::uint8_t> out(noise.size());
    const int R = 2; // 5x5 box blur
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < plane_w; ++j) {
            double acc = 0;
            int cnt = 0;
            for (int di = -R; di <= R; ++di) {
                const int y = std::clamp(i + di, 0, rows - 1);
                for (int dj = -R; dj <= R; ++dj) {
                    const int x = std::clamp(j + dj, 0, plane_w - 1);
                    acc += noise[size_t(std::int64_t(y) * plane_w + x)];
                    ++cnt;
                }
            }
            const double blurred = acc / cnt;
            const double v = 128.0 + contrast * (blurred - 128.0) * 2.5;
            out[size_t(std::int64_t(i) * plane_w + j)] =
                std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

} // namespace

std::vector<StereoSample> synth_generate(const SynthConfig& cfg) {
    if (cfg.max_disp >= cfg.cols)
        throw ConfigError("synth: max disparity " + std::to_string(cfg.max_disp) +
                          " must be < cols = " + std::to_string(cfg.cols));
    if (cfg.bg_disp_min < 0 || cfg.bg_disp_max > cfg.max_disp || cfg.bg_disp_min > cfg.bg_disp_max)
        throw ConfigError("synth: background disparity range invalid");

    std::mt19937_64 rng(substream(cfg.seed, "synth"));
    const int rows = cfg.rows, cols = cfg.cols;
    const int plane_w = cols + cfg.max_disp + 1;

    std::vector<StereoSample> samples;
    samples.reserve(size_t(cfg.count));
    for (int idx = 0; idx < cfg.count; ++idx) {
        std::uniform_int_distribution<int> bg_pick(cfg.bg_disp_min, cfg.bg_disp_max);
        const int bg_disp = bg_pick(rng);

        auto bg_tex = make_texture(rows, plane_w, cfg.texture_scale, rng);
        for (int b = 0; b < cfg.textureless_bands; ++b) {
            std::uniform_int_distribution<int> xpick(0, std::max(0, cols - cfg.band_width - 1));
            std::uniform_int_distribution<int> cpick(40, 215);
            const int x0 = xpick(rng);
            const std::uint8_t c = std::uint8_t(cpick(rng));
            for (int i = 0; i < rows; ++i)
                for (int j = x0; j < std::min(plane_w, x0 + cfg.band_width); ++j)
                    bg_tex[size_t(std::int64_t(i) * plane_w + j)] = c;
        }

        std::vector<Rect> rects;
        std::vector<std::vector<std::uint8_t>> rect_tex;
        const int occ_lo = std::min(bg_disp + 2, cfg.max_disp);
        std::uniform_int_distribution<int> dpick(occ_lo, cfg.max_disp);
        for (int k = 0; k < cfg.occluder_count; ++k) {
            std::uniform_int_distribution<int> hpick(rows / 8, rows / 3);
            std::uniform_int_distribution<int> wpick(cols / 10, cols / 4);
            const int h = hpick(rng), w = wpick(rng);
            std::uniform_int_distribution<int> ipick(0, rows - h - 1);
            std::uniform_int_distribution<int> jpick(0, cols - w - 1);
            Rect r{0, 0, 0, 0, dpick(rng)};
            r.i0 = ipick(rng);
            r.i1 = r.i0 + h;
            r.j0 = jpick(rng);
            r.j1 = r.j0 + w;
            rects.push_back(r);
            rect_tex.push_back(make_texture(rows, plane_w, cfg.texture_scale, rng));
        }

        // Surface with the largest disparity owns a point; later rectangles
        // win ties. Index -1 = background.
        const auto top_surface = [&](int i, int left_j) {
            int best = -1, best_d = bg_disp;
            for (int k = 0; k < int(rects.size()); ++k) {
                if (rects[size_t(k)].contains(i, left_j) && rects[size_t(k)].disp >= best_d) {
                    best = k;
                    best_d = rects[size_t(k)].disp;
                }
            }
            return best;
        };
        const auto surface_disp = [&](int k) { return k < 0 ? bg_disp : rects[size_t(k)].disp; };
        const auto surface_tex = [&](int k) -> const std::vector<std::uint8_t>& {
            return k < 0 ? bg_tex : rect_tex[size_t(k)];
        };

        StereoSample s;
        char buf[16];
        std::snprintf(buf, sizeof buf, "%06d_10", idx);
        s.id = buf;
        s.left = ImageU8(rows, cols, 1);
        s.right = ImageU8(rows, cols, 1);
        s.gt = DispMapF(rows, cols);
        s.noc.assign(size_t(std::int64_t(rows) * cols), 0);

        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                const int k = top_surface(i, j);
                s.left.at(i, j) = surface_tex(k)[size_t(std::int64_t(i) * plane_w + j)];
                s.gt.d[size_t(s.gt.idx(i, j))] = float(surface_disp(k));
                s.gt.valid[size_t(s.gt.idx(i, j))] = 1;
            }
        }
        // Right view: for each right pixel, the frontmost surface whose left
        // footprint covers jr + d. The background covers everything, so every
        // right pixel is textured (including regions dis-occluded next to
        // rectangles).
        for (int i = 0; i < rows; ++i) {
            for (int jr = 0; jr < cols; ++jr) {
                int win = -1, win_d = bg_disp;
                for (int k = 0; k < int(rects.size()); ++k) {
                    const Rect& r = rects[size_t(k)];
                    if (r.contains(i, jr + r.disp) && r.disp >= win_d) {
                        win = k;
                        win_d = r.disp;
                    }
                }
                s.right.at(i, jr) =
                    surface_tex(win)[size_t(std::int64_t(i) * plane_w + jr + win_d)];
            }
        }
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                const int k = top_surface(i, j);
                const int jr = j - surface_disp(k);
                if (jr < 0) continue; // leaves the right view: occluded
                int win = -1, win_d = bg_disp;
                for (int m = 0; m < int(rects.size()); ++m) {
                    const Rect& r = rects[size_t(m)];
                    if (r.contains(i, jr + r.disp) && r.disp >= win_d) {
                        win = m;
                        win_d = r.disp;
                    }
                }
                if (win == k) s.noc[size_t(std::int64_t(i) * cols + j)] = 1;
            }
        }
        s.check();
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace stereocorr
