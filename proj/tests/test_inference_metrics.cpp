#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "stereocorr/inference.hpp"
#include "stereocorr/metrics.hpp"

using namespace stereocorr;
namespace fs = std::filesystem;

namespace {

FeatureMap random_features(int rows, int cols, int ch, std::mt19937_64& rng) {
    FeatureMap fm(rows, cols, ch);
    std::normal_distribution<float> dist(0.f, 1.f);
    for (auto& v : fm.v) v = dist(rng);
    return fm;
}

} // namespace

TEST_CASE("pixel_error: perfect prediction scores zero at every threshold") {
    DisparityMap pred(4, 5);
    DispMapF gt(4, 5);
    for (size_t t = 0; t < gt.d.size(); ++t) {
        pred.d[t] = int(t % 7);
        gt.d[t] = float(t % 7);
        gt.valid[t] = 1;
    }
    for (const double thr : {2.0, 3.0, 5.0}) CHECK(pixel_error(pred, gt, nullptr, thr) == 0.0);
}

TEST_CASE("pixel_error: hand count, one of four labeled pixels off by four") {
    DisparityMap pred(2, 2);
    DispMapF gt(2, 2);
    for (int t = 0; t < 4; ++t) {
        gt.valid[size_t(t)] = 1;
        gt.d[size_t(t)] = 10.f;
        pred.d[size_t(t)] = 10;
    }
    pred.d[2] = 14; // |14 - 10| = 4
    CHECK(pixel_error(pred, gt, nullptr, 3.0) == 25.0);
    CHECK(pixel_error(pred, gt, nullptr, 5.0) == 0.0);
}

TEST_CASE("pixel_error matches a direct counting oracle on random data") {
    std::mt19937_64 rng(90);
    DisparityMap pred(20, 50);
    DispMapF gt(20, 50);
    std::uniform_int_distribution<int> dpick(0, 30);
    std::uniform_int_distribution<int> coin(0, 4);
    std::vector<std::uint8_t> subset(size_t(1000), 0);
    for (size_t t = 0; t < 1000; ++t) {
        pred.d[t] = dpick(rng);
        gt.d[t] = float(dpick(rng));
        gt.valid[t] = coin(rng) != 0;
        subset[t] = coin(rng) != 1;
    }
    for (const double thr : {2.0, 3.0, 5.0}) {
        std::int64_t den = 0, num = 0;
        for (size_t t = 0; t < 1000; ++t) {
            if (!gt.valid[t] || !subset[t]) continue;
            ++den;
            if (std::abs(pred.d[t] - gt.d[t]) > thr) ++num;
        }
        CHECK(pixel_error(pred, gt, &subset, thr) ==
              doctest::Approx(100.0 * double(num) / double(den)).epsilon(1e-12));
    }
}

TEST_CASE("pixel_error with an empty denominator is an explicit error") {
    DisparityMap pred(2, 2);
    DispMapF gt(2, 2); // nothing valid
    CHECK_THROWS_AS(pixel_error(pred, gt, nullptr, 3.0), Error);
}

TEST_CASE("metrics are monotone in the threshold and Non-Occ counts are a subset") {
    std::mt19937_64 rng(91);
    for (int trial = 0; trial < 20; ++trial) {
        DisparityMap pred(8, 9);
        DispMapF gt(8, 9);
        std::vector<std::uint8_t> noc(72, 0);
        std::uniform_int_distribution<int> dpick(0, 20);
        std::uniform_int_distribution<int> coin(0, 2);
        for (size_t t = 0; t < 72; ++t) {
            pred.d[t] = dpick(rng);
            gt.d[t] = float(dpick(rng));
            gt.valid[t] = coin(rng) != 0;
            noc[t] = gt.valid[t] && coin(rng) != 0;
        }
        bool any = false;
        for (const auto v : gt.valid) any |= v != 0;
        if (!any) continue;
        const auto report = evaluate_pairs({"fixture"}, {pred}, {gt}, {&noc}, {2.0, 3.0, 5.0});
        const auto& cells = report.per_image[0].cells;
        for (int s = 0; s < 2; ++s) {
            CHECK(cells[0 * 2 + size_t(s)].error_pct >= cells[1 * 2 + size_t(s)].error_pct);
            CHECK(cells[1 * 2 + size_t(s)].error_pct >= cells[2 * 2 + size_t(s)].error_pct);
        }
        for (size_t t = 0; t < 3; ++t) CHECK(cells[t * 2].evaluated <= cells[t * 2 + 1].evaluated);
    }
}

TEST_CASE("evaluate aggregates pixel-weighted across images") {
    // image A: 4 labeled pixels, 1 error above 2px; image B: 1 labeled, 1 error
    DisparityMap pa(1, 4), pb(1, 1);
    DispMapF ga(1, 4), gb(1, 1);
    for (int t = 0; t < 4; ++t) {
        ga.valid[size_t(t)] = 1;
        ga.d[size_t(t)] = 5.f;
        pa.d[size_t(t)] = 5;
    }
    pa.d[0] = 9;
    gb.valid[0] = 1;
    gb.d[0] = 7.f;
    pb.d[0] = 1;
    const auto report =
        evaluate_pairs({"a", "b"}, {pa, pb}, {ga, gb}, {&ga.valid, &gb.valid}, {2.0});
    CHECK(report.per_image[0].cells[1].error_pct == 25.0);
    CHECK(report.per_image[1].cells[1].error_pct == 100.0);
    CHECK(report.aggregate.cells[1].error_pct == doctest::Approx(100.0 * 2 / 5));
    CHECK(report.aggregate.cells[1].evaluated == 5);

    std::ostringstream records;
    write_metrics_records(report, records);
    CHECK(records.str().find("image,threshold,subset,error_pct,px_count") == 0);
    CHECK(records.str().find("a,2,all,25.000000,4") != std::string::npos);
    const auto table = format_metrics_table(report);
    CHECK(table.find("aggregate") != std::string::npos);
}

TEST_CASE("evaluate_dirs matches files by name and lists unmatched frames") {
    const auto dir = fs::temp_directory_path() / "stereocorr_eval_dirs";
    fs::remove_all(dir);
    for (const char* sub : {"pred", "gt", "noc"}) fs::create_directories(dir / sub);

    DispMapF m(3, 3);
    for (size_t t = 0; t < 9; ++t) {
        m.d[t] = 4.f;
        m.valid[t] = 1;
    }
    write_disparity_png((dir / "pred" / "0.png").string(), m);
    write_disparity_png((dir / "gt" / "0.png").string(), m);
    write_disparity_png((dir / "noc" / "0.png").string(), m);
    write_disparity_png((dir / "pred" / "orphan.png").string(), m); // no GT partner
    write_disparity_png((dir / "gt" / "unpredicted.png").string(), m);

    const auto report = evaluate_dirs((dir / "pred").string(), (dir / "gt").string(),
                                      (dir / "noc").string(), {2.0, 3.0, 5.0});
    REQUIRE(report.per_image.size() == 1);
    for (const auto& cell : report.per_image[0].cells) CHECK(cell.error_pct == 0.0);
    REQUIRE(report.missing.size() == 2);
    CHECK(report.missing[0].find("orphan") != std::string::npos);
    CHECK(report.missing[1].find("unpredicted") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("banded inference is bitwise identical for any band height") {
    std::mt19937_64 rng(92);
    const int rows = 64, cols = 96, dmax = 16;
    const auto fl = random_features(rows, cols, 8, rng);
    const auto fr = random_features(rows, cols, 8, rng);
    for (const CorrMode corr : {CorrMode::Inner, CorrMode::Learned}) {
        StereoModel model = StereoModel::build(ArchSpec::s4(8), corr, 17);
        InferOptions o1, o8, ofull;
        o1.band_rows = 1;
        o8.band_rows = 8;
        ofull.band_rows = rows;
        o1.want_volume = o8.want_volume = ofull.want_volume = true;
        const auto r1 = infer_features(model, fl, fr, dmax, o1);
        const auto r8 = infer_features(model, fl, fr, dmax, o8);
        const auto rf = infer_features(model, fl, fr, dmax, ofull);
        CHECK(r1.disp.d == r8.disp.d);
        CHECK(r8.disp.d == rf.disp.d);
        CHECK(r1.volume->v == r8.volume->v);
        CHECK(r8.volume->v == rf.volume->v);
    }
}

TEST_CASE("banded learned inference equals the whole-volume public scoring path") {
    std::mt19937_64 rng(93);
    const int rows = 10, cols = 20, dmax = 6, theta = 4;
    const auto fl = random_features(rows, cols, theta, rng);
    const auto fr = random_features(rows, cols, theta, rng);
    StereoModel model = StereoModel::build(ArchSpec::s4(theta), CorrMode::Learned, 18);
    InferOptions opt;
    opt.band_rows = 3;
    opt.want_volume = true;
    const auto res = infer_features(model, fl, fr, dmax, opt);
    const auto pub = learned_scores(build_psi(fl, fr, dmax), *model.head);
    CHECK(res.volume->v == pub.v);
}

TEST_CASE("argmax ignores a constant shift of all scores (head output bias)") {
    std::mt19937_64 rng(94);
    const auto fl = random_features(12, 18, 6, rng);
    const auto fr = random_features(12, 18, 6, rng);
    StereoModel model = StereoModel::build(ArchSpec::s4(6), CorrMode::Learned, 19);
    const auto base = infer_features(model, fl, fr, 8);
    model.head->out_b.values[0] += 7.5f;
    const auto shifted = infer_features(model, fl, fr, 8);
    CHECK(base.disp.d == shifted.disp.d);
}

TEST_CASE("argmax ties break to the smallest disparity") {
    // identical feature columns make every valid disparity tie in inner mode
    FeatureMap fl(2, 6, 3), fr(2, 6, 3);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 6; ++j)
            for (int c = 0; c < 3; ++c) {
                fl.at(i, j, c) = float(c + 1);
                fr.at(i, j, c) = float(c + 1);
            }
    StereoModel model = StereoModel::build(ArchSpec::s4(3), CorrMode::Inner, 20);
    const auto res = infer_features(model, fl, fr, 4);
    for (const int d : res.disp.d) CHECK(d == 0);
}

TEST_CASE("infer validates image sizes and the disparity range") {
    std::mt19937_64 rng(95);
    StereoModel model = StereoModel::build(ArchSpec::s4(4), CorrMode::Inner, 21);
    const auto fl = random_features(8, 10, 4, rng);
    const auto fr = random_features(8, 10, 4, rng);
    CHECK_THROWS_AS(infer_features(model, fl, fr, 10), ShapeError); // D >= cols
    const auto fr_bad = random_features(8, 11, 4, rng);
    CHECK_THROWS_AS(infer_features(model, fl, fr_bad, 4), ShapeError);

    ImageU8 a(16, 20, 1), b(16, 22, 1);
    CHECK_THROWS_AS(infer(model, a, b, 4), ShapeError);
}

TEST_CASE("disparity maps export through the KITTI codec") {
    DisparityMap pred(3, 4);
    for (size_t t = 0; t < pred.d.size(); ++t) pred.d[t] = int(t % 5) + 1;
    const auto m = pred.to_dispmap();
    const auto back = disparity_png_decode(disparity_png_encode(m));
    CHECK(back.d == m.d);
}
