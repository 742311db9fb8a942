#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "rf_oracle.hpp"
#include "stereocorr/checkpoint.hpp"
#include "stereocorr/net.hpp"

using namespace stereocorr;

namespace {

// Forward influence of one marked input pixel through the real network with
// all-ones weights (identity-like batchnorm, nonnegative activations).
int footprint_width(const ArchSpec& arch_in, int size) {
    ArchSpec arch = arch_in;
    arch.theta = 4;
    auto net = NetworkT<float>::build(arch, 1);
    for (auto& blk : net.blocks) {
        blk.w.fill(1.f);
        blk.b.fill(0.f);
        if (blk.has_bn) {
            blk.gamma.fill(1.f);
            blk.beta.fill(0.f);
            blk.moments.mean.fill(0.f);
            blk.moments.var.fill(1.f);
            blk.moments.initialized = true;
        }
    }
    Tensor4 img(1, 1, size, size);
    img.at(0, 0, size / 2, size / 2) = 1.f;
    const auto fm = net.extract(img, Mode::Infer);
    int lo = -1, hi = -1;
    const int row = size / 2;
    for (int j = 0; j < size; ++j) {
        bool on = false;
        for (int c = 0; c < arch.theta; ++c)
            if (fm.at(row, j, c) != 0.f) on = true;
        if (on) {
            if (lo < 0) lo = j;
            hi = j;
        }
    }
    return hi - lo + 1;
}

} // namespace

TEST_CASE("presets: structure of s4/s7/s9") {
    const auto s7 = ArchSpec::s7();
    auto net = NetworkT<float>::build(s7, 3);
    REQUIRE(net.blocks.size() == 9); // 7 convs + 2 deconvs
    int convs = 0, deconvs = 0;
    for (const auto& b : net.blocks) (b.is_deconv ? deconvs : convs)++;
    CHECK(convs == 7);
    CHECK(deconvs == 2);
    CHECK_FALSE(net.blocks[6].has_bn);  // last conv is bare
    CHECK_FALSE(net.blocks[6].has_relu);
    CHECK(net.blocks[7].has_bn);        // first deconv keeps bn+relu
    CHECK_FALSE(net.blocks[8].has_bn);  // final deconv is bare
    CHECK(net.blocks[0].w.shape == Shape4{64, 1, 3, 3});
    CHECK(net.blocks[8].w.shape == Shape4{64, 64, 3, 3});
}

TEST_CASE("s4 on a 10x10 patch: pooled to 5x5 internally, restored to 10x10") {
    auto net = NetworkT<float>::build(ArchSpec::s4(8), 3);
    Graph<float> g;
    auto* x = g.add(std::make_unique<InputNode<float>>(Shape4{1, 1, 10, 10}));
    std::mt19937_64 rng(5);
    x->out.fill_randn(rng, 1.f);
    Node<float>* out = net.emit_branch(g, x);
    g.forward();
    CHECK(out->out.shape == Shape4{1, 8, 10, 10});
    bool saw_5x5 = false;
    for (const auto& n : g.nodes)
        if (n->out.shape.h == 5 && n->out.shape.w == 5) saw_5x5 = true;
    CHECK(saw_5x5);
}

TEST_CASE("same seed builds bitwise-identical parameters") {
    auto a = NetworkT<float>::build(ArchSpec::s7(16), 42);
    auto b = NetworkT<float>::build(ArchSpec::s7(16), 42);
    auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second->values == pb[i].second->values);
    auto c = NetworkT<float>::build(ArchSpec::s7(16), 43);
    CHECK(c.parameters()[0].second->values != pa[0].second->values);
}

TEST_CASE("weight sharing: both branches produce identical features for identical inputs") {
    auto net = NetworkT<float>::build(ArchSpec::s4(8), 11);
    Graph<float> g;
    auto* xl = g.add(std::make_unique<InputNode<float>>(Shape4{1, 1, 12, 12}));
    auto* xr = g.add(std::make_unique<InputNode<float>>(Shape4{1, 1, 12, 12}));
    std::mt19937_64 rng(6);
    xl->out.fill_randn(rng, 1.f);
    xr->out.values = xl->out.values;
    Node<float>* fl = net.emit_branch(g, xl);
    Node<float>* fr = net.emit_branch(g, xr);
    g.forward();
    CHECK(fl->out.values == fr->out.values);
}

TEST_CASE("extract: output spatial size equals input size for every preset") {
    std::mt19937_64 rng(7);
    for (const auto& arch : {ArchSpec::s4(4), ArchSpec::s7(4), ArchSpec::s9(4)}) {
        auto net = NetworkT<float>::build(arch, 9);
        Tensor4 img(1, 1, 37, 51); // deliberately not pooling-aligned
        img.fill_randn(rng, 1.f);
        const auto fm = net.extract(img, Mode::Train);
        CHECK(fm.rows == 37);
        CHECK(fm.cols == 51);
        CHECK(fm.channels == arch.theta);
    }
}

TEST_CASE("extract rejects images smaller than the pooling factor") {
    auto net = NetworkT<float>::build(ArchSpec::s9(4), 1);
    Tensor4 img(1, 1, 4, 4);
    CHECK_THROWS_AS(net.extract(img, Mode::Train), ShapeError);
}

TEST_CASE("receptive field: pool-free formula gives n*(w-1)+1") {
    ArchSpec one;
    one.conv_layers = 1;
    one.pool_after = {};
    CHECK(receptive_field(one) == 3);

    ArchSpec deep;
    deep.conv_layers = 128;
    deep.pool_after = {};
    CHECK(receptive_field(deep) == 257); // covers D+1 = 257 at D = 256
}

TEST_CASE("receptive field grows with pooling depth") {
    const int r4 = receptive_field(ArchSpec::s4());
    const int r7 = receptive_field(ArchSpec::s7());
    const int r9 = receptive_field(ArchSpec::s9());
    CHECK(r7 > r4);
    CHECK(r9 > r7);
}

TEST_CASE("receptive field recurrence agrees with the dependency-mask oracle") {
    for (const auto& arch : {ArchSpec::s4(), ArchSpec::s7(), ArchSpec::s9()}) {
        const int analytic = receptive_field(arch);
        const int traced = rf_oracle::mask_receptive_field(arch, 256);
        CAPTURE(arch.conv_layers);
        CHECK(analytic == traced);
    }
}

TEST_CASE("single-pixel footprint through the real network stays within the recurrence") {
    for (const auto& arch : {ArchSpec::s4(), ArchSpec::s7()}) {
        const int rf = receptive_field(arch);
        const int fp = footprint_width(arch, 64);
        CAPTURE(arch.conv_layers);
        CHECK(fp <= rf);
        CHECK(fp >= rf - arch.pool_factor() + 1);
    }
}

TEST_CASE("checkpoint round-trip is bitwise and size matches the arithmetic") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "stereocorr_ckpt_test";
    fs::create_directories(dir);
    const std::string p1 = (dir / "a.ckpt").string(), p2 = (dir / "b.ckpt").string();

    auto model = StereoModel::build(ArchSpec::s7(8), CorrMode::Learned, 21);
    model.net.set_bn_initialized(true);
    save_checkpoint(p1, model);
    auto loaded = load_checkpoint(p1);
    save_checkpoint(p2, loaded);

    const auto read = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
    };
    const auto b1 = read(p1), b2 = read(p2);
    REQUIRE(!b1.empty());
    CHECK(b1 == b2);

    // header + per-blob (4 + name + 16) + 4 bytes per value
    std::int64_t expected = 4 + 4 + 4 + 4 + 4 * 2 + 4 + 4 + 4 + 4 + 4;
    auto blobs = model.net.parameters();
    auto bufs = model.net.buffers();
    blobs.insert(blobs.end(), bufs.begin(), bufs.end());
    auto hp = model.head->parameters();
    blobs.insert(blobs.end(), hp.begin(), hp.end());
    for (const auto& [name, t] : blobs) expected += 4 + std::int64_t(name.size()) + 16 + 4 * t->numel();
    CHECK(std::int64_t(b1.size()) == expected);

    // loaded model reproduces the saved parameters exactly
    auto orig = model.parameters();
    auto back = loaded.parameters();
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) CHECK(orig[i].second->values == back[i].second->values);
    CHECK(loaded.net.bn_initialized());

    SUBCASE("truncated checkpoints are rejected without partial state") {
        auto bytes = read(p1);
        bytes.resize(bytes.size() / 2);
        const std::string p3 = (dir / "trunc.ckpt").string();
        std::ofstream(p3, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(load_checkpoint(p3), FormatError);
    }
    SUBCASE("bad magic is rejected") {
        auto bytes = read(p1);
        bytes[0] = 'X';
        const std::string p4 = (dir / "magic.ckpt").string();
        std::ofstream(p4, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(load_checkpoint(p4), FormatError);
    }
    fs::remove_all(dir);
}
