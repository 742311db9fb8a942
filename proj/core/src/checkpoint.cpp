#include <cstring>
#include <fstream>

#include "stereocorr/checkpoint.hpp"

namespace stereocorr {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v & 0xff));
    out.push_back(std::uint8_t((v >> 8) & 0xff));
    out.push_back(std::uint8_t((v >> 16) & 0xff));
    out.push_back(std::uint8_t((v >> 24) & 0xff));
}

struct Cursor {
    const std::uint8_t* data;
    size_t size;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > size) throw FormatError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = std::uint32_t(data[pos]) | (std::uint32_t(data[pos + 1]) << 8) |
                          (std::uint32_t(data[pos + 2]) << 16) |
                          (std::uint32_t(data[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data + pos), n);
        pos += n;
        return s;
    }
    void floats(float* dst, size_t n) {
        need(n * 4);
        std::memcpy(dst, data + pos, n * 4);
        pos += n * 4;
    }
};

void append_blob(std::vector<std::uint8_t>& out, const std::string& name, const Tensor4& t) {
    put_u32(out, std::uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, std::uint32_t(t.shape.n));
    put_u32(out, std::uint32_t(t.shape.c));
    put_u32(out, std::uint32_t(t.shape.h));
    put_u32(out, std::uint32_t(t.shape.w));
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.values.data());
    out.insert(out.end(), raw, raw + t.values.size() * 4);
}

std::vector<std::pair<std::string, Tensor4*>> all_blobs(StereoModel& model) {
    auto blobs = model.net.parameters();
    auto bufs = model.net.buffers();
    blobs.insert(blobs.end(), bufs.begin(), bufs.end());
    if (model.head) {
        auto hp = model.head->parameters();
        blobs.insert(blobs.end(), hp.begin(), hp.end());
    }
    return blobs;
}

} // namespace

void save_checkpoint(const std::string& path, StereoModel& model) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, std::uint32_t(model.net.arch.conv_layers));
    put_u32(out, std::uint32_t(model.net.arch.pool_after.size()));
    for (const int p : model.net.arch.pool_after) put_u32(out, std::uint32_t(p));
    put_u32(out, std::uint32_t(model.net.arch.theta));
    put_u32(out, std::uint32_t(model.net.arch.in_channels));
    put_u32(out, model.corr == CorrMode::Learned ? 1u : 0u);
    put_u32(out, model.net.bn_initialized() ? 1u : 0u); // flags

    const auto blobs = all_blobs(model);
    put_u32(out, std::uint32_t(blobs.size()));
    for (const auto& [name, t] : blobs) append_blob(out, name, *t);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw IoError("short write to " + path);
}

StereoModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    Cursor cur{bytes.data(), bytes.size()};

    if (cur.str(4) != std::string(kCheckpointMagic, 4))
        throw FormatError("not a checkpoint (bad magic): " + path);
    const std::uint32_t version = cur.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          path);

    ArchSpec arch;
    arch.conv_layers = int(cur.u32());
    const std::uint32_t npools = cur.u32();
    if (npools > 16) throw FormatError("implausible pool count in checkpoint: " + path);
    arch.pool_after.clear();
    for (std::uint32_t i = 0; i < npools; ++i) arch.pool_after.push_back(int(cur.u32()));
    arch.theta = int(cur.u32());
    arch.in_channels = int(cur.u32());
    const std::uint32_t corr = cur.u32();
    const std::uint32_t flags = cur.u32();
    arch.validate();

    StereoModel model = StereoModel::build(
        arch, corr ? CorrMode::Learned : CorrMode::Inner, /*seed=*/0);
    auto blobs = all_blobs(model);

    const std::uint32_t count = cur.u32();
    if (count != blobs.size())
        throw FormatError("checkpoint blob count " + std::to_string(count) + " != expected " +
                          std::to_string(blobs.size()) + ": " + path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = cur.u32();
        if (name_len > 256) throw FormatError("implausible blob name length: " + path);
        const std::string name = cur.str(name_len);
        const Shape4 shape{int(cur.u32()), int(cur.u32()), int(cur.u32()), int(cur.u32())};
        Tensor4* dst = nullptr;
        for (auto& [bn, bt] : blobs)
            if (bn == name) dst = bt;
        if (!dst) throw FormatError("unknown blob '" + name + "' in " + path);
        if (!(dst->shape == shape))
            throw FormatError("blob '" + name + "' shape " + shape.str() + " != expected " +
                              dst->shape.str() + ": " + path);
        cur.floats(dst->values.data(), dst->values.size());
    }
    if (cur.pos != cur.size) throw FormatError("trailing bytes in checkpoint: " + path);

    model.net.set_bn_initialized(flags & 1u);
    return model;
}

} // namespace stereocorr
