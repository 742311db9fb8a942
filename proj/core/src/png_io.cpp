// libpng-backed image and disparity-map codecs. Disparity maps follow the
// KITTI uint16 convention: stored value = round(d * 256), 0 = invalid.

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "stereocorr/data_io.hpp"
#include "stereocorr/errors.hpp"

namespace stereocorr {

namespace {

struct MemCursor {
    const std::uint8_t* data;
    size_t size;
    size_t pos;
};

void mem_read(png_structp png, png_bytep out, png_size_t n) {
    auto* cur = static_cast<MemCursor*>(png_get_io_ptr(png));
    if (cur->pos + n > cur->size) {
        png_error(png, "unexpected end of PNG stream");
        return;
    }
    std::memcpy(out, cur->data + cur->pos, n);
    cur->pos += n;
}

void mem_write(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void mem_flush(png_structp) {}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

} // namespace

ImageU8 decode_image_png(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw Error("libpng allocation failed");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw Error("libpng allocation failed");
    MemCursor cur{bytes.data(), bytes.size(), 0};
    ImageU8 img;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(r.png)))
        throw FormatError("malformed PNG: " + what);

    png_set_read_fn(r.png, &cur, mem_read);
    png_read_info(r.png, r.info);
    const png_uint_32 w = png_get_image_width(r.png, r.info);
    const png_uint_32 h = png_get_image_height(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);
    const int depth = png_get_bit_depth(r.png, r.info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (depth == 16) png_set_strip_16(r.png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
    png_read_update_info(r.png, r.info);

    const int channels = png_get_channels(r.png, r.info);
    if (channels != 1 && channels != 3)
        throw FormatError("unsupported PNG channel count " + std::to_string(channels) + ": " + what);

    img = ImageU8(int(h), int(w), channels);
    rows.resize(h);
    for (png_uint_32 i = 0; i < h; ++i)
        rows[i] = img.v.data() + std::int64_t(i) * w * channels;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

ImageU8 read_image_png(const std::string& path) {
    return decode_image_png(read_file_bytes(path), path);
}

std::vector<std::uint8_t> encode_image_png(const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw FormatError("image must have 1 or 3 channels, got " + std::to_string(img.channels));
    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!wr.png) throw Error("libpng allocation failed");
    wr.info = png_create_info_struct(wr.png);
    if (!wr.info) throw Error("libpng allocation failed");
    std::vector<std::uint8_t> out;
    std::vector<png_bytep> rows(size_t(img.rows));

    if (setjmp(png_jmpbuf(wr.png)))
        throw Error("PNG encode failed");

    png_set_write_fn(wr.png, &out, mem_write, mem_flush);
    png_set_IHDR(wr.png, wr.info, png_uint_32(img.cols), png_uint_32(img.rows), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    for (int i = 0; i < img.rows; ++i)
        rows[size_t(i)] =
            const_cast<png_bytep>(img.v.data() + std::int64_t(i) * img.cols * img.channels);
    png_write_image(wr.png, rows.data());
    png_write_end(wr.png, nullptr);
    return out;
}

void write_image_png(const std::string& path, const ImageU8& img) {
    write_file_bytes(path, encode_image_png(img));
}

std::vector<std::uint8_t> disparity_png_encode(const DispMapF& map) {
    std::vector<std::uint16_t> stored(size_t(std::int64_t(map.rows) * map.cols), 0);
    for (size_t t = 0; t < stored.size(); ++t) {
        if (!map.valid[t]) continue;
        const float d = map.d[t];
        if (!(d >= 0.f) || d >= 256.f)
            throw FormatError("disparity " + std::to_string(d) +
                              " outside the encodable range [0, 256)");
        stored[t] = std::uint16_t(std::lround(double(d) * 256.0));
    }

    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!wr.png) throw Error("libpng allocation failed");
    wr.info = png_create_info_struct(wr.png);
    if (!wr.info) throw Error("libpng allocation failed");
    std::vector<std::uint8_t> out;
    std::vector<png_bytep> rows(size_t(map.rows));

    if (setjmp(png_jmpbuf(wr.png)))
        throw Error("PNG encode failed");

    png_set_write_fn(wr.png, &out, mem_write, mem_flush);
    png_set_IHDR(wr.png, wr.info, png_uint_32(map.cols), png_uint_32(map.rows), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    png_set_swap(wr.png); // samples are little-endian in memory
    for (int i = 0; i < map.rows; ++i)
        rows[size_t(i)] = reinterpret_cast<png_bytep>(stored.data() + std::int64_t(i) * map.cols);
    png_write_image(wr.png, rows.data());
    png_write_end(wr.png, nullptr);
    return out;
}

DispMapF disparity_png_decode(const std::vector<std::uint8_t>& bytes) {
    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw Error("libpng allocation failed");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw Error("libpng allocation failed");
    MemCursor cur{bytes.data(), bytes.size(), 0};
    std::vector<std::uint16_t> stored;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(r.png)))
        throw FormatError("malformed disparity PNG");

    png_set_read_fn(r.png, &cur, mem_read);
    png_read_info(r.png, r.info);
    const png_uint_32 w = png_get_image_width(r.png, r.info);
    const png_uint_32 h = png_get_image_height(r.png, r.info);
    if (png_get_bit_depth(r.png, r.info) != 16 ||
        png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY)
        throw FormatError("disparity PNG must be 16-bit single-channel");
    png_set_swap(r.png);
    stored.resize(size_t(w) * h);
    rows.resize(h);
    for (png_uint_32 i = 0; i < h; ++i)
        rows[i] = reinterpret_cast<png_bytep>(stored.data() + std::int64_t(i) * w);
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);

    DispMapF map{int(h), int(w)};
    for (size_t t = 0; t < stored.size(); ++t) {
        if (stored[t] == 0) continue;
        map.d[t] = float(stored[t]) / 256.f;
        map.valid[t] = 1;
    }
    return map;
}

DispMapF read_disparity_png(const std::string& path) {
    try {
        return disparity_png_decode(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + ": " + path);
    }
}

void write_disparity_png(const std::string& path, const DispMapF& map) {
    write_file_bytes(path, disparity_png_encode(map));
}

} // namespace stereocorr
