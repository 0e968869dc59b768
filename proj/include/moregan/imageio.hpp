#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "moregan/core/tensor.hpp"

namespace moregan::io {

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 8;
    std::vector<unsigned char> bytes;
};

inline RawPng read_png(const std::string& path, bool keep_16bit_gray) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image", path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw IoError("not a PNG file", path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed", path);
    }
    RawPng raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG data", path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    const bool gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
    if (depth == 16 && !(gray && keep_16bit_gray)) png_set_strip_16(png);
    if (depth == 16 && gray && keep_16bit_gray) png_set_swap(png);
    png_read_update_info(png, info);
    raw.width = static_cast<int>(png_get_image_width(png, info));
    raw.height = static_cast<int>(png_get_image_height(png, info));
    raw.channels = png_get_channels(png, info);
    raw.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raw.bytes.resize(rowbytes * raw.height);
    std::vector<png_bytep> rows(raw.height);
    for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return raw;
}

inline void write_png(const std::string& path, int width, int height, int color_type, int bit_depth,
                      const std::vector<unsigned char>& bytes, std::size_t rowbytes) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write image", path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed", path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = const_cast<unsigned char*>(bytes.data() + y * rowbytes);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline unsigned char to_u8(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}
}  // namespace detail

/// 8-bit RGB (gray is replicated) -> [1,3,H,W] in [0,1].
inline Tensor<double> read_rgb(const std::string& path) {
    auto raw = detail::read_png(path, false);
    Tensor<double> img(Shape{1, 3, raw.height, raw.width});
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const unsigned char* px = raw.bytes.data() + (static_cast<std::size_t>(y) * raw.width + x) * raw.channels;
            for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = px[raw.channels >= 3 ? c : 0] / 255.0;
        }
    }
    return img;
}

inline void write_rgb(const std::string& path, const Tensor<double>& img) {
    if (img.n() != 1 || (img.c() != 3 && img.c() != 1)) throw InvalidArgument("write_rgb: expected [1,3|1,H,W], got " + img.shape().str());
    const int h = img.h();
    const int w = img.w();
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] = detail::to_u8(img.at(0, img.c() == 3 ? c : 0, y, x));
            }
        }
    }
    detail::write_png(path, w, h, PNG_COLOR_TYPE_RGB, 8, bytes, static_cast<std::size_t>(w) * 3);
}

/// Grayscale depth -> [1,1,H,W]; 16-bit values map to max(v/65535, floor).
inline Tensor<double> read_depth(const std::string& path, double floor) {
    auto raw = detail::read_png(path, true);
    Tensor<double> d(Shape{1, 1, raw.height, raw.width});
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * raw.width + x;
            double v = 0.0;
            if (raw.bit_depth == 16) {
                const unsigned char* px = raw.bytes.data() + i * raw.channels * 2;
                v = (px[0] | (px[1] << 8)) / 65535.0;
            } else {
                v = raw.bytes[i * raw.channels] / 255.0;
            }
            d.at(0, 0, y, x) = std::max(v, floor);
        }
    }
    return d;
}

inline void write_depth(const std::string& path, const Tensor<double>& depth) {
    const int h = depth.h();
    const int w = depth.w();
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto v = static_cast<unsigned>(std::lround(std::clamp(depth.at(0, 0, y, x), 0.0, 1.0) * 65535.0));
            const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 2;
            bytes[i] = static_cast<unsigned char>(v & 0xFF);
            bytes[i + 1] = static_cast<unsigned char>(v >> 8);
        }
    }
    detail::write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 16, bytes, static_cast<std::size_t>(w) * 2);
}

/// Sorted *.png files of a directory.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory", dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace moregan::io
