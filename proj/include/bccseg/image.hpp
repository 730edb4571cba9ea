#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

namespace bccseg {

// Interleaved 8-bit pixel grid, HWC order; channels is 1 (grayscale) or 3 (RGB).
struct Image {
    int h = 0;
    int w = 0;
    int channels = 0;
    std::vector<std::uint8_t> pix;

    Image() = default;
    Image(int height, int width, int ch)
        : h(height), w(width), channels(ch),
          pix(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(ch), 0) {}

    std::uint8_t& at(int y, int x, int c) { return pix[(static_cast<std::size_t>(y) * w + x) * channels + c]; }
    const std::uint8_t& at(int y, int x, int c) const {
        return pix[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Decodes a PNG to 8-bit grayscale or RGB (palette expanded, 16-bit scaled
// down, alpha stripped).
inline Image read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    std::vector<png_bytep> row_ptrs;
    Image out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_byte color_type = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out.h = static_cast<int>(png_get_image_height(png, info));
    out.w = static_cast<int>(png_get_image_width(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    if (out.channels != 1 && out.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported channel count in " + path);
    }
    out.pix.resize(static_cast<std::size_t>(out.h) * out.w * out.channels);
    row_ptrs.resize(static_cast<std::size_t>(out.h));
    for (int y = 0; y < out.h; ++y)
        row_ptrs[y] = out.pix.data() + static_cast<std::size_t>(y) * out.w * out.channels;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

inline void write_png(const std::string& path, const Image& im) {
    if (im.channels != 1 && im.channels != 3)
        throw std::runtime_error("write_png: channels must be 1 or 3");
    if (im.h < 1 || im.w < 1) throw std::runtime_error("write_png: empty image");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(im.w), static_cast<png_uint_32>(im.h), 8,
                 im.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(im.h));
    for (int y = 0; y < im.h; ++y)
        row_ptrs[y] = const_cast<png_bytep>(im.pix.data() + static_cast<std::size_t>(y) * im.w * im.channels);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fflush(fp.get());
}

}  // namespace bccseg
