#include "textseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "textseg/tensor.hpp"

namespace textseg {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

GrayImage read_gray_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error("png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("png: allocation failure reading " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("png: decode failure in " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // normalize everything to 8-bit grayscale
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1, -1);
    png_read_update_info(png, info);

    GrayImage out;
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.pixels.resize(static_cast<size_t>(out.height) * out.width);
    std::vector<png_bytep> rows(out.height);
    for (int r = 0; r < out.height; ++r)
        rows[static_cast<size_t>(r)] = out.pixels.data() + static_cast<size_t>(r) * out.width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

namespace {

void write_png_impl(const std::string& path, int height, int width, int color_type,
                    const uint8_t* data, int bytes_per_pixel) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error("png: cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: allocation failure writing " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: encode failure in " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r) {
        rows[static_cast<size_t>(r)] = const_cast<png_bytep>(
            data + static_cast<size_t>(r) * width * bytes_per_pixel);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_gray_png(const std::string& path, const GrayImage& image) {
    write_png_impl(path, image.height, image.width, PNG_COLOR_TYPE_GRAY,
                   image.pixels.data(), 1);
}

void write_rgb_png(const std::string& path, const RgbImage& image) {
    write_png_impl(path, image.height, image.width, PNG_COLOR_TYPE_RGB,
                   image.pixels.data(), 3);
}

}  // namespace textseg
