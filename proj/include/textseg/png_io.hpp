#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace textseg {

struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // row-major

    uint8_t at(int row, int col) const { return pixels[static_cast<size_t>(row) * width + col]; }
    uint8_t& at(int row, int col) { return pixels[static_cast<size_t>(row) * width + col]; }
};

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // row-major, 3 bytes per pixel
};

GrayImage read_gray_png(const std::string& path);
void write_gray_png(const std::string& path, const GrayImage& image);
void write_rgb_png(const std::string& path, const RgbImage& image);

}  // namespace textseg
