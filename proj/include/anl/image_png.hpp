#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace anl {

// Minimal 8-bit PNG codec (libpng behind the scenes). Gray or RGB only;
// other bit depths and palettes are rejected as unsupported.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);

}  // namespace anl
