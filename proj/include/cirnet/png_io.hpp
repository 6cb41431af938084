#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cirnet::io {

// Interleaved row-major 8-bit pixels; channels is 1 (gray) or 3 (rgb).
struct ImageU8 {
  int64_t h = 0, w = 0, channels = 0;
  std::vector<uint8_t> pix;
};

// Reads an 8-bit PNG. Palette images expand to rgb, 16-bit depth narrows to 8,
// alpha is dropped. Throws IoError on anything unreadable.
ImageU8 read_png(const std::string& path);

void write_png_gray(const std::string& path, int64_t h, int64_t w, const uint8_t* pix);
void write_png_rgb(const std::string& path, int64_t h, int64_t w, const uint8_t* pix);

}  // namespace cirnet::io
