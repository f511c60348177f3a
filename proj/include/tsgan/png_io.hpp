#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tsgan {

// 8-bit image in native PNG row order (interleaved HWC).
struct PngImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // height*width*channels bytes
};

// Reads an 8-bit PNG; palette/16-bit/alpha inputs are converted down to
// 1-channel gray or 3-channel RGB.
PngImage read_png(const std::string& path);

// Writes 8-bit gray (1 channel) or RGB (3 channels).
void write_png(const std::string& path, const PngImage& img);

}  // namespace tsgan
