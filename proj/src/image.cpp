#include "tsgan/image.hpp"

#include <cmath>

namespace tsgan {

PersonImage normalize_image(const std::vector<std::uint8_t>& raw, int channels, int height,
                            int width, Modality modality, int identity, int camera) {
  TSGAN_CHECK(channels == channels_for(modality), Data,
              std::string("normalize_image: ") + std::to_string(channels) +
                  " channels do not match modality " + modality_name(modality));
  TSGAN_CHECK(static_cast<std::size_t>(channels) * height * width == raw.size(), Data,
              "normalize_image: pixel count does not match dimensions");
  PersonImage img;
  img.pixels = Array(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.pixels[static_cast<Eigen::Index>(i)] = normalize_pixel(static_cast<Scalar>(raw[i]));
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.identity = identity;
  img.camera = camera;
  img.modality = modality;
  return img;
}

std::vector<std::uint8_t> denormalize_image(const PersonImage& img) {
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.pixels.size()));
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
    Scalar v = std::round(denormalize_pixel(img.pixels[i]));
    v = std::min(255.0, std::max(0.0, v));
    raw[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
  }
  return raw;
}

}  // namespace tsgan
