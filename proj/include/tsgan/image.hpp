#pragma once

#include <cstdint>
#include <vector>

#include "tsgan/tensor.hpp"

namespace tsgan {

// Sensing channel of an image: 3-channel visible light or 1-channel infrared.
enum class Modality { RGB, IR };

inline int channels_for(Modality m) { return m == Modality::RGB ? 3 : 1; }
inline const char* modality_name(Modality m) { return m == Modality::RGB ? "RGB" : "IR"; }

// Camera id reserved for generated images.
inline constexpr int kSyntheticCamera = 0;

// A single normalized image with its labels. Pixels are CHW in [-1, 1].
struct PersonImage {
  Array pixels;
  int channels = 0;
  int height = 0;
  int width = 0;
  int identity = -1;
  int camera = -1;
  Modality modality = Modality::RGB;
};

// Where a feature map came from and what kind of input produced it.
enum class FeatureSource { StudentFE, TeacherFE };
enum class InputKind { RealRGB, RealIR, FakeIR };

struct FeatureMap {
  Tensor map;  // [N,C,H',W']
  FeatureSource source = FeatureSource::StudentFE;
  InputKind kind = InputKind::RealRGB;
};

// One P x K training batch: P RGB and P IR images for each of K identities,
// stored as two aligned modality sub-batches of P*K images each.
struct ImageBatch {
  Array rgb;  // [P*K, 3, h, w] flat
  Array ir;   // [P*K, 1, h, w] flat
  std::vector<int> identities;  // length P*K, shared by both sub-batches
  int p = 0, k = 0;
  int height = 0, width = 0;

  Eigen::Index pairs() const { return static_cast<Eigen::Index>(p) * k; }
  Eigen::Index total() const { return 2 * pairs(); }
};

inline Scalar normalize_pixel(Scalar raw) { return raw / 127.5 - 1.0; }
inline Scalar denormalize_pixel(Scalar v) { return (v + 1.0) * 127.5; }

// [0,255] bytes -> [-1,1] pixels with metadata attached.
PersonImage normalize_image(const std::vector<std::uint8_t>& raw, int channels, int height,
                            int width, Modality modality, int identity = -1, int camera = -1);

// Inverse up to quantization: rounds back to [0,255] bytes.
std::vector<std::uint8_t> denormalize_image(const PersonImage& img);

}  // namespace tsgan
