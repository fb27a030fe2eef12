// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "faceguard/common.hpp"
#include "faceguard/core/tensor.hpp"

namespace faceguard {

// 8-bit RGB image, interleaved HWC.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3, RGB

  std::size_t size() const { return height * width * 3; }
};

// Normalized face tensor in [-1, 1], planar CHW with C = 3.
struct FaceImage {
  Tensor<float> values;  // (3, H, W)
  std::string subject_id;
  std::string image_id;

  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

// (p - 128) / 128 per channel. Division by 128 is exact in binary floating
// point, so normalize -> denormalize -> normalize is the identity for every
// representable pixel value.
inline FaceImage normalize_image(const RawImage& raw) {
  if (raw.pixels.size() != raw.size() || raw.height == 0 || raw.width == 0) {
    throw ShapeError("normalize_image: expected H x W x 3 uint8 pixels");
  }
  FaceImage img;
  img.values = Tensor<float>({3, raw.height, raw.width});
  const std::size_t plane = raw.height * raw.width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      img.values[c * plane + i] =
          (static_cast<float>(raw.pixels[i * 3 + c]) - 128.0f) / 128.0f;
    }
  }
  return img;
}

inline std::uint8_t denormalize_value(float v) {
  const float clamped = std::min(1.0f, std::max(-1.0f, v));
  const long p = std::lround(clamped * 128.0f + 128.0f);
  return static_cast<std::uint8_t>(std::min(255l, std::max(0l, p)));
}

inline RawImage denormalize_image(const Tensor<float>& values) {
  if (values.rank() != 3 || values.dim(0) != 3) {
    throw ShapeError("denormalize_image: expected (3, H, W) tensor");
  }
  RawImage raw;
  raw.height = values.dim(1);
  raw.width = values.dim(2);
  raw.pixels.resize(raw.size());
  const std::size_t plane = raw.height * raw.width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      raw.pixels[i * 3 + c] = denormalize_value(values[c * plane + i]);
    }
  }
  return raw;
}

inline RawImage denormalize_image(const FaceImage& img) { return denormalize_image(img.values); }

}  // namespace faceguard
