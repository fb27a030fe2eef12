// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wdeprecated-enum-enum-conversion"
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#pragma GCC diagnostic pop

#include "faceguard/common.hpp"
#include "faceguard/dataio/image.hpp"

namespace faceguard {

// Decodes a PNG/JPEG file to RGB and resizes (bilinear) to target_hw x
// target_hw when the source dimensions differ. Resizing happens in the 8-bit
// domain, before normalization.
inline RawImage read_raw_image(const std::filesystem::path& path, std::size_t target_hw) {
  if (!std::filesystem::exists(path)) {
    throw IoError("image file not found: " + path.string());
  }
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw FormatError("cannot decode image: " + path.string());
  }
  if (target_hw > 0 && (bgr.rows != static_cast<int>(target_hw) ||
                        bgr.cols != static_cast<int>(target_hw))) {
    cv::Mat resized;
    cv::resize(bgr, resized, cv::Size(static_cast<int>(target_hw), static_cast<int>(target_hw)),
               0, 0, cv::INTER_LINEAR);
    bgr = resized;
  }
  RawImage raw;
  raw.height = static_cast<std::size_t>(bgr.rows);
  raw.width = static_cast<std::size_t>(bgr.cols);
  raw.pixels.resize(raw.size());
  for (int y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * raw.width + x) * 3;
      raw.pixels[i + 0] = row[x][2];
      raw.pixels[i + 1] = row[x][1];
      raw.pixels[i + 2] = row[x][0];
    }
  }
  return raw;
}

inline void write_raw_image(const std::filesystem::path& path, const RawImage& raw) {
  cv::Mat bgr(static_cast<int>(raw.height), static_cast<int>(raw.width), CV_8UC3);
  for (int y = 0; y < bgr.rows; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * raw.width + x) * 3;
      row[x][2] = raw.pixels[i + 0];
      row[x][1] = raw.pixels[i + 1];
      row[x][0] = raw.pixels[i + 2];
    }
  }
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw IoError("cannot write image: " + path.string());
  }
}

inline void write_face_image(const std::filesystem::path& path, const Tensor<float>& values) {
  write_raw_image(path, denormalize_image(values));
}

}  // namespace faceguard
