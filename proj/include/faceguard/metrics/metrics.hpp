// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "faceguard/core/tensor.hpp"
#include "faceguard/matcher/matcher.hpp"

namespace faceguard {

// Fraction of correct classifications at the given threshold, as a
// percentage. A score exactly at the threshold classifies as adversarial.
inline double detection_accuracy(const std::vector<double>& scores,
                                 const std::vector<int>& labels, double threshold = 0.5) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw ValidationError("detection_accuracy: empty or mismatched inputs");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int predicted = scores[i] >= threshold ? 1 : 0;
    if (predicted == labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(scores.size());
}

// TAR (%) at the threshold fixed by the impostor distribution.
inline std::pair<double, double> tar_at_far(const std::vector<double>& genuine_scores,
                                            const std::vector<double>& impostor_scores,
                                            double far = 0.001) {
  if (genuine_scores.empty() || impostor_scores.empty()) {
    throw NumericError("tar_at_far: empty score list");
  }
  const double threshold = threshold_at_far(impostor_scores, far);
  std::size_t accepted = 0;
  for (double s : genuine_scores) {
    if (s >= threshold) ++accepted;
  }
  const double tar = 100.0 * static_cast<double>(accepted) /
                     static_cast<double>(genuine_scores.size());
  return {tar, threshold};
}

// Structural similarity with an 11x11 Gaussian window (sigma 1.5), valid
// windows only, dynamic range L = 2 for values in [-1, 1], channel-averaged.
inline double ssim(const Tensor<float>& x1, const Tensor<float>& x2) {
  check_same_shape(x1, x2, "ssim");
  if (x1.rank() != 3) throw ShapeError("ssim: expected (C, H, W) images");
  constexpr std::size_t kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kL = 2.0;
  constexpr double kC1 = (0.01 * kL) * (0.01 * kL);
  constexpr double kC2 = (0.03 * kL) * (0.03 * kL);
  const std::size_t c = x1.dim(0), h = x1.dim(1), w = x1.dim(2);
  if (h < kWin || w < kWin) throw ShapeError("ssim: image smaller than the 11x11 window");

  double window[kWin];
  double wsum = 0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - (kWin - 1) / 2.0;
    window[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    wsum += window[i];
  }
  for (std::size_t i = 0; i < kWin; ++i) window[i] /= wsum;

  const std::size_t ho = h - kWin + 1, wo = w - kWin + 1;
  // Separable filter: horizontal (valid) then vertical (valid).
  auto filter = [&](const std::vector<double>& img) {
    std::vector<double> tmp(h * wo);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < kWin; ++k) acc += window[k] * img[y * w + x + k];
        tmp[y * wo + x] = acc;
      }
    }
    std::vector<double> out(ho * wo);
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < kWin; ++k) acc += window[k] * tmp[(y + k) * wo + x];
        out[y * wo + x] = acc;
      }
    }
    return out;
  };

  double channel_sum = 0;
  std::vector<double> a(h * w), b(h * w), aa(h * w), bb(h * w), ab(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* p1 = x1.data() + ch * h * w;
    const float* p2 = x2.data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) {
      a[i] = p1[i];
      b[i] = p2[i];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu1 = filter(a), mu2 = filter(b);
    const auto e11 = filter(aa), e22 = filter(bb), e12 = filter(ab);
    double acc = 0;
    for (std::size_t i = 0; i < ho * wo; ++i) {
      const double m1 = mu1[i], m2 = mu2[i];
      const double s11 = e11[i] - m1 * m1;
      const double s22 = e22[i] - m2 * m2;
      const double s12 = e12[i] - m1 * m2;
      acc += ((2.0 * m1 * m2 + kC1) * (2.0 * s12 + kC2)) /
             ((m1 * m1 + m2 * m2 + kC1) * (s11 + s22 + kC2));
    }
    channel_sum += acc / static_cast<double>(ho * wo);
  }
  return channel_sum / static_cast<double>(c);
}

// Cosine similarity of the flattened masks.
inline double mask_cosine(const Tensor<float>& g_mask, const Tensor<float>& pur_mask) {
  check_same_shape(g_mask, pur_mask, "mask_cosine");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < g_mask.size(); ++i) {
    ab += static_cast<double>(g_mask[i]) * pur_mask[i];
    aa += static_cast<double>(g_mask[i]) * g_mask[i];
    bb += static_cast<double>(pur_mask[i]) * pur_mask[i];
  }
  if (!(aa > 0) || !(bb > 0)) throw NumericError("mask_cosine: zero mask");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

// Per-pixel channel mean of |mask|, min-max normalized over the image. A
// constant magnitude map (including all-zero) maps to all zeros.
inline Tensor<float> localization_heatmap(const Tensor<float>& pur_mask) {
  if (pur_mask.rank() != 3) throw ShapeError("localization_heatmap: expected (C, H, W)");
  const std::size_t c = pur_mask.dim(0), h = pur_mask.dim(1), w = pur_mask.dim(2);
  Tensor<float> heat({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    float acc = 0;
    for (std::size_t ch = 0; ch < c; ++ch) acc += std::abs(pur_mask[ch * h * w + i]);
    heat[i] = acc / static_cast<float>(c);
  }
  float lo = heat[0], hi = heat[0];
  for (std::size_t i = 1; i < heat.size(); ++i) {
    lo = std::min(lo, heat[i]);
    hi = std::max(hi, heat[i]);
  }
  if (hi > lo) {
    for (std::size_t i = 0; i < heat.size(); ++i) heat[i] = (heat[i] - lo) / (hi - lo);
  } else {
    heat.fill(0.0f);
  }
  return heat;
}

// Red overlay of a heatmap on the (denormalized) image, for the localize
// command's output.
inline Tensor<float> heatmap_overlay(const Tensor<float>& image, const Tensor<float>& heat) {
  if (image.rank() != 3 || heat.rank() != 2 || image.dim(1) != heat.dim(0) ||
      image.dim(2) != heat.dim(1)) {
    throw ShapeError("heatmap_overlay: image/heatmap size mismatch");
  }
  Tensor<float> out = image;
  const std::size_t plane = heat.size();
  for (std::size_t i = 0; i < plane; ++i) {
    const float hval = heat[i];
    out[0 * plane + i] = out[0 * plane + i] * (1.0f - hval) + 1.0f * hval;  // red
    out[1 * plane + i] = out[1 * plane + i] * (1.0f - hval) + (-1.0f) * hval;
    out[2 * plane + i] = out[2 * plane + i] * (1.0f - hval) + (-1.0f) * hval;
  }
  return out;
}

}  // namespace faceguard
