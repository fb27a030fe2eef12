// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "faceguard/dataio/dataset.hpp"
#include "faceguard/losses/losses.hpp"
#include "faceguard/matcher/matcher.hpp"
#include "faceguard/trainer/config.hpp"

namespace faceguard {

namespace attackdetail {

// Projects v onto [center-eps, center+eps] so that the bound holds exactly in
// double arithmetic; float rounding of center+eps can otherwise overshoot by
// an ulp.
inline float clamp_linf(float v, float center, double eps) {
  const double d = static_cast<double>(v) - static_cast<double>(center);
  if (d > eps) {
    v = static_cast<float>(static_cast<double>(center) + eps);
    while (static_cast<double>(v) - static_cast<double>(center) > eps) {
      v = std::nextafterf(v, -std::numeric_limits<float>::infinity());
    }
  } else if (d < -eps) {
    v = static_cast<float>(static_cast<double>(center) - eps);
    while (static_cast<double>(center) - static_cast<double>(v) > eps) {
      v = std::nextafterf(v, std::numeric_limits<float>::infinity());
    }
  }
  return v;
}

}  // namespace attackdetail

// Iterated signed-gradient descent on cos(F(x0), F(x)) with projection onto
// the L-inf ball of radius eps around x0 and onto [-1, 1] after every step.
// FGSM is the single-step instance with step_size = eps.
inline Tensor<float> pgd_obfuscation(const Tensor<float>& chw, Matcher& matcher, double eps,
                                     std::size_t steps, double step_size) {
  if (!(eps > 0)) throw ValidationError("attack eps must be positive");
  if (steps < 1) throw ValidationError("attack steps must be >= 1");
  if (!(step_size > 0)) throw ValidationError("attack step_size must be positive");
  Tensor<float> x0 = chw;
  x0.reshape({1, chw.dim(0), chw.dim(1), chw.dim(2)});
  Tensor<float> e0 = matcher.embed(x0);
  Tensor<float> x = x0;
  for (std::size_t t = 0; t < steps; ++t) {
    Tape<float> tape;
    Tensor<float> e = matcher.embed_traced(x, tape);
    Tensor<float> g_e(e.shape());
    obfuscation_loss_grad<float>(e0, e, 1.0f, nullptr, &g_e);
    Tensor<float> g_x = matcher.backward_to_input(tape, g_e);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float g = g_x[i];
      const float sgn = g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f);
      float v = x[i] - static_cast<float>(step_size) * sgn;
      v = attackdetail::clamp_linf(v, x0[i], eps);
      x[i] = std::min(1.0f, std::max(-1.0f, v));
    }
  }
  x.reshape(chw.shape());
  return x;
}

inline Tensor<float> fgsm_obfuscation(const Tensor<float>& chw, Matcher& matcher, double eps) {
  return pgd_obfuscation(chw, matcher, eps, 1, eps);
}

inline Tensor<float> run_attack(const Tensor<float>& chw, Matcher& matcher,
                                const AttackConfig& cfg) {
  if (cfg.kind == "fgsm") return fgsm_obfuscation(chw, matcher, cfg.eps);
  return pgd_obfuscation(chw, matcher, cfg.eps, cfg.steps, cfg.resolved_step_size());
}

// Loads externally produced adversarial images, grouped by the manifest's
// attack_name column. Image ids must match source ids of the reference
// dataset when one is given; files keep the relative path of their source.
inline std::map<std::string, Dataset> ingest_external_attacks(
    const std::filesystem::path& dir_path, const std::filesystem::path& manifest_path,
    std::size_t image_hw, const Dataset* reference = nullptr) {
  auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw ValidationError("empty attack manifest: " + manifest_path.string());
  std::map<std::string, Dataset> out;
  for (const auto& e : entries) {
    if (e.attack_name.empty()) {
      throw ValidationError("attack manifest line for '" + e.relative_path +
                            "' is missing the attack_name column");
    }
    if (reference != nullptr) {
      bool found = false;
      for (const auto& img : reference->images) {
        if (img.image_id == e.relative_path) {
          found = true;
          break;
        }
      }
      if (!found) {
        throw ValidationError("attack image '" + e.relative_path +
                              "' does not map to any source image");
      }
    }
    RawImage raw = read_raw_image(dir_path / e.relative_path, image_hw);
    FaceImage img = normalize_image(raw);
    img.image_id = e.relative_path;
    img.subject_id = e.subject_id;
    Dataset& ds = out[e.attack_name];
    ds.image_hw = image_hw;
    ds.subjects[img.subject_id].push_back(ds.images.size());
    ds.images.push_back(std::move(img));
  }
  return out;
}

}  // namespace faceguard
