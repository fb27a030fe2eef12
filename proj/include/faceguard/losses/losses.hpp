// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>

#include "faceguard/core/tensor.hpp"

namespace faceguard {

// Scores are clamped away from {0, 1} before any log so every loss stays
// finite; the clamp gradient is zero in the (measure-zero) saturated region.
template <Scalar T>
inline constexpr T kScoreEps = static_cast<T>(1e-7);

enum class MaskNorm { L1, L2 };

namespace lossdetail {

template <Scalar T>
void check_batch(const Tensor<T>& a, const char* what) {
  if (a.rank() < 1 || a.dim(0) == 0) throw NumericError(std::string(what) + ": empty batch");
}

template <Scalar T>
std::size_t per_sample(const Tensor<T>& t) {
  return t.size() / t.dim(0);
}

}  // namespace lossdetail

// ---------------------------------------------------------------------------
// Cosine-similarity objective over embedding batches (N, D). The mean cosine
// between clean and adversarial embeddings is the quantity the generator
// drives down; normalization lives inside, so inputs need not be unit norm.

template <Scalar T>
T obfuscation_loss(const Tensor<T>& emb_x, const Tensor<T>& emb_adv) {
  lossdetail::check_batch(emb_x, "obfuscation_loss");
  check_same_shape(emb_x, emb_adv, "obfuscation_loss");
  const std::size_t n = emb_x.dim(0), d = emb_x.dim(1);
  T total = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const T* a = emb_x.data() + s * d;
    const T* b = emb_adv.data() + s * d;
    T ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < d; ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    const T na = std::sqrt(aa), nb = std::sqrt(bb);
    if (!(na > 0) || !(nb > 0)) throw NumericError("obfuscation_loss: zero-norm embedding");
    total += ab / (na * nb);
  }
  return total / static_cast<T>(n);
}

// Gradient accumulates scale * dL/d(emb) into the given tensors (either may
// be null). L = mean_s cos(a_s, b_s).
template <Scalar T>
void obfuscation_loss_grad(const Tensor<T>& emb_x, const Tensor<T>& emb_adv, T scale,
                           Tensor<T>* g_emb_x, Tensor<T>* g_emb_adv) {
  const std::size_t n = emb_x.dim(0), d = emb_x.dim(1);
  for (std::size_t s = 0; s < n; ++s) {
    const T* a = emb_x.data() + s * d;
    const T* b = emb_adv.data() + s * d;
    T ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < d; ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    const T na = std::sqrt(aa), nb = std::sqrt(bb);
    const T c = ab / (na * nb);
    const T k = scale / static_cast<T>(n);
    if (g_emb_adv) {
      T* g = g_emb_adv->data() + s * d;
      for (std::size_t i = 0; i < d; ++i) {
        g[i] += k * (a[i] / (na * nb) - c * b[i] / bb);
      }
    }
    if (g_emb_x) {
      T* g = g_emb_x->data() + s * d;
      for (std::size_t i = 0; i < d; ++i) {
        g[i] += k * (b[i] / (na * nb) - c * a[i] / aa);
      }
    }
  }
}

template <Scalar T>
T feature_recovery_loss(const Tensor<T>& emb_x, const Tensor<T>& emb_pur) {
  return -obfuscation_loss(emb_x, emb_pur);
}

template <Scalar T>
void feature_recovery_loss_grad(const Tensor<T>& emb_x, const Tensor<T>& emb_pur, T scale,
                                Tensor<T>* g_emb_x, Tensor<T>* g_emb_pur) {
  obfuscation_loss_grad(emb_x, emb_pur, -scale, g_emb_x, g_emb_pur);
}

// ---------------------------------------------------------------------------
// Hinge on the per-sample Euclidean norm of the perturbation mask:
// mean_s max(eps, ||mask_s||_2). Never below eps.

template <Scalar T>
T perturbation_loss(const Tensor<T>& masks, T eps) {
  lossdetail::check_batch(masks, "perturbation_loss");
  if (!(eps > 0)) throw ValidationError("perturbation_loss: eps must be positive");
  const std::size_t n = masks.dim(0), m = lossdetail::per_sample(masks);
  T total = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const T* p = masks.data() + s * m;
    T acc = 0;
    for (std::size_t i = 0; i < m; ++i) acc += p[i] * p[i];
    total += std::max(eps, std::sqrt(acc));
  }
  return total / static_cast<T>(n);
}

template <Scalar T>
void perturbation_loss_grad(const Tensor<T>& masks, T eps, T scale, Tensor<T>& g_masks) {
  const std::size_t n = masks.dim(0), m = lossdetail::per_sample(masks);
  for (std::size_t s = 0; s < n; ++s) {
    const T* p = masks.data() + s * m;
    T acc = 0;
    for (std::size_t i = 0; i < m; ++i) acc += p[i] * p[i];
    const T norm = std::sqrt(acc);
    if (norm <= eps || !(norm > 0)) continue;  // inside the hinge: no gradient
    T* g = g_masks.data() + s * m;
    const T k = scale / (static_cast<T>(n) * norm);
    for (std::size_t i = 0; i < m; ++i) g[i] += k * p[i];
  }
}

// ---------------------------------------------------------------------------
// Diversity ratio r = ||m1 - m2||_1 / max(||z1 - z2||_1, delta_z), clamped to
// tau_div per sample and averaged. The trainer maximizes r (adds -lambda * r
// to the generator objective).

template <Scalar T>
inline constexpr T kDiversityDeltaZ = static_cast<T>(1e-8);
template <Scalar T>
inline constexpr T kDiversityTau = static_cast<T>(10);

template <Scalar T>
T diversity_loss(const Tensor<T>& mask1, const Tensor<T>& mask2, const Tensor<T>& z1,
                 const Tensor<T>& z2) {
  lossdetail::check_batch(mask1, "diversity_loss");
  check_same_shape(mask1, mask2, "diversity_loss masks");
  check_same_shape(z1, z2, "diversity_loss latents");
  const std::size_t n = mask1.dim(0), m = lossdetail::per_sample(mask1);
  const std::size_t dz = lossdetail::per_sample(z1);
  T total = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const T* a = mask1.data() + s * m;
    const T* b = mask2.data() + s * m;
    T num = 0;
    for (std::size_t i = 0; i < m; ++i) num += std::abs(a[i] - b[i]);
    const T* za = z1.data() + s * dz;
    const T* zb = z2.data() + s * dz;
    T den = 0;
    for (std::size_t i = 0; i < dz; ++i) den += std::abs(za[i] - zb[i]);
    den = std::max(den, kDiversityDeltaZ<T>);
    total += std::min(num / den, kDiversityTau<T>);
  }
  return total / static_cast<T>(n);
}

template <Scalar T>
void diversity_loss_grad(const Tensor<T>& mask1, const Tensor<T>& mask2, const Tensor<T>& z1,
                         const Tensor<T>& z2, T scale, Tensor<T>* g_mask1,
                         Tensor<T>* g_mask2) {
  const std::size_t n = mask1.dim(0), m = lossdetail::per_sample(mask1);
  const std::size_t dz = lossdetail::per_sample(z1);
  for (std::size_t s = 0; s < n; ++s) {
    const T* a = mask1.data() + s * m;
    const T* b = mask2.data() + s * m;
    T num = 0;
    for (std::size_t i = 0; i < m; ++i) num += std::abs(a[i] - b[i]);
    const T* za = z1.data() + s * dz;
    const T* zb = z2.data() + s * dz;
    T den = 0;
    for (std::size_t i = 0; i < dz; ++i) den += std::abs(za[i] - zb[i]);
    den = std::max(den, kDiversityDeltaZ<T>);
    if (num / den >= kDiversityTau<T>) continue;  // clamped: no gradient
    const T k = scale / (static_cast<T>(n) * den);
    for (std::size_t i = 0; i < m; ++i) {
      const T d = a[i] - b[i];
      const T sgn = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
      if (g_mask1) (*g_mask1)[s * m + i] += k * sgn;
      if (g_mask2) (*g_mask2)[s * m + i] -= k * sgn;
    }
  }
}

// ---------------------------------------------------------------------------
// GAN losses over patch score maps in (0,1). Non-saturating generator form.

template <Scalar T>
T gan_generator_loss(const Tensor<T>& patch_scores_adv) {
  lossdetail::check_batch(patch_scores_adv, "gan_generator_loss");
  T total = 0;
  for (std::size_t i = 0; i < patch_scores_adv.size(); ++i) {
    const T s = std::clamp(patch_scores_adv[i], kScoreEps<T>, T(1) - kScoreEps<T>);
    total += -std::log(s);
  }
  return total / static_cast<T>(patch_scores_adv.size());
}

template <Scalar T>
void gan_generator_loss_grad(const Tensor<T>& scores, T scale, Tensor<T>& g_scores) {
  const T inv = scale / static_cast<T>(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] <= kScoreEps<T> || scores[i] >= T(1) - kScoreEps<T>) continue;
    g_scores[i] += -inv / scores[i];
  }
}

// Mean of the real-side and synthesized-side binary cross-entropies with the
// real->1, synthesized->0 convention.
template <Scalar T>
T gan_discriminator_loss(const Tensor<T>& scores_real, const Tensor<T>& scores_adv) {
  lossdetail::check_batch(scores_real, "gan_discriminator_loss");
  lossdetail::check_batch(scores_adv, "gan_discriminator_loss");
  T real = 0;
  for (std::size_t i = 0; i < scores_real.size(); ++i) {
    real += -std::log(std::clamp(scores_real[i], kScoreEps<T>, T(1) - kScoreEps<T>));
  }
  T fake = 0;
  for (std::size_t i = 0; i < scores_adv.size(); ++i) {
    fake += -std::log(T(1) - std::clamp(scores_adv[i], kScoreEps<T>, T(1) - kScoreEps<T>));
  }
  return (real / static_cast<T>(scores_real.size()) + fake / static_cast<T>(scores_adv.size())) /
         T(2);
}

template <Scalar T>
void gan_discriminator_loss_grad(const Tensor<T>& scores_real, const Tensor<T>& scores_adv,
                                 T scale, Tensor<T>& g_real, Tensor<T>& g_adv) {
  const T kr = scale / (T(2) * static_cast<T>(scores_real.size()));
  for (std::size_t i = 0; i < scores_real.size(); ++i) {
    const T s = scores_real[i];
    if (s <= kScoreEps<T> || s >= T(1) - kScoreEps<T>) continue;
    g_real[i] += -kr / s;
  }
  const T kf = scale / (T(2) * static_cast<T>(scores_adv.size()));
  for (std::size_t i = 0; i < scores_adv.size(); ++i) {
    const T s = scores_adv[i];
    if (s <= kScoreEps<T> || s >= T(1) - kScoreEps<T>) continue;
    g_adv[i] += kf / (T(1) - s);
  }
}

// ---------------------------------------------------------------------------
// Detector BCE with labels real=0, adversarial=1.

template <Scalar T>
T detector_bce_loss(const Tensor<T>& scores_real, const Tensor<T>& scores_adv) {
  lossdetail::check_batch(scores_real, "detector_bce_loss");
  lossdetail::check_batch(scores_adv, "detector_bce_loss");
  T real = 0;
  for (std::size_t i = 0; i < scores_real.size(); ++i) {
    real += -std::log(T(1) - std::clamp(scores_real[i], kScoreEps<T>, T(1) - kScoreEps<T>));
  }
  T adv = 0;
  for (std::size_t i = 0; i < scores_adv.size(); ++i) {
    adv += -std::log(std::clamp(scores_adv[i], kScoreEps<T>, T(1) - kScoreEps<T>));
  }
  return (real / static_cast<T>(scores_real.size()) + adv / static_cast<T>(scores_adv.size())) /
         T(2);
}

template <Scalar T>
void detector_bce_loss_grad(const Tensor<T>& scores_real, const Tensor<T>& scores_adv, T scale,
                            Tensor<T>& g_real, Tensor<T>& g_adv) {
  const T kr = scale / (T(2) * static_cast<T>(scores_real.size()));
  for (std::size_t i = 0; i < scores_real.size(); ++i) {
    const T s = scores_real[i];
    if (s <= kScoreEps<T> || s >= T(1) - kScoreEps<T>) continue;
    g_real[i] += kr / (T(1) - s);
  }
  const T ka = scale / (T(2) * static_cast<T>(scores_adv.size()));
  for (std::size_t i = 0; i < scores_adv.size(); ++i) {
    const T s = scores_adv[i];
    if (s <= kScoreEps<T> || s >= T(1) - kScoreEps<T>) continue;
    g_adv[i] += -ka / s;
  }
}

// ---------------------------------------------------------------------------
// Hybrid perceptual loss: mean_s [ ||x_pur - x||_1 + ||pur_mask||_{1 or 2} ],
// element sums per sample.

template <Scalar T>
T perceptual_loss(const Tensor<T>& x_pur, const Tensor<T>& x, const Tensor<T>& pur_mask,
                  MaskNorm mask_norm = MaskNorm::L2) {
  lossdetail::check_batch(x_pur, "perceptual_loss");
  check_same_shape(x_pur, x, "perceptual_loss");
  const std::size_t n = x_pur.dim(0);
  const std::size_t m = lossdetail::per_sample(x_pur);
  const std::size_t mm = lossdetail::per_sample(pur_mask);
  T total = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const T* a = x_pur.data() + s * m;
    const T* b = x.data() + s * m;
    T l1 = 0;
    for (std::size_t i = 0; i < m; ++i) l1 += std::abs(a[i] - b[i]);
    const T* pm = pur_mask.data() + s * mm;
    T mag = 0;
    if (mask_norm == MaskNorm::L2) {
      for (std::size_t i = 0; i < mm; ++i) mag += pm[i] * pm[i];
      mag = std::sqrt(mag);
    } else {
      for (std::size_t i = 0; i < mm; ++i) mag += std::abs(pm[i]);
    }
    total += l1 + mag;
  }
  return total / static_cast<T>(n);
}

template <Scalar T>
void perceptual_loss_grad(const Tensor<T>& x_pur, const Tensor<T>& x, const Tensor<T>& pur_mask,
                          MaskNorm mask_norm, T scale, Tensor<T>* g_x_pur,
                          Tensor<T>* g_pur_mask) {
  const std::size_t n = x_pur.dim(0);
  const std::size_t m = lossdetail::per_sample(x_pur);
  const std::size_t mm = lossdetail::per_sample(pur_mask);
  const T k = scale / static_cast<T>(n);
  for (std::size_t s = 0; s < n; ++s) {
    if (g_x_pur) {
      const T* a = x_pur.data() + s * m;
      const T* b = x.data() + s * m;
      T* g = g_x_pur->data() + s * m;
      for (std::size_t i = 0; i < m; ++i) {
        const T d = a[i] - b[i];
        g[i] += k * (d > 0 ? T(1) : (d < 0 ? T(-1) : T(0)));
      }
    }
    if (g_pur_mask) {
      const T* pm = pur_mask.data() + s * mm;
      T* g = g_pur_mask->data() + s * mm;
      if (mask_norm == MaskNorm::L2) {
        T mag = 0;
        for (std::size_t i = 0; i < mm; ++i) mag += pm[i] * pm[i];
        mag = std::sqrt(mag);
        if (mag > 0) {
          for (std::size_t i = 0; i < mm; ++i) g[i] += k * pm[i] / mag;
        }
      } else {
        for (std::size_t i = 0; i < mm; ++i) {
          g[i] += k * (pm[i] > 0 ? T(1) : (pm[i] < 0 ? T(-1) : T(0)));
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Bonafide loss: mean -log(1 - D(x_pur)); zero when the detector judges every
// purified image real.

template <Scalar T>
T bonafide_loss(const Tensor<T>& scores_pur) {
  lossdetail::check_batch(scores_pur, "bonafide_loss");
  T total = 0;
  for (std::size_t i = 0; i < scores_pur.size(); ++i) {
    total += -std::log(T(1) - std::clamp(scores_pur[i], kScoreEps<T>, T(1) - kScoreEps<T>));
  }
  return total / static_cast<T>(scores_pur.size());
}

template <Scalar T>
void bonafide_loss_grad(const Tensor<T>& scores_pur, T scale, Tensor<T>& g_scores) {
  const T k = scale / static_cast<T>(scores_pur.size());
  for (std::size_t i = 0; i < scores_pur.size(); ++i) {
    const T s = scores_pur[i];
    if (s <= kScoreEps<T> || s >= T(1) - kScoreEps<T>) continue;
    g_scores[i] += k / (T(1) - s);
  }
}

}  // namespace faceguard
