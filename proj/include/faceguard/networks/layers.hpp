// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "faceguard/common.hpp"
#include "faceguard/core/blas.hpp"
#include "faceguard/core/rng.hpp"
#include "faceguard/core/tensor.hpp"

namespace faceguard {

template <Scalar T>
struct NamedParam {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <Scalar T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* value;
};

// Per-forward-call state a layer needs for its backward pass. Owned by the
// caller's Tape, so forwards with frozen weights stay safe for concurrent
// callers.
template <Scalar T>
struct LayerCache {
  virtual ~LayerCache() = default;
};

template <Scalar T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                            bool training) = 0;

  // Returns the gradient w.r.t. the layer input (empty when !input_grad).
  // Parameter gradients accumulate into the layer's grad tensors when
  // param_grads is set.
  virtual Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool param_grads,
                             bool input_grad) = 0;

  virtual void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    (void)prefix;
    (void)out;
  }
  virtual void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
    (void)prefix;
    (void)out;
  }
};

namespace detail {

template <Scalar T>
void im2col(const T* in, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  if (stride == 1) {
    // Row segments are contiguous copies of the shifted input row.
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* row = cols + ((c * k + ky) * k + kx) * (ho * wo);
          const std::size_t x0 = pad > kx ? pad - kx : 0;
          const std::size_t x1 = std::min(wo, w + pad - kx);
          for (std::size_t y = 0; y < ho; ++y) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
            T* dst = row + y * wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || x0 >= x1) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* src = in + (c * h + static_cast<std::size_t>(iy)) * w + (x0 + kx - pad);
            std::fill(dst, dst + x0, T(0));
            std::copy(src, src + (x1 - x0), dst + x0);
            std::fill(dst + x1, dst + wo, T(0));
          }
        }
      }
    }
    return;
  }
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * (ho * wo);
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row + y * wo, row + (y + 1) * wo, T(0));
            continue;
          }
          const T* src = in + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t x = 0; x < wo; ++x) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            row[y * wo + x] =
                (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <Scalar T>
void col2im_add(const T* cols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* out) {
  if (stride == 1) {
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T* row = cols + ((c * k + ky) * k + kx) * (ho * wo);
          const std::size_t x0 = pad > kx ? pad - kx : 0;
          const std::size_t x1 = std::min(wo, w + pad - kx);
          if (x0 >= x1) continue;
          for (std::size_t y = 0; y < ho; ++y) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            T* dst = out + (c * h + static_cast<std::size_t>(iy)) * w + (x0 + kx - pad);
            const T* src = row + y * wo + x0;
            const std::size_t len = x1 - x0;
            for (std::size_t x = 0; x < len; ++x) dst[x] += src[x];
          }
        }
      }
    }
    return;
  }
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * (ho * wo);
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = out + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t x = 0; x < wo; ++x) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) {
              dst[ix] += row[y * wo + x];
            }
          }
        }
      }
    }
  }
}

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride,
                                std::size_t pad) {
  if (in + 2 * pad < k) throw ShapeError("conv input smaller than kernel");
  return (in + 2 * pad - k) / stride + 1;
}

// OpenBLAS packs poorly when one GEMM dimension is tiny (few output
// channels). These kernels block over columns so the small dimension stays
// cache-resident and the cols matrix streams through exactly once; used when
// out_ch <= kSmallM.
inline constexpr std::size_t kSmallM = 16;
inline constexpr std::size_t kColBlock = 256;

// out[o][n] = bias[o] + sum_k w[o*ldw + k] * cols[k][n]
template <Scalar T>
void conv_gemm_small(const T* w, std::size_t ldw, const T* bias, std::size_t m, std::size_t kk,
                     std::size_t n, const T* cols, T* out) {
  T acc[kSmallM * kColBlock];
  for (std::size_t i0 = 0; i0 < n; i0 += kColBlock) {
    const std::size_t b = std::min(kColBlock, n - i0);
    for (std::size_t o = 0; o < m; ++o) {
      const T bv = bias ? bias[o] : T(0);
      std::fill(acc + o * kColBlock, acc + o * kColBlock + b, bv);
    }
    for (std::size_t k = 0; k < kk; ++k) {
      const T* __restrict src = cols + k * n + i0;
      for (std::size_t o = 0; o < m; ++o) {
        const T wv = w[o * ldw + k];
        if (wv == T(0)) continue;
        T* __restrict dst = acc + o * kColBlock;
        for (std::size_t i = 0; i < b; ++i) dst[i] += wv * src[i];
      }
    }
    for (std::size_t o = 0; o < m; ++o) {
      std::copy(acc + o * kColBlock, acc + o * kColBlock + b, out + o * n + i0);
    }
  }
}

// gcols[k][n] = sum_o w[o*ldw + k] * gy[o][n]
template <Scalar T>
void conv_gradin_small(const T* w, std::size_t ldw, std::size_t m, std::size_t kk,
                       std::size_t n, const T* gy, T* gcols) {
  for (std::size_t i0 = 0; i0 < n; i0 += kColBlock) {
    const std::size_t b = std::min(kColBlock, n - i0);
    for (std::size_t k = 0; k < kk; ++k) {
      T* __restrict dst = gcols + k * n + i0;
      std::fill(dst, dst + b, T(0));
      for (std::size_t o = 0; o < m; ++o) {
        const T wv = w[o * ldw + k];
        if (wv == T(0)) continue;
        const T* __restrict g = gy + o * n + i0;
        for (std::size_t i = 0; i < b; ++i) dst[i] += wv * g[i];
      }
    }
  }
}

template <Scalar T>
void he_init(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.gaussian() * std_dev);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <Scalar T>
struct ConvCache : LayerCache<T> {
  Tensor<T> input;
};

template <Scalar T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride,
         std::size_t pad, Rng* init_rng)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad),
        w_({out_ch, in_ch * k * k}), b_({out_ch}), gw_({out_ch, in_ch * k * k}),
        gb_({out_ch}) {
    if (init_rng) detail::he_init(w_, in_ch * k * k, *init_rng);
  }

  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    if (x.rank() != 4 || x.dim(1) != in_ch_) {
      throw ShapeError("conv: expected (N," + std::to_string(in_ch_) + ",H,W), got " +
                       Tensor<T>::shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = detail::conv_out_dim(h, k_, stride_, pad_);
    const std::size_t wo = detail::conv_out_dim(w, k_, stride_, pad_);
    Tensor<T> y({n, out_ch_, ho, wo});
    const std::size_t kk = in_ch_ * k_ * k_;
    std::vector<T> cols(kk * ho * wo);
    for (std::size_t s = 0; s < n; ++s) {
      detail::im2col(x.data() + s * in_ch_ * h * w, in_ch_, h, w, k_, stride_, pad_, ho, wo,
                     cols.data());
      T* out = y.data() + s * out_ch_ * ho * wo;
      if (out_ch_ <= detail::kSmallM) {
        detail::conv_gemm_small(w_.data(), kk, b_.data(), out_ch_, kk, ho * wo, cols.data(),
                                out);
      } else {
        gemm(false, false, static_cast<int>(out_ch_), static_cast<int>(ho * wo),
             static_cast<int>(kk), T(1), w_.data(), static_cast<int>(kk), cols.data(),
             static_cast<int>(ho * wo), T(0), out, static_cast<int>(ho * wo));
        for (std::size_t o = 0; o < out_ch_; ++o) {
          T* dst = out + o * ho * wo;
          const T bias = b_[o];
          for (std::size_t i = 0; i < ho * wo; ++i) dst[i] += bias;
        }
      }
    }
    auto c = std::make_unique<ConvCache<T>>();
    c->input = x;
    cache = std::move(c);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool param_grads,
                     bool input_grad) override {
    const auto& cc = static_cast<const ConvCache<T>&>(cache);
    const Tensor<T>& x = cc.input;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = gy.dim(2), wo = gy.dim(3);
    const std::size_t kk = in_ch_ * k_ * k_;
    std::vector<T> cols(kk * ho * wo);
    Tensor<T> gx;
    if (input_grad) gx = Tensor<T>(x.shape());
    std::vector<T> gcols(input_grad ? kk * ho * wo : 0);
    for (std::size_t s = 0; s < n; ++s) {
      const T* gys = gy.data() + s * out_ch_ * ho * wo;
      if (param_grads) {
        for (std::size_t o = 0; o < out_ch_; ++o) {
          T acc = 0;
          const T* src = gys + o * ho * wo;
          for (std::size_t i = 0; i < ho * wo; ++i) acc += src[i];
          gb_[o] += acc;
        }
        detail::im2col(x.data() + s * in_ch_ * h * w, in_ch_, h, w, k_, stride_, pad_, ho, wo,
                       cols.data());
        gemm(false, true, static_cast<int>(out_ch_), static_cast<int>(kk),
             static_cast<int>(ho * wo), T(1), gys, static_cast<int>(ho * wo), cols.data(),
             static_cast<int>(ho * wo), T(1), gw_.data(), static_cast<int>(kk));
      }
      if (input_grad) {
        if (out_ch_ <= detail::kSmallM) {
          detail::conv_gradin_small(w_.data(), kk, out_ch_, kk, ho * wo, gys, gcols.data());
        } else {
          gemm(true, false, static_cast<int>(kk), static_cast<int>(ho * wo),
               static_cast<int>(out_ch_), T(1), w_.data(), static_cast<int>(kk), gys,
               static_cast<int>(ho * wo), T(0), gcols.data(), static_cast<int>(ho * wo));
        }
        detail::col2im_add(gcols.data(), in_ch_, h, w, k_, stride_, pad_, ho, wo,
                           gx.data() + s * in_ch_ * h * w);
      }
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

  void zero_init_output() {
    w_.fill(T(0));
    b_.fill(T(0));
  }

  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  std::size_t in_ch_, out_ch_, k_, stride_, pad_;
  Tensor<T> w_, b_, gw_, gb_;
};

// First generator layer: a stride-1 convolution over the image channels plus
// an exact fast path for the latent vector, which enters as z_dim extra input
// channels that are spatially constant. Mathematically identical to tiling z
// over HxW, concatenating with the image, and running a plain convolution.
template <Scalar T>
struct ConvLatentCache : LayerCache<T> {
  Tensor<T> input;
  Tensor<T> latent;
};

template <Scalar T>
class ConvLatent : public Layer<T> {
 public:
  ConvLatent(std::size_t img_ch, std::size_t z_dim, std::size_t out_ch, std::size_t k,
             Rng* init_rng)
      : img_ch_(img_ch), z_dim_(z_dim), out_ch_(out_ch), k_(k), pad_((k - 1) / 2),
        w_({out_ch, (img_ch + z_dim) * k * k}), b_({out_ch}),
        gw_({out_ch, (img_ch + z_dim) * k * k}), gb_({out_ch}) {
    if (k % 2 == 0) throw ValidationError("latent-inject conv requires an odd kernel");
    if (init_rng) detail::he_init(w_, (img_ch + z_dim) * k * k, *init_rng);
  }

  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool training) override {
    (void)training;
    throw ShapeError("latent-inject conv requires forward(x, z)");
    (void)x;
    (void)cache;
  }

  Tensor<T> forward_with_latent(const Tensor<T>& x, const Tensor<T>& z,
                                std::unique_ptr<LayerCache<T>>& cache) {
    if (x.rank() != 4 || x.dim(1) != img_ch_) {
      throw ShapeError("latent conv: bad input shape " + Tensor<T>::shape_str(x.shape()));
    }
    if (z.rank() != 2 || z.dim(0) != x.dim(0) || z.dim(1) != z_dim_) {
      throw ShapeError("latent conv: bad latent shape " + Tensor<T>::shape_str(z.shape()));
    }
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t kk_img = img_ch_ * k_ * k_;
    const std::size_t row = (img_ch_ + z_dim_) * k_ * k_;
    Tensor<T> y({n, out_ch_, h, w});
    std::vector<T> cols(kk_img * h * w);
    std::vector<T> taps(k_ * k_);
    std::vector<T> prefix((k_ + 1) * (k_ + 1));
    for (std::size_t s = 0; s < n; ++s) {
      detail::im2col(x.data() + s * img_ch_ * h * w, img_ch_, h, w, k_, 1, pad_, h, w,
                     cols.data());
      T* out = y.data() + s * out_ch_ * h * w;
      if (out_ch_ <= detail::kSmallM) {
        detail::conv_gemm_small(w_.data(), row, static_cast<const T*>(nullptr), out_ch_,
                                kk_img, h * w, cols.data(), out);
      } else {
        gemm(false, false, static_cast<int>(out_ch_), static_cast<int>(h * w),
             static_cast<int>(kk_img), T(1), w_.data(), static_cast<int>(row), cols.data(),
             static_cast<int>(h * w), T(0), out, static_cast<int>(h * w));
      }
      const T* zs = z.data() + s * z_dim_;
      for (std::size_t o = 0; o < out_ch_; ++o) {
        // taps[t] = sum_c w[o][img+c][t] * z[c]
        std::fill(taps.begin(), taps.end(), T(0));
        const T* wz = w_.data() + o * row + kk_img;
        for (std::size_t c = 0; c < z_dim_; ++c) {
          const T zc = zs[c];
          const T* src = wz + c * k_ * k_;
          for (std::size_t t = 0; t < k_ * k_; ++t) taps[t] += src[t] * zc;
        }
        build_prefix(taps.data(), prefix.data());
        T* dst = y.data() + (s * out_ch_ + o) * h * w;
        const T bias = b_[o];
        for (std::size_t yy = 0; yy < h; ++yy) {
          const std::size_t ry0 = pad_ > yy ? pad_ - yy : 0;
          const std::size_t ry1 = std::min(k_, h + pad_ - yy);
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::size_t cx0 = pad_ > xx ? pad_ - xx : 0;
            const std::size_t cx1 = std::min(k_, w + pad_ - xx);
            dst[yy * w + xx] += bias + rect(prefix.data(), ry0, ry1, cx0, cx1);
          }
        }
      }
    }
    auto c = std::make_unique<ConvLatentCache<T>>();
    c->input = x;
    c->latent = z;
    cache = std::move(c);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool param_grads,
                     bool input_grad) override {
    const auto& cc = static_cast<const ConvLatentCache<T>&>(cache);
    const Tensor<T>& x = cc.input;
    const Tensor<T>& z = cc.latent;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t kk_img = img_ch_ * k_ * k_;
    const std::size_t row = (img_ch_ + z_dim_) * k_ * k_;
    std::vector<T> cols(kk_img * h * w);
    std::vector<T> gtaps(k_ * k_);
    std::vector<T> prefix((h + 1) * (w + 1));
    Tensor<T> gx;
    if (input_grad) gx = Tensor<T>(x.shape());
    std::vector<T> gcols(input_grad ? kk_img * h * w : 0);
    for (std::size_t s = 0; s < n; ++s) {
      const T* gys = gy.data() + s * out_ch_ * h * w;
      if (param_grads) {
        for (std::size_t o = 0; o < out_ch_; ++o) {
          T acc = 0;
          const T* src = gys + o * h * w;
          for (std::size_t i = 0; i < h * w; ++i) acc += src[i];
          gb_[o] += acc;
        }
        detail::im2col(x.data() + s * img_ch_ * h * w, img_ch_, h, w, k_, 1, pad_, h, w,
                       cols.data());
        gemm(false, true, static_cast<int>(out_ch_), static_cast<int>(kk_img),
             static_cast<int>(h * w), T(1), gys, static_cast<int>(h * w), cols.data(),
             static_cast<int>(h * w), T(1), gw_.data(), static_cast<int>(row));
        const T* zs = z.data() + s * z_dim_;
        for (std::size_t o = 0; o < out_ch_; ++o) {
          // gtaps[t] = sum over output positions where tap t is in bounds.
          build_image_prefix(gys + o * h * w, h, w, prefix.data());
          for (std::size_t ky = 0; ky < k_; ++ky) {
            const std::size_t y0 = pad_ > ky ? pad_ - ky : 0;
            const std::size_t y1 = std::min(h, h + pad_ - ky);
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const std::size_t x0 = pad_ > kx ? pad_ - kx : 0;
              const std::size_t x1 = std::min(w, w + pad_ - kx);
              gtaps[ky * k_ + kx] = rect_hw(prefix.data(), w, y0, y1, x0, x1);
            }
          }
          T* gwz = gw_.data() + o * row + kk_img;
          for (std::size_t c = 0; c < z_dim_; ++c) {
            const T zc = zs[c];
            T* dst = gwz + c * k_ * k_;
            for (std::size_t t = 0; t < k_ * k_; ++t) dst[t] += zc * gtaps[t];
          }
        }
      }
      if (input_grad) {
        if (out_ch_ <= detail::kSmallM) {
          detail::conv_gradin_small(w_.data(), row, out_ch_, kk_img, h * w, gys, gcols.data());
        } else {
          gemm(true, false, static_cast<int>(kk_img), static_cast<int>(h * w),
               static_cast<int>(out_ch_), T(1), w_.data(), static_cast<int>(row), gys,
               static_cast<int>(h * w), T(0), gcols.data(), static_cast<int>(h * w));
        }
        detail::col2im_add(gcols.data(), img_ch_, h, w, k_, 1, pad_, h, w,
                           gx.data() + s * img_ch_ * h * w);
      }
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }
  std::size_t latent_dim() const { return z_dim_; }

 private:
  void build_prefix(const T* taps, T* prefix) const {
    const std::size_t kp = k_ + 1;
    for (std::size_t a = 0; a < kp; ++a) prefix[a * kp] = T(0);
    for (std::size_t b = 0; b < kp; ++b) prefix[b] = T(0);
    for (std::size_t a = 1; a < kp; ++a) {
      for (std::size_t b = 1; b < kp; ++b) {
        prefix[a * kp + b] = taps[(a - 1) * k_ + (b - 1)] + prefix[(a - 1) * kp + b] +
                             prefix[a * kp + (b - 1)] - prefix[(a - 1) * kp + (b - 1)];
      }
    }
  }

  T rect(const T* prefix, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) const {
    const std::size_t kp = k_ + 1;
    return prefix[r1 * kp + c1] - prefix[r0 * kp + c1] - prefix[r1 * kp + c0] +
           prefix[r0 * kp + c0];
  }

  static void build_image_prefix(const T* img, std::size_t h, std::size_t w, T* prefix) {
    const std::size_t wp = w + 1;
    for (std::size_t x = 0; x <= w; ++x) prefix[x] = T(0);
    for (std::size_t y = 1; y <= h; ++y) {
      prefix[y * wp] = T(0);
      for (std::size_t x = 1; x <= w; ++x) {
        prefix[y * wp + x] = img[(y - 1) * w + (x - 1)] + prefix[(y - 1) * wp + x] +
                             prefix[y * wp + (x - 1)] - prefix[(y - 1) * wp + (x - 1)];
      }
    }
  }

  static T rect_hw(const T* prefix, std::size_t w, std::size_t y0, std::size_t y1,
                   std::size_t x0, std::size_t x1) {
    const std::size_t wp = w + 1;
    return prefix[y1 * wp + x1] - prefix[y0 * wp + x1] - prefix[y1 * wp + x0] +
           prefix[y0 * wp + x0];
  }

  std::size_t img_ch_, z_dim_, out_ch_, k_, pad_;
  Tensor<T> w_, b_, gw_, gb_;
};

// ---------------------------------------------------------------------------
// Normalization

template <Scalar T>
struct NormCache : LayerCache<T> {
  Tensor<T> xhat;
  std::vector<T> invstd;  // per (n,c) for instance norm, per c for batch norm
  bool training = true;
};

template <Scalar T>
class InstanceNorm : public Layer<T> {
 public:
  explicit InstanceNorm(std::size_t channels)
      : channels_(channels), gamma_({channels}), beta_({channels}), ggamma_({channels}),
        gbeta_({channels}) {
    gamma_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    auto cc = std::make_unique<NormCache<T>>();
    cc->xhat = Tensor<T>(x.shape());
    cc->invstd.resize(n * c);
    Tensor<T> y(x.shape());
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = x.data() + (s * c + ch) * hw;
        T mean = 0;
        for (std::size_t i = 0; i < hw; ++i) mean += src[i];
        mean /= static_cast<T>(hw);
        T var = 0;
        for (std::size_t i = 0; i < hw; ++i) {
          const T d = src[i] - mean;
          var += d * d;
        }
        var /= static_cast<T>(hw);
        const T invstd = T(1) / std::sqrt(var + kEps);
        cc->invstd[s * c + ch] = invstd;
        T* xh = cc->xhat.data() + (s * c + ch) * hw;
        T* dst = y.data() + (s * c + ch) * hw;
        const T g = gamma_[ch], b = beta_[ch];
        for (std::size_t i = 0; i < hw; ++i) {
          xh[i] = (src[i] - mean) * invstd;
          dst[i] = g * xh[i] + b;
        }
      }
    }
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool param_grads,
                     bool input_grad) override {
    const auto& cc = static_cast<const NormCache<T>&>(cache);
    const std::size_t n = gy.dim(0), c = gy.dim(1), hw = gy.dim(2) * gy.dim(3);
    Tensor<T> gx;
    if (input_grad) gx = Tensor<T>(gy.shape());
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* gys = gy.data() + (s * c + ch) * hw;
        const T* xh = cc.xhat.data() + (s * c + ch) * hw;
        if (param_grads) {
          T gg = 0, gb = 0;
          for (std::size_t i = 0; i < hw; ++i) {
            gg += gys[i] * xh[i];
            gb += gys[i];
          }
          ggamma_[ch] += gg;
          gbeta_[ch] += gb;
        }
        if (input_grad) {
          const T g = gamma_[ch];
          const T invstd = cc.invstd[s * c + ch];
          T sum_gxh = 0, sum_gxh_xh = 0;
          for (std::size_t i = 0; i < hw; ++i) {
            const T gxh = gys[i] * g;
            sum_gxh += gxh;
            sum_gxh_xh += gxh * xh[i];
          }
          const T mean_gxh = sum_gxh / static_cast<T>(hw);
          const T mean_gxh_xh = sum_gxh_xh / static_cast<T>(hw);
          T* dst = gx.data() + (s * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            dst[i] = invstd * (gys[i] * g - mean_gxh - xh[i] * mean_gxh_xh);
          }
        }
      }
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".gamma", &gamma_, &ggamma_});
    out.push_back({prefix + ".beta", &beta_, &gbeta_});
  }

 private:
  static constexpr T kEps = static_cast<T>(1e-5);
  std::size_t channels_;
  Tensor<T> gamma_, beta_, ggamma_, gbeta_;
};

template <Scalar T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels)
      : channels_(channels), gamma_({channels}), beta_({channels}), ggamma_({channels}),
        gbeta_({channels}), running_mean_({channels}), running_var_({channels}) {
    gamma_.fill(T(1));
    running_var_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool training) override {
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const std::size_t count = n * hw;
    auto cc = std::make_unique<NormCache<T>>();
    cc->training = training;
    cc->xhat = Tensor<T>(x.shape());
    cc->invstd.resize(c);
    Tensor<T> y(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      T mean, var;
      if (training) {
        mean = 0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* src = x.data() + (s * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) mean += src[i];
        }
        mean /= static_cast<T>(count);
        var = 0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* src = x.data() + (s * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const T d = src[i] - mean;
            var += d * d;
          }
        }
        var /= static_cast<T>(count);
        const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1)
                                     : var;
        running_mean_[ch] = (T(1) - kMomentum) * running_mean_[ch] + kMomentum * mean;
        running_var_[ch] = (T(1) - kMomentum) * running_var_[ch] + kMomentum * unbiased;
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const T invstd = T(1) / std::sqrt(var + kEps);
      cc->invstd[ch] = invstd;
      const T g = gamma_[ch], b = beta_[ch];
      for (std::size_t s = 0; s < n; ++s) {
        const T* src = x.data() + (s * c + ch) * hw;
        T* xh = cc->xhat.data() + (s * c + ch) * hw;
        T* dst = y.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          xh[i] = (src[i] - mean) * invstd;
          dst[i] = g * xh[i] + b;
        }
      }
    }
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool param_grads,
                     bool input_grad) override {
    const auto& cc = static_cast<const NormCache<T>&>(cache);
    const std::size_t n = gy.dim(0), c = gy.dim(1), hw = gy.dim(2) * gy.dim(3);
    const std::size_t count = n * hw;
    Tensor<T> gx;
    if (input_grad) gx = Tensor<T>(gy.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      T gg = 0, gb = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* gys = gy.data() + (s * c + ch) * hw;
        const T* xh = cc.xhat.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          gg += gys[i] * xh[i];
          gb += gys[i];
        }
      }
      if (param_grads) {
        ggamma_[ch] += gg;
        gbeta_[ch] += gb;
      }
      if (input_grad) {
        const T g = gamma_[ch];
        const T invstd = cc.invstd[ch];
        if (cc.training) {
          const T mean_g = gb / static_cast<T>(count);
          const T mean_g_xh = gg / static_cast<T>(count);
          for (std::size_t s = 0; s < n; ++s) {
            const T* gys = gy.data() + (s * c + ch) * hw;
            const T* xh = cc.xhat.data() + (s * c + ch) * hw;
            T* dst = gx.data() + (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              dst[i] = invstd * g * (gys[i] - mean_g - xh[i] * mean_g_xh);
            }
          }
        } else {
          // Frozen statistics: a per-channel affine map.
          for (std::size_t s = 0; s < n; ++s) {
            const T* gys = gy.data() + (s * c + ch) * hw;
            T* dst = gx.data() + (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] = gys[i] * g * invstd;
          }
        }
      }
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".gamma", &gamma_, &ggamma_});
    out.push_back({prefix + ".beta", &beta_, &gbeta_});
  }

  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) override {
    out.push_back({prefix + ".running_mean", &running_mean_});
    out.push_back({prefix + ".running_var", &running_var_});
  }

 private:
  static constexpr T kEps = static_cast<T>(1e-5);
  static constexpr T kMomentum = static_cast<T>(0.1);
  std::size_t channels_;
  Tensor<T> gamma_, beta_, ggamma_, gbeta_;
  Tensor<T> running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// Activations

template <Scalar T>
struct ActCache : LayerCache<T> {
  Tensor<T> ref;  // input for (leaky) relu, output for tanh/sigmoid
};

template <Scalar T>
class Relu : public Layer<T> {
 public:
  explicit Relu(T slope = T(0)) : slope_(slope) {}

  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : slope_ * x[i];
    auto cc = std::make_unique<ActCache<T>>();
    cc->ref = x;
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool /*param_grads*/,
                     bool input_grad) override {
    if (!input_grad) return {};
    const auto& cc = static_cast<const ActCache<T>&>(cache);
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) {
      gx[i] = cc.ref[i] > 0 ? gy[i] : slope_ * gy[i];
    }
    return gx;
  }

 private:
  T slope_;
};

template <Scalar T>
class Tanh : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    auto cc = std::make_unique<ActCache<T>>();
    cc->ref = y;
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool /*param_grads*/,
                     bool input_grad) override {
    if (!input_grad) return {};
    const auto& cc = static_cast<const ActCache<T>&>(cache);
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * (T(1) - cc.ref[i] * cc.ref[i]);
    return gx;
  }
};

template <Scalar T>
class Sigmoid : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
    auto cc = std::make_unique<ActCache<T>>();
    cc->ref = y;
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool /*param_grads*/,
                     bool input_grad) override {
    if (!input_grad) return {};
    const auto& cc = static_cast<const ActCache<T>&>(cache);
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * cc.ref[i] * (T(1) - cc.ref[i]);
    return gx;
  }
};

// ---------------------------------------------------------------------------
// Shape plumbing

template <Scalar T>
struct ShapeCache : LayerCache<T> {
  std::vector<std::size_t> in_shape;
};

template <Scalar T>
class UpsampleNearest2x : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({n, c, 2 * h, 2 * w});
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const T* src = x.data() + nc * h * w;
      T* dst = y.data() + nc * 4 * h * w;
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const T v = src[yy * w + xx];
          dst[(2 * yy) * 2 * w + 2 * xx] = v;
          dst[(2 * yy) * 2 * w + 2 * xx + 1] = v;
          dst[(2 * yy + 1) * 2 * w + 2 * xx] = v;
          dst[(2 * yy + 1) * 2 * w + 2 * xx + 1] = v;
        }
      }
    }
    auto cc = std::make_unique<ShapeCache<T>>();
    cc->in_shape = x.shape();
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool /*param_grads*/,
                     bool input_grad) override {
    if (!input_grad) return {};
    const auto& cc = static_cast<const ShapeCache<T>&>(cache);
    const std::size_t n = cc.in_shape[0], c = cc.in_shape[1], h = cc.in_shape[2],
                      w = cc.in_shape[3];
    Tensor<T> gx(cc.in_shape);
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const T* src = gy.data() + nc * 4 * h * w;
      T* dst = gx.data() + nc * h * w;
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          dst[yy * w + xx] = src[(2 * yy) * 2 * w + 2 * xx] +
                             src[(2 * yy) * 2 * w + 2 * xx + 1] +
                             src[(2 * yy + 1) * 2 * w + 2 * xx] +
                             src[(2 * yy + 1) * 2 * w + 2 * xx + 1];
        }
      }
    }
    return gx;
  }
};

template <Scalar T>
class Flatten : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    auto cc = std::make_unique<ShapeCache<T>>();
    cc->in_shape = x.shape();
    cache = std::move(cc);
    Tensor<T> y = x;
    y.reshape({x.dim(0), x.size() / x.dim(0)});
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool /*param_grads*/,
                     bool input_grad) override {
    if (!input_grad) return {};
    const auto& cc = static_cast<const ShapeCache<T>&>(cache);
    Tensor<T> gx = gy;
    gx.reshape(cc.in_shape);
    return gx;
  }
};

template <Scalar T>
class GlobalAvgPool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({n, c});
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const T* src = x.data() + nc * hw;
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      y[nc] = acc / static_cast<T>(hw);
    }
    auto cc = std::make_unique<ShapeCache<T>>();
    cc->in_shape = x.shape();
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool /*param_grads*/,
                     bool input_grad) override {
    if (!input_grad) return {};
    const auto& cc = static_cast<const ShapeCache<T>&>(cache);
    const std::size_t hw = cc.in_shape[2] * cc.in_shape[3];
    Tensor<T> gx(cc.in_shape);
    for (std::size_t nc = 0; nc < gy.size(); ++nc) {
      const T g = gy[nc] / static_cast<T>(hw);
      T* dst = gx.data() + nc * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = g;
    }
    return gx;
  }
};

// ---------------------------------------------------------------------------
// Fully connected

template <Scalar T>
struct FcCache : LayerCache<T> {
  Tensor<T> input;
};

template <Scalar T>
class Fc : public Layer<T> {
 public:
  Fc(std::size_t in_dim, std::size_t out_dim, Rng* init_rng)
      : in_dim_(in_dim), out_dim_(out_dim), w_({out_dim, in_dim}), b_({out_dim}),
        gw_({out_dim, in_dim}), gb_({out_dim}) {
    if (init_rng) detail::he_init(w_, in_dim, *init_rng);
  }

  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    if (x.rank() != 2 || x.dim(1) != in_dim_) {
      throw ShapeError("fc: expected (N," + std::to_string(in_dim_) + "), got " +
                       Tensor<T>::shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0);
    Tensor<T> y({n, out_dim_});
    gemm(false, true, static_cast<int>(n), static_cast<int>(out_dim_),
         static_cast<int>(in_dim_), T(1), x.data(), static_cast<int>(in_dim_), w_.data(),
         static_cast<int>(in_dim_), T(0), y.data(), static_cast<int>(out_dim_));
    for (std::size_t s = 0; s < n; ++s) {
      T* dst = y.data() + s * out_dim_;
      for (std::size_t o = 0; o < out_dim_; ++o) dst[o] += b_[o];
    }
    auto cc = std::make_unique<FcCache<T>>();
    cc->input = x;
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool param_grads,
                     bool input_grad) override {
    const auto& cc = static_cast<const FcCache<T>&>(cache);
    const std::size_t n = gy.dim(0);
    if (param_grads) {
      gemm(true, false, static_cast<int>(out_dim_), static_cast<int>(in_dim_),
           static_cast<int>(n), T(1), gy.data(), static_cast<int>(out_dim_), cc.input.data(),
           static_cast<int>(in_dim_), T(1), gw_.data(), static_cast<int>(in_dim_));
      for (std::size_t s = 0; s < n; ++s) {
        const T* src = gy.data() + s * out_dim_;
        for (std::size_t o = 0; o < out_dim_; ++o) gb_[o] += src[o];
      }
    }
    if (!input_grad) return {};
    Tensor<T> gx({n, in_dim_});
    gemm(false, false, static_cast<int>(n), static_cast<int>(in_dim_),
         static_cast<int>(out_dim_), T(1), gy.data(), static_cast<int>(out_dim_), w_.data(),
         static_cast<int>(in_dim_), T(0), gx.data(), static_cast<int>(in_dim_));
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

  void zero_init_output() {
    w_.fill(T(0));
    b_.fill(T(0));
  }

  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  std::size_t in_dim_, out_dim_;
  Tensor<T> w_, b_, gw_, gb_;
};

// Row-wise x / ||x||. Embeddings leave the matcher through this layer.
template <Scalar T>
struct L2NormCache : LayerCache<T> {
  Tensor<T> output;
  std::vector<T> norms;
};

template <Scalar T>
class L2Normalize : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool /*training*/) override {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> y(x.shape());
    auto cc = std::make_unique<L2NormCache<T>>();
    cc->norms.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = x.data() + s * d;
      T acc = 0;
      for (std::size_t i = 0; i < d; ++i) acc += src[i] * src[i];
      const T norm = std::sqrt(acc);
      if (!(norm > 0)) throw NumericError("l2-normalize: zero-norm row");
      cc->norms[s] = norm;
      T* dst = y.data() + s * d;
      for (std::size_t i = 0; i < d; ++i) dst[i] = src[i] / norm;
    }
    cc->output = y;
    cache = std::move(cc);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool /*param_grads*/,
                     bool input_grad) override {
    if (!input_grad) return {};
    const auto& cc = static_cast<const L2NormCache<T>&>(cache);
    const std::size_t n = gy.dim(0), d = gy.dim(1);
    Tensor<T> gx(gy.shape());
    for (std::size_t s = 0; s < n; ++s) {
      const T* g = gy.data() + s * d;
      const T* y = cc.output.data() + s * d;
      T proj = 0;
      for (std::size_t i = 0; i < d; ++i) proj += g[i] * y[i];
      T* dst = gx.data() + s * d;
      const T inv = T(1) / cc.norms[s];
      for (std::size_t i = 0; i < d; ++i) dst[i] = (g[i] - y[i] * proj) * inv;
    }
    return gx;
  }
};

// ---------------------------------------------------------------------------
// Residual block: x + N2(C2(act(N1(C1(x))))), CycleGAN-style.

template <Scalar T>
struct ResidualCache : LayerCache<T> {
  std::unique_ptr<LayerCache<T>> c1, n1, a1, c2, n2;
};

template <Scalar T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(std::size_t channels, bool batch_norm, T act_slope, Rng* init_rng)
      : conv1_(channels, channels, 3, 1, 1, init_rng),
        conv2_(channels, channels, 3, 1, 1, init_rng), act_(act_slope) {
    if (batch_norm) {
      bn1_ = std::make_unique<BatchNorm<T>>(channels);
      bn2_ = std::make_unique<BatchNorm<T>>(channels);
    } else {
      in1_ = std::make_unique<InstanceNorm<T>>(channels);
      in2_ = std::make_unique<InstanceNorm<T>>(channels);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, std::unique_ptr<LayerCache<T>>& cache,
                    bool training) override {
    auto cc = std::make_unique<ResidualCache<T>>();
    Tensor<T> t = conv1_.forward(x, cc->c1, training);
    t = norm1().forward(t, cc->n1, training);
    t = act_.forward(t, cc->a1, training);
    t = conv2_.forward(t, cc->c2, training);
    t = norm2().forward(t, cc->n2, training);
    check_same_shape(t, x, "residual block");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += x[i];
    cache = std::move(cc);
    return t;
  }

  Tensor<T> backward(const Tensor<T>& gy, const LayerCache<T>& cache, bool param_grads,
                     bool input_grad) override {
    const auto& cc = static_cast<const ResidualCache<T>&>(cache);
    Tensor<T> g = norm2().backward(gy, *cc.n2, param_grads, true);
    g = conv2_.backward(g, *cc.c2, param_grads, true);
    g = act_.backward(g, *cc.a1, param_grads, true);
    g = norm1().backward(g, *cc.n1, param_grads, true);
    g = conv1_.backward(g, *cc.c1, param_grads, input_grad);
    if (!input_grad) return {};
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    return g;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    conv1_.collect_params(prefix + ".c1", out);
    norm1().collect_params(prefix + ".n1", out);
    conv2_.collect_params(prefix + ".c2", out);
    norm2().collect_params(prefix + ".n2", out);
  }

  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) override {
    norm1().collect_buffers(prefix + ".n1", out);
    norm2().collect_buffers(prefix + ".n2", out);
  }

 private:
  Layer<T>& norm1() { return bn1_ ? static_cast<Layer<T>&>(*bn1_) : *in1_; }
  Layer<T>& norm2() { return bn2_ ? static_cast<Layer<T>&>(*bn2_) : *in2_; }

  Conv2d<T> conv1_, conv2_;
  std::unique_ptr<BatchNorm<T>> bn1_, bn2_;
  std::unique_ptr<InstanceNorm<T>> in1_, in2_;
  Relu<T> act_;
};

}  // namespace faceguard
