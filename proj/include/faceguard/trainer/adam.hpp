// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "faceguard/core/io.hpp"
#include "faceguard/networks/layers.hpp"

namespace faceguard {

// Adam with bias correction. Moment buffers align with the parameter list
// order, which is deterministic per network construction.
template <Scalar T>
class Adam {
 public:
  Adam() = default;

  explicit Adam(const std::vector<NamedParam<T>>& params, T beta1 = T(0.5), T beta2 = T(0.9),
                T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
      m_.emplace_back(p.value->shape());
      v_.emplace_back(p.value->shape());
    }
  }

  void step(const std::vector<NamedParam<T>>& params, T lr) {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& w = *params[i].value;
      const Tensor<T>& g = *params[i].grad;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mh = m[j] / bc1;
        const T vh = v[j] / bc2;
        w[j] -= lr * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

  void save(BlobFile& blob, const std::string& prefix) const {
    blob.put_u64(prefix + "/t", t_);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      if constexpr (std::is_same_v<T, float>) {
        blob.put_tensor(prefix + "/m" + std::to_string(i), m_[i]);
        blob.put_tensor(prefix + "/v" + std::to_string(i), v_[i]);
      }
    }
  }

  void load(const BlobFile& blob, const std::string& prefix) {
    t_ = blob.u64(prefix + "/t");
    for (std::size_t i = 0; i < m_.size(); ++i) {
      if constexpr (std::is_same_v<T, float>) {
        m_[i] = blob.tensor(prefix + "/m" + std::to_string(i));
        v_[i] = blob.tensor(prefix + "/v" + std::to_string(i));
      }
    }
  }

 private:
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
  T beta1_ = T(0.5), beta2_ = T(0.9), eps_ = T(1e-8);
};

}  // namespace faceguard
