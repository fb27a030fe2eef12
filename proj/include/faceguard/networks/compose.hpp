// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "faceguard/core/tensor.hpp"

namespace faceguard {

// x_adv = 2 * clamp[ mask + (x+1)/2 ]_0^1 - 1, computed in the algebraically
// identical form clamp[ x + 2*mask ]_{-1}^{1} so that a zero mask reproduces
// x bit-exactly. Gradients pass straight through inside the clamp and are
// zero where it is active: d x_adv / d mask = 2 inside, 0 outside;
// d x_adv / d x = 1 inside, 0 outside.
template <Scalar T>
Tensor<T> compose_adversarial(const Tensor<T>& x, const Tensor<T>& mask,
                              std::vector<std::uint8_t>* inside = nullptr) {
  check_same_shape(x, mask, "compose_adversarial");
  Tensor<T> out(x.shape());
  if (inside) inside->assign(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i] + T(2) * mask[i];
    if (v <= T(-1)) {
      out[i] = T(-1);
    } else if (v >= T(1)) {
      out[i] = T(1);
    } else {
      out[i] = v;
      if (inside) (*inside)[i] = 1;
    }
  }
  return out;
}

template <Scalar T>
Tensor<T> compose_adversarial_grad_mask(const Tensor<T>& g_out,
                                        const std::vector<std::uint8_t>& inside) {
  Tensor<T> g(g_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = inside[i] ? T(2) * g_out[i] : T(0);
  return g;
}

// x_pur = 2 * clamp[ (x_adv+1)/2 - mask ]_0^1 - 1, likewise computed as
// clamp[ x_adv - 2*mask ]_{-1}^{1}.
// d x_pur / d mask = -2 inside, 0 outside; d x_pur / d x_adv = 1 inside.
template <Scalar T>
Tensor<T> compose_purified(const Tensor<T>& x_adv, const Tensor<T>& mask,
                           std::vector<std::uint8_t>* inside = nullptr) {
  check_same_shape(x_adv, mask, "compose_purified");
  Tensor<T> out(x_adv.shape());
  if (inside) inside->assign(x_adv.size(), 0);
  for (std::size_t i = 0; i < x_adv.size(); ++i) {
    const T v = x_adv[i] - T(2) * mask[i];
    if (v <= T(-1)) {
      out[i] = T(-1);
    } else if (v >= T(1)) {
      out[i] = T(1);
    } else {
      out[i] = v;
      if (inside) (*inside)[i] = 1;
    }
  }
  return out;
}

template <Scalar T>
Tensor<T> compose_purified_grad_mask(const Tensor<T>& g_out,
                                     const std::vector<std::uint8_t>& inside) {
  Tensor<T> g(g_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = inside[i] ? T(-2) * g_out[i] : T(0);
  return g;
}

}  // namespace faceguard
