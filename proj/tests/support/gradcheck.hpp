// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>

#include "faceguard/core/rng.hpp"
#include "faceguard/core/tensor.hpp"

namespace testsupport {

template <class T>
faceguard::Tensor<T> random_tensor(std::vector<std::size_t> shape, faceguard::Rng& rng,
                                   double lo = -1.0, double hi = 1.0) {
  faceguard::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Central finite differences of f at x, compared element-wise against the
// analytic gradient. Returns the worst relative error, where the denominator
// guards against tiny gradients.
inline double gradcheck(const std::function<double(const faceguard::Tensor<double>&)>& f,
                        faceguard::Tensor<double> x, const faceguard::Tensor<double>& analytic,
                        double h = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace testsupport
