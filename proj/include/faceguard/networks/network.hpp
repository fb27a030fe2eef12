// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "faceguard/networks/layers.hpp"

namespace faceguard {

// Per-call activation storage for one forward pass through a Network. A tape
// may be replayed backward multiple times (e.g. once toward parameters, once
// toward the input).
template <Scalar T>
struct Tape {
  std::vector<std::unique_ptr<LayerCache<T>>> slots;
};

template <Scalar T>
class Network {
 public:
  Network() = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  std::size_t num_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }

  bool takes_latent() const {
    return !layers_.empty() && dynamic_cast<ConvLatent<T>*>(layers_[0].get()) != nullptr;
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>& tape, bool training) {
    if (takes_latent()) throw ShapeError("network expects a latent vector");
    return run(x, nullptr, tape, training);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& z, Tape<T>& tape, bool training) {
    if (!takes_latent()) throw ShapeError("network does not take a latent vector");
    return run(x, &z, tape, training);
  }

  // Propagates gy back through the tape. Parameter gradients accumulate when
  // into_params is set; the returned tensor is the gradient w.r.t. the input
  // (empty when need_input_grad is false).
  Tensor<T> backward(Tape<T>& tape, const Tensor<T>& gy, bool into_params,
                     bool need_input_grad) {
    if (tape.slots.size() != layers_.size()) {
      throw ShapeError("backward called with a tape from a different network");
    }
    Tensor<T> g = gy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const bool want_input = i > 0 || need_input_grad;
      g = layers_[i]->backward(g, *tape.slots[i], into_params, want_input);
    }
    return g;
  }

  std::vector<NamedParam<T>> params() {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->collect_params("l" + std::to_string(i), out);
    }
    return out;
  }

  std::vector<NamedBuffer<T>> buffers() {
    std::vector<NamedBuffer<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->collect_buffers("l" + std::to_string(i), out);
    }
    return out;
  }

  void zero_grads() {
    for (auto& p : params()) p.grad->fill(T(0));
  }

 private:
  Tensor<T> run(const Tensor<T>& x, const Tensor<T>* z, Tape<T>& tape, bool training) {
    tape.slots.resize(layers_.size());
    Tensor<T> t;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (i == 0 && z != nullptr) {
        auto* first = dynamic_cast<ConvLatent<T>*>(layers_[0].get());
        t = first->forward_with_latent(x, *z, tape.slots[0]);
      } else {
        t = layers_[i]->forward(i == 0 ? x : t, tape.slots[i], training);
      }
    }
    return t;
  }

  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace faceguard
