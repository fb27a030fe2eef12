// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "faceguard/core/rng.hpp"
#include "faceguard/networks/network.hpp"
#include "faceguard/networks/spec.hpp"

namespace faceguard {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr float kLeakySlope = 0.2f;

// Paper-default architecture strings; runs can override them in config.
inline constexpr const char* kDefaultGeneratorSpec =
    "c7s1-64,d128,d256,R256,R256,R256,u128,u64,c7s1-3";
inline constexpr const char* kDefaultDiscriminatorSpec = "d32,d64,d128,d256,d512";
inline constexpr const char* kDefaultDetectorSpec = "d32,d64,d128,d256,fc64,fc1";
inline constexpr const char* kDefaultMatcherSpec = "d32,d64,d128";

namespace detail {

template <Scalar T>
void scale_tensor(Tensor<T>& t, T factor) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] *= factor;
}

template <Scalar T>
struct BuilderState {
  Network<T> net;
  std::size_t channels = kImageChannels;
  std::size_t hw = 0;  // spatial extent, tracked when known

  void norm_act(bool batch, T slope) {
    if (batch) {
      net.add(std::make_unique<BatchNorm<T>>(channels));
    } else {
      net.add(std::make_unique<InstanceNorm<T>>(channels));
    }
    net.add(std::make_unique<Relu<T>>(slope));
  }
};

}  // namespace detail

// Encoder-decoder mask network: instance norm, plain rectification, tanh on
// the output conv. with_latent selects the generator form (z enters the first
// conv as constant channels); the purifier uses the identical spec without
// the latent.
//
// Head initialization differs on purpose. The purifier head starts at exactly
// zero, so an untrained purifier is the identity map. The generator head
// starts at 0.01x He: an exactly-zero generator head pins x_adv == x, which
// zeroes every loss gradient in the joint system at once (the obfuscation,
// GAN, hinge, and diversity terms all sit at stationary points) and training
// can never leave the initialization.
template <Scalar T>
Network<T> build_mask_network(const NetSpec& spec, std::size_t latent_dim, bool with_latent,
                              Rng& init_rng) {
  if (spec.front().kind != LayerSpec::Kind::Conv7 ||
      spec.back().kind != LayerSpec::Kind::Conv7) {
    throw ValidationError("generator/purifier spec must start and end with a c7s1 layer");
  }
  if (spec.back().width != kImageChannels) {
    throw ValidationError("generator/purifier spec must end with c7s1-3");
  }
  detail::BuilderState<T> st;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& l = spec[i];
    const bool last = i + 1 == spec.size();
    switch (l.kind) {
      case LayerSpec::Kind::Conv7: {
        if (i == 0 && with_latent) {
          auto conv = std::make_unique<ConvLatent<T>>(st.channels, latent_dim, l.width, 7,
                                                      &init_rng);
          if (last) detail::scale_tensor(conv->weight(), T(0.01));
          st.net.add(std::move(conv));
        } else {
          auto conv = std::make_unique<Conv2d<T>>(st.channels, l.width, 7, 1, 3, &init_rng);
          if (last) {
            if (with_latent) {
              detail::scale_tensor(conv->weight(), T(0.01));
              conv->bias().fill(T(0));
            } else {
              conv->zero_init_output();
            }
          }
          st.net.add(std::move(conv));
        }
        st.channels = l.width;
        if (last) {
          st.net.add(std::make_unique<Tanh<T>>());
        } else {
          st.norm_act(false, T(0));
        }
        break;
      }
      case LayerSpec::Kind::Down:
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 4, 2, 1, &init_rng));
        st.channels = l.width;
        st.norm_act(false, T(0));
        break;
      case LayerSpec::Kind::Residual:
        if (l.width != st.channels) {
          throw ValidationError("residual block width must match incoming channels");
        }
        st.net.add(std::make_unique<ResidualBlock<T>>(st.channels, false, T(0), &init_rng));
        break;
      case LayerSpec::Kind::Up:
        st.net.add(std::make_unique<UpsampleNearest2x<T>>());
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 5, 1, 2, &init_rng));
        st.channels = l.width;
        st.norm_act(false, T(0));
        break;
      case LayerSpec::Kind::Fc:
        throw ValidationError("fc layers are not valid in a generator/purifier spec");
    }
  }
  return std::move(st.net);
}

template <Scalar T>
Network<T> build_generator(const NetSpec& spec, std::size_t latent_dim, Rng& init_rng) {
  return build_mask_network<T>(spec, latent_dim, true, init_rng);
}

template <Scalar T>
Network<T> build_purifier(const NetSpec& spec, Rng& init_rng) {
  return build_mask_network<T>(spec, 0, false, init_rng);
}

// Patch discriminator: batch norm, leaky rectification, and a zero-initialized
// 1x1 head that yields one sigmoid realness score per patch.
template <Scalar T>
Network<T> build_discriminator(const NetSpec& spec, Rng& init_rng) {
  detail::BuilderState<T> st;
  for (const auto& l : spec) {
    switch (l.kind) {
      case LayerSpec::Kind::Down:
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 4, 2, 1, &init_rng));
        st.channels = l.width;
        st.norm_act(true, static_cast<T>(kLeakySlope));
        break;
      case LayerSpec::Kind::Conv7:
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 7, 1, 3, &init_rng));
        st.channels = l.width;
        st.norm_act(true, static_cast<T>(kLeakySlope));
        break;
      default:
        throw ValidationError("discriminator spec supports only conv layers");
    }
  }
  auto head = std::make_unique<Conv2d<T>>(st.channels, 1, 1, 1, 0, nullptr);
  head->zero_init_output();
  st.net.add(std::move(head));
  st.net.add(std::make_unique<Sigmoid<T>>());
  return std::move(st.net);
}

// Binary detector: conv trunk (batch norm, leaky rectification), then the
// spec's fc tail ending in one sigmoid unit. The final fc is zero-initialized
// so an untrained detector scores exactly 0.5.
template <Scalar T>
Network<T> build_detector(const NetSpec& spec, std::size_t input_hw, Rng& init_rng) {
  detail::BuilderState<T> st;
  st.hw = input_hw;
  bool in_fc = false;
  std::size_t flat_dim = 0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& l = spec[i];
    const bool last = i + 1 == spec.size();
    if (l.kind == LayerSpec::Kind::Fc) {
      if (!in_fc) {
        if (st.hw == 0) throw ValidationError("detector needs a known input size for fc layers");
        st.net.add(std::make_unique<Flatten<T>>());
        flat_dim = st.channels * st.hw * st.hw;
        in_fc = true;
      }
      st.net.add(std::make_unique<Fc<T>>(flat_dim, l.width, last ? nullptr : &init_rng));
      if (last) {
        if (l.width != 1) throw ValidationError("detector spec must end with fc1");
        auto& fc = dynamic_cast<Fc<T>&>(st.net.layer(st.net.num_layers() - 1));
        fc.zero_init_output();
        st.net.add(std::make_unique<Sigmoid<T>>());
      } else {
        st.net.add(std::make_unique<Relu<T>>(static_cast<T>(kLeakySlope)));
      }
      flat_dim = l.width;
      continue;
    }
    if (in_fc) throw ValidationError("conv layer after fc in detector spec");
    switch (l.kind) {
      case LayerSpec::Kind::Down:
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 4, 2, 1, &init_rng));
        st.channels = l.width;
        if (st.hw) st.hw = detail::conv_out_dim(st.hw, 4, 2, 1);
        st.norm_act(true, static_cast<T>(kLeakySlope));
        break;
      case LayerSpec::Kind::Conv7:
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 7, 1, 3, &init_rng));
        st.channels = l.width;
        st.norm_act(true, static_cast<T>(kLeakySlope));
        break;
      default:
        throw ValidationError("detector spec supports conv and fc layers only");
    }
  }
  if (!in_fc) throw ValidationError("detector spec must end in fc layers");
  return std::move(st.net);
}

// Matcher backbone: conv trunk, global average pool, embedding fc, then row
// normalization so embeddings leave with unit norm.
template <Scalar T>
Network<T> build_matcher_backbone(const NetSpec& spec, std::size_t embedding_dim,
                                  Rng& init_rng) {
  detail::BuilderState<T> st;
  for (const auto& l : spec) {
    switch (l.kind) {
      case LayerSpec::Kind::Down:
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 4, 2, 1, &init_rng));
        st.channels = l.width;
        st.norm_act(true, static_cast<T>(kLeakySlope));
        break;
      case LayerSpec::Kind::Conv7:
        st.net.add(std::make_unique<Conv2d<T>>(st.channels, l.width, 7, 1, 3, &init_rng));
        st.channels = l.width;
        st.norm_act(true, static_cast<T>(kLeakySlope));
        break;
      default:
        throw ValidationError("matcher spec supports only conv layers");
    }
  }
  st.net.add(std::make_unique<GlobalAvgPool<T>>());
  st.net.add(std::make_unique<Fc<T>>(st.channels, embedding_dim, &init_rng));
  st.net.add(std::make_unique<L2Normalize<T>>());
  return std::move(st.net);
}

}  // namespace faceguard
