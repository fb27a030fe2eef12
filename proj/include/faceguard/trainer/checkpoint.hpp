// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "faceguard/core/io.hpp"
#include "faceguard/matcher/matcher.hpp"
#include "faceguard/networks/compose.hpp"
#include "faceguard/networks/models.hpp"
#include "faceguard/trainer/config.hpp"

namespace faceguard {

// The four defense networks plus the frozen training matcher, as persisted in
// a defense checkpoint. Inference helpers run in evaluation mode (stored
// normalization statistics), so results are deterministic per checkpoint.
struct DefenseModel {
  Network<float> generator;
  Network<float> discriminator;
  Network<float> detector;
  Network<float> purifier;
  Matcher matcher;

  std::string gen_spec, dsc_spec, det_spec;
  std::size_t image_hw = 0;
  std::size_t latent_dim = 128;

  static DefenseModel build(const RunConfig& cfg, Matcher matcher) {
    DefenseModel m;
    m.gen_spec = cfg.net_generator;
    m.dsc_spec = cfg.net_discriminator;
    m.det_spec = cfg.net_detector;
    m.image_hw = cfg.image_size;
    m.latent_dim = cfg.latent_dim;
    if (matcher.image_hw() != cfg.image_size) {
      throw ShapeError("matcher input size does not match data.image_size");
    }
    m.matcher = std::move(matcher);
    Rng init = derive_rng(cfg.train.seed, /*stream_id=*/0x11u);
    m.generator = build_generator<float>(parse_net_spec(m.gen_spec), m.latent_dim, init);
    m.discriminator = build_discriminator<float>(parse_net_spec(m.dsc_spec), init);
    m.detector = build_detector<float>(parse_net_spec(m.det_spec), m.image_hw, init);
    m.purifier = build_purifier<float>(parse_net_spec(m.gen_spec), init);
    return m;
  }

  void check_image(const Tensor<float>& chw) const {
    if (chw.rank() != 3 || chw.dim(0) != kImageChannels || chw.dim(1) != image_hw ||
        chw.dim(2) != image_hw) {
      throw ShapeError("image does not match checkpoint input size (expected 3x" +
                       std::to_string(image_hw) + "x" + std::to_string(image_hw) + ")");
    }
  }

  // Scalar adversarial-ness score in [0,1]; 0 = real, 1 = adversarial.
  float detect_score(const Tensor<float>& chw) {
    check_image(chw);
    Tensor<float> batch = chw;
    batch.reshape({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    Tape<float> tape;
    Tensor<float> score = detector.forward(batch, tape, /*training=*/false);
    return score[0];
  }

  struct Purified {
    Tensor<float> mask;   // (3, H, W)
    Tensor<float> image;  // (3, H, W)
  };

  Purified purify(const Tensor<float>& chw) {
    check_image(chw);
    Tensor<float> batch = chw;
    batch.reshape({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    Tape<float> tape;
    Tensor<float> mask = purifier.forward(batch, tape, /*training=*/false);
    Tensor<float> out = compose_purified(batch, mask);
    mask.reshape(chw.shape());
    out.reshape(chw.shape());
    return {mask, out};
  }

  struct Generated {
    Tensor<float> mask;
    Tensor<float> image;
  };

  Generated generate(const Tensor<float>& chw, Rng& rng) {
    check_image(chw);
    Tensor<float> batch = chw;
    batch.reshape({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    Tensor<float> z({1, latent_dim});
    for (std::size_t i = 0; i < latent_dim; ++i) z[i] = static_cast<float>(rng.gaussian());
    Tape<float> tape;
    Tensor<float> mask = generator.forward(batch, z, tape, /*training=*/false);
    Tensor<float> out = compose_adversarial(batch, mask);
    mask.reshape(chw.shape());
    out.reshape(chw.shape());
    return {mask, out};
  }

  void write_into(BlobFile& blob) {
    blob.put_string("arch/generator", gen_spec);
    blob.put_string("arch/discriminator", dsc_spec);
    blob.put_string("arch/detector", det_spec);
    blob.put_u64("meta/image_hw", image_hw);
    blob.put_u64("meta/latent_dim", latent_dim);
    auto dump = [&blob](Network<float>& net, const std::string& prefix) {
      for (auto& p : net.params()) blob.put_tensor(prefix + "/" + p.name, *p.value);
      for (auto& b : net.buffers()) blob.put_tensor(prefix + "/" + b.name, *b.value);
    };
    dump(generator, "gen");
    dump(discriminator, "dsc");
    dump(detector, "det");
    dump(purifier, "pur");
    matcher.write_into(blob, "matcher");
  }

  static DefenseModel read_from(const BlobFile& blob) {
    DefenseModel m;
    m.gen_spec = blob.string("arch/generator");
    m.dsc_spec = blob.string("arch/discriminator");
    m.det_spec = blob.string("arch/detector");
    m.image_hw = blob.u64("meta/image_hw");
    m.latent_dim = blob.u64("meta/latent_dim");
    Rng init(0);  // weights are overwritten below
    m.generator = build_generator<float>(parse_net_spec(m.gen_spec), m.latent_dim, init);
    m.discriminator = build_discriminator<float>(parse_net_spec(m.dsc_spec), init);
    m.detector = build_detector<float>(parse_net_spec(m.det_spec), m.image_hw, init);
    m.purifier = build_purifier<float>(parse_net_spec(m.gen_spec), init);
    auto fill = [&blob](Network<float>& net, const std::string& prefix) {
      for (auto& p : net.params()) *p.value = blob.tensor(prefix + "/" + p.name);
      for (auto& b : net.buffers()) *b.value = blob.tensor(prefix + "/" + b.name);
    };
    fill(m.generator, "gen");
    fill(m.discriminator, "dsc");
    fill(m.detector, "det");
    fill(m.purifier, "pur");
    m.matcher.read_from(blob, "matcher");
    return m;
  }

  static DefenseModel load(const std::filesystem::path& path) {
    return read_from(BlobFile::load(path));
  }
};

}  // namespace faceguard
