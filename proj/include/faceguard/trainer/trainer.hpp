// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "faceguard/losses/losses.hpp"
#include "faceguard/trainer/adam.hpp"
#include "faceguard/trainer/checkpoint.hpp"
#include "faceguard/trainer/config.hpp"

namespace faceguard {

// Two independent standard-normal latent draws from the run's seeded stream;
// z1 is drawn completely before z2.
inline std::pair<Tensor<float>, Tensor<float>> sample_latent_pair(Rng& stream,
                                                                  std::size_t dim = 128) {
  Tensor<float> z1({dim}), z2({dim});
  for (std::size_t i = 0; i < dim; ++i) z1[i] = static_cast<float>(stream.gaussian());
  for (std::size_t i = 0; i < dim; ++i) z2[i] = static_cast<float>(stream.gaussian());
  return {std::move(z1), std::move(z2)};
}

struct TrainLogRecord {
  std::uint64_t iteration = 0;
  float loss_g = 0, loss_gan_g = 0, loss_obf = 0, loss_pt = 0, div_ratio = 0;
  float loss_dsc = 0, loss_d = 0;
  float loss_pur = 0, loss_fr = 0, loss_perc = 0, loss_bf = 0;
  double wall_ms = 0;
  std::uint64_t rng_digest = 0;

  bool finite() const {
    const float vals[] = {loss_g,   loss_gan_g, loss_obf,  loss_pt,  div_ratio, loss_dsc,
                          loss_d,   loss_pur,   loss_fr,   loss_perc, loss_bf};
    for (float v : vals) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static const char* csv_header() {
    return "iteration,loss_g,loss_gan_g,loss_obf,loss_pt,div_ratio,loss_dsc,loss_d,"
           "loss_pur,loss_fr,loss_perc,loss_bf,wall_ms,rng_digest";
  }

  std::string csv_row() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f,%016llx",
                  static_cast<unsigned long long>(iteration), loss_g, loss_gan_g, loss_obf,
                  loss_pt, div_ratio, loss_dsc, loss_d, loss_pur, loss_fr, loss_perc, loss_bf,
                  wall_ms, static_cast<unsigned long long>(rng_digest));
    return buf;
  }
};

// Joint training of generator, discriminator, detector, and purifier against
// a frozen matcher. Each iteration samples one batch and applies four
// independent Adam updates; every loss back-propagates only into its own
// network's parameters. By default (strict_alg1) all gradients are evaluated
// at the pre-update weights; otherwise the discriminator/detector/purifier
// side recomputes its forwards after the generator update.
class DefenseTrainer {
 public:
  DefenseTrainer(const RunConfig& cfg, Matcher matcher)
      : cfg_(cfg),
        model_(DefenseModel::build(cfg, std::move(matcher))),
        latent_rng_(derive_rng(cfg.train.seed, 0x22u)),
        data_rng_(derive_rng(cfg.train.seed, 0x33u)) {
    init_optimizers();
  }

  static DefenseTrainer resume(const RunConfig& cfg, const std::filesystem::path& ckpt_path) {
    BlobFile blob = BlobFile::load(ckpt_path);
    if (blob.u64("meta/fingerprint") != cfg.fingerprint()) {
      throw ValidationError("checkpoint fingerprint does not match the run config; refusing "
                            "to resume from " + ckpt_path.string());
    }
    DefenseTrainer t(cfg);
    t.model_ = DefenseModel::read_from(blob);
    t.init_optimizers();
    t.opt_gen_.load(blob, "opt/gen");
    t.opt_dsc_.load(blob, "opt/dsc");
    t.opt_det_.load(blob, "opt/det");
    t.opt_pur_.load(blob, "opt/pur");
    t.latent_rng_.set_state(to_state(blob.u64s("rng/latent")));
    t.data_rng_.set_state(to_state(blob.u64s("rng/data")));
    t.perm_ = blob.u64s("data/perm");
    t.cursor_ = blob.u64("data/cursor");
    t.iteration_ = blob.u64("meta/iteration");
    return t;
  }

  void save_checkpoint(const std::filesystem::path& path) {
    BlobFile blob;
    blob.put_string("meta/kind", "defense");
    blob.put_u64("meta/version", 1);
    blob.put_u64("meta/fingerprint", cfg_.fingerprint());
    blob.put_u64("meta/iteration", iteration_);
    model_.write_into(blob);
    opt_gen_.save(blob, "opt/gen");
    opt_dsc_.save(blob, "opt/dsc");
    opt_det_.save(blob, "opt/det");
    opt_pur_.save(blob, "opt/pur");
    blob.put_u64s("rng/latent", from_state(latent_rng_.state()));
    blob.put_u64s("rng/data", from_state(data_rng_.state()));
    blob.put_u64s("data/perm", perm_);
    blob.put_u64("data/cursor", cursor_);
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    blob.save(path);
  }

  // Runs until cfg.train.iterations (or the earlier `until` bound when
  // nonzero), appending one CSV row per iteration and emitting checkpoints
  // every checkpoint_interval plus a final one.
  std::vector<TrainLogRecord> train(const Dataset& ds, const std::filesystem::path& out_dir,
                                    std::uint64_t until = 0) {
    const std::uint64_t target =
        until == 0 ? cfg_.train.iterations : std::min<std::uint64_t>(until, cfg_.train.iterations);
    if (ds.images.size() < cfg_.train.batch_size) {
      throw ValidationError("dataset smaller than train.batch_size");
    }
    if (ds.image_hw != model_.image_hw) {
      throw ShapeError("dataset image size does not match the configured image_size");
    }
    std::filesystem::create_directories(out_dir);
    const auto log_path = out_dir / "train_log.csv";
    const bool fresh_log = !std::filesystem::exists(log_path) || iteration_ == 0;
    std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot open training log: " + log_path.string());
    if (fresh_log) log << TrainLogRecord::csv_header() << '\n' << std::flush;

    std::vector<TrainLogRecord> records;
    while (iteration_ < target) {
      Tensor<float> batch = next_batch(ds);
      TrainLogRecord rec;
      try {
        rec = step(batch);
      } catch (const NumericError&) {
        if (pending_abort_record_.iteration != 0) {
          log << pending_abort_record_.csv_row() << '\n';
        }
        log << std::flush;
        throw;
      }
      log << rec.csv_row() << '\n' << std::flush;
      records.push_back(rec);
      if (iteration_ % cfg_.train.checkpoint_interval == 0 && iteration_ < target) {
        save_checkpoint(out_dir / ("defense_" + std::to_string(iteration_) + ".ckpt"));
      }
    }
    save_checkpoint(out_dir / "defense_final.ckpt");
    return records;
  }

  // One Algorithm-1 iteration over the given batch.
  TrainLogRecord step(const Tensor<float>& x) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t m = x.dim(0);
    Tensor<float> z1({m, model_.latent_dim}), z2({m, model_.latent_dim});
    for (std::size_t s = 0; s < m; ++s) {
      auto [a, b] = sample_latent_pair(latent_rng_, model_.latent_dim);
      std::copy(a.data(), a.data() + a.size(), z1.data() + s * model_.latent_dim);
      std::copy(b.data(), b.data() + b.size(), z2.data() + s * model_.latent_dim);
    }

    TrainLogRecord rec;
    rec.iteration = ++iteration_;
    if (cfg_.train.strict_alg1) {
      step_simultaneous(x, z1, z2, rec);
    } else {
      step_sequential(x, z1, z2, rec);
    }
    rec.rng_digest = latent_rng_.digest() ^ (data_rng_.digest() << 1);
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    if (!rec.finite()) {
      pending_abort_record_ = rec;
      throw NumericError("non-finite loss at iteration " + std::to_string(rec.iteration));
    }
    return rec;
  }

  DefenseModel& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  std::uint64_t iteration() const { return iteration_; }
  Rng& latent_rng() { return latent_rng_; }
  const TrainLogRecord* pending_abort_record() const {
    return pending_abort_record_.iteration ? &pending_abort_record_ : nullptr;
  }

 private:
  // Resume path: the model arrives from the checkpoint, not from build().
  explicit DefenseTrainer(const RunConfig& cfg)
      : cfg_(cfg),
        latent_rng_(derive_rng(cfg.train.seed, 0x22u)),
        data_rng_(derive_rng(cfg.train.seed, 0x33u)) {}

  void init_optimizers() {
    const float b1 = static_cast<float>(cfg_.train.adam_beta1);
    const float b2 = static_cast<float>(cfg_.train.adam_beta2);
    opt_gen_ = Adam<float>(model_.generator.params(), b1, b2);
    opt_dsc_ = Adam<float>(model_.discriminator.params(), b1, b2);
    opt_det_ = Adam<float>(model_.detector.params(), b1, b2);
    opt_pur_ = Adam<float>(model_.purifier.params(), b1, b2);
  }

  Tensor<float> next_batch(const Dataset& ds) {
    const std::size_t n = ds.images.size();
    const std::size_t m = cfg_.train.batch_size;
    if (perm_.size() != n) {
      perm_.resize(n);
      for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
      data_rng_.shuffle(perm_);
      cursor_ = 0;
    }
    if (cursor_ + m > n) {
      data_rng_.shuffle(perm_);
      cursor_ = 0;
    }
    std::vector<std::size_t> idx(perm_.begin() + cursor_, perm_.begin() + cursor_ + m);
    cursor_ += m;
    return Matcher::make_batch(ds, idx);
  }

  struct GeneratorLosses {
    float gan_g = 0, obf = 0, pt = 0, div = 0, total = 0;
  };

  // Computes the generator losses and accumulates parameter gradients.
  // Returns the forward products the other networks need in strict mode.
  struct GeneratorPass {
    Tensor<float> m1, x_adv;
    GeneratorLosses losses;
  };

  GeneratorPass generator_pass(const Tensor<float>& x, const Tensor<float>& z1,
                               const Tensor<float>& z2, const Tensor<float>& e_x) {
    const auto& lw = cfg_.loss;
    GeneratorPass out;
    Tape<float> tg1, tg2;
    out.m1 = model_.generator.forward(x, z1, tg1, true);
    Tensor<float> m2 = model_.generator.forward(x, z2, tg2, true);
    std::vector<std::uint8_t> inside_adv;
    out.x_adv = compose_adversarial(x, out.m1, &inside_adv);

    Tape<float> tf_adv;
    Tensor<float> e_adv = model_.matcher.embed_traced(out.x_adv, tf_adv);
    Tape<float> td_adv;
    Tensor<float> s_dsc_adv = model_.discriminator.forward(out.x_adv, td_adv, true);

    out.losses.gan_g = gan_generator_loss(s_dsc_adv);
    out.losses.obf = obfuscation_loss(e_x, e_adv);
    out.losses.pt = perturbation_loss(out.m1, static_cast<float>(lw.epsilon));
    out.losses.div = diversity_loss(out.m1, m2, z1, z2);
    out.losses.total = out.losses.gan_g + static_cast<float>(lw.lambda_obf) * out.losses.obf +
                       static_cast<float>(lw.lambda_pt) * out.losses.pt -
                       static_cast<float>(lw.lambda_div) * out.losses.div;

    model_.generator.zero_grads();
    Tensor<float> g_scores(s_dsc_adv.shape());
    gan_generator_loss_grad(s_dsc_adv, 1.0f, g_scores);
    Tensor<float> g_x_adv =
        model_.discriminator.backward(td_adv, g_scores, /*into_params=*/false, true);
    Tensor<float> g_e_adv(e_adv.shape());
    obfuscation_loss_grad<float>(e_x, e_adv, static_cast<float>(lw.lambda_obf), nullptr, &g_e_adv);
    axpy(1.0f, model_.matcher.backward_to_input(tf_adv, g_e_adv), g_x_adv);

    Tensor<float> g_m1 = compose_adversarial_grad_mask(g_x_adv, inside_adv);
    perturbation_loss_grad(out.m1, static_cast<float>(lw.epsilon),
                           static_cast<float>(lw.lambda_pt), g_m1);
    Tensor<float> g_m2(m2.shape());
    diversity_loss_grad(out.m1, m2, z1, z2, -static_cast<float>(lw.lambda_div), &g_m1, &g_m2);
    model_.generator.backward(tg1, g_m1, /*into_params=*/true, false);
    model_.generator.backward(tg2, g_m2, /*into_params=*/true, false);
    return out;
  }

  struct CriticLosses {
    float dsc = 0, d = 0, pur = 0, fr = 0, perc = 0, bf = 0;
  };

  // Discriminator, detector, and purifier losses and parameter gradients,
  // all computed against the given adversarial batch.
  CriticLosses critic_pass(const Tensor<float>& x, const Tensor<float>& x_adv,
                           const Tensor<float>& e_x) {
    const auto& lw = cfg_.loss;
    CriticLosses out;

    Tape<float> td_r, td_a;
    Tensor<float> s_dsc_r = model_.discriminator.forward(x, td_r, true);
    Tensor<float> s_dsc_a = model_.discriminator.forward(x_adv, td_a, true);
    Tape<float> tt_r, tt_a;
    Tensor<float> s_det_r = model_.detector.forward(x, tt_r, true);
    Tensor<float> s_det_a = model_.detector.forward(x_adv, tt_a, true);

    Tape<float> tp;
    Tensor<float> pm = model_.purifier.forward(x_adv, tp, true);
    std::vector<std::uint8_t> inside_pur;
    Tensor<float> x_pur = compose_purified(x_adv, pm, &inside_pur);
    Tape<float> tf_pur;
    Tensor<float> e_pur = model_.matcher.embed_traced(x_pur, tf_pur);
    Tape<float> tt_p;
    Tensor<float> s_det_p = model_.detector.forward(x_pur, tt_p, true);

    out.dsc = gan_discriminator_loss(s_dsc_r, s_dsc_a);
    out.d = detector_bce_loss(s_det_r, s_det_a);
    out.fr = feature_recovery_loss(e_x, e_pur);
    out.perc = perceptual_loss(x_pur, x, pm, lw.perc_mask_norm);
    out.bf = bonafide_loss(s_det_p);
    out.pur = static_cast<float>(lw.lambda_fr) * out.fr +
              static_cast<float>(lw.lambda_perc) * out.perc +
              static_cast<float>(lw.lambda_bf) * out.bf;

    // Discriminator gradients.
    model_.discriminator.zero_grads();
    Tensor<float> g_dsc_r(s_dsc_r.shape()), g_dsc_a(s_dsc_a.shape());
    gan_discriminator_loss_grad(s_dsc_r, s_dsc_a, 1.0f, g_dsc_r, g_dsc_a);
    model_.discriminator.backward(td_r, g_dsc_r, true, false);
    model_.discriminator.backward(td_a, g_dsc_a, true, false);

    // Detector gradients (its own BCE only).
    model_.detector.zero_grads();
    Tensor<float> g_det_r(s_det_r.shape()), g_det_a(s_det_a.shape());
    detector_bce_loss_grad(s_det_r, s_det_a, 1.0f, g_det_r, g_det_a);
    model_.detector.backward(tt_r, g_det_r, true, false);
    model_.detector.backward(tt_a, g_det_a, true, false);

    // Purifier gradients. The detector contributes only through the bonafide
    // term and only as a frozen critic; the matcher is frozen throughout.
    model_.purifier.zero_grads();
    Tensor<float> g_e_pur(e_pur.shape());
    feature_recovery_loss_grad<float>(e_x, e_pur, static_cast<float>(lw.lambda_fr), nullptr, &g_e_pur);
    Tensor<float> g_x_pur = model_.matcher.backward_to_input(tf_pur, g_e_pur);
    Tensor<float> g_pm_direct(pm.shape());
    perceptual_loss_grad(x_pur, x, pm, lw.perc_mask_norm, static_cast<float>(lw.lambda_perc),
                         &g_x_pur, &g_pm_direct);
    Tensor<float> g_s_det_p(s_det_p.shape());
    bonafide_loss_grad(s_det_p, static_cast<float>(lw.lambda_bf), g_s_det_p);
    axpy(1.0f, model_.detector.backward(tt_p, g_s_det_p, /*into_params=*/false, true), g_x_pur);
    Tensor<float> g_pm = compose_purified_grad_mask(g_x_pur, inside_pur);
    axpy(1.0f, g_pm_direct, g_pm);
    model_.purifier.backward(tp, g_pm, true, false);
    return out;
  }

  void apply_updates() {
    const auto& tc = cfg_.train;
    opt_gen_.step(model_.generator.params(), static_cast<float>(tc.lr_for(tc.lr_generator)));
    opt_dsc_.step(model_.discriminator.params(),
                  static_cast<float>(tc.lr_for(tc.lr_discriminator)));
    opt_det_.step(model_.detector.params(), static_cast<float>(tc.lr_for(tc.lr_detector)));
    opt_pur_.step(model_.purifier.params(), static_cast<float>(tc.lr_for(tc.lr_purifier)));
  }

  void step_simultaneous(const Tensor<float>& x, const Tensor<float>& z1,
                         const Tensor<float>& z2, TrainLogRecord& rec) {
    Tensor<float> e_x = model_.matcher.embed(x);
    GeneratorPass gp = generator_pass(x, z1, z2, e_x);
    CriticLosses cl = critic_pass(x, gp.x_adv, e_x);
    fill_record(rec, gp.losses, cl);
    apply_updates();
  }

  void step_sequential(const Tensor<float>& x, const Tensor<float>& z1, const Tensor<float>& z2,
                       TrainLogRecord& rec) {
    const auto& tc = cfg_.train;
    Tensor<float> e_x = model_.matcher.embed(x);
    GeneratorPass gp = generator_pass(x, z1, z2, e_x);
    opt_gen_.step(model_.generator.params(), static_cast<float>(tc.lr_for(tc.lr_generator)));

    // Refresh the adversarial batch with the updated generator (same z1).
    Tape<float> tg;
    Tensor<float> m1 = model_.generator.forward(x, z1, tg, true);
    Tensor<float> x_adv = compose_adversarial(x, m1);
    CriticLosses cl = critic_pass(x, x_adv, e_x);
    opt_dsc_.step(model_.discriminator.params(),
                  static_cast<float>(tc.lr_for(tc.lr_discriminator)));
    opt_det_.step(model_.detector.params(), static_cast<float>(tc.lr_for(tc.lr_detector)));
    opt_pur_.step(model_.purifier.params(), static_cast<float>(tc.lr_for(tc.lr_purifier)));
    fill_record(rec, gp.losses, cl);
  }

  void fill_record(TrainLogRecord& rec, const GeneratorLosses& g, const CriticLosses& c) {
    rec.loss_g = g.total;
    rec.loss_gan_g = g.gan_g;
    rec.loss_obf = g.obf;
    rec.loss_pt = g.pt;
    rec.div_ratio = g.div;
    rec.loss_dsc = c.dsc;
    rec.loss_d = c.d;
    rec.loss_pur = c.pur;
    rec.loss_fr = c.fr;
    rec.loss_perc = c.perc;
    rec.loss_bf = c.bf;
  }

  static std::array<std::uint64_t, 4> to_state(const std::vector<std::uint64_t>& v) {
    if (v.size() != 4) throw FormatError("bad rng state in checkpoint");
    return {v[0], v[1], v[2], v[3]};
  }

  static std::vector<std::uint64_t> from_state(const std::array<std::uint64_t, 4>& s) {
    return {s[0], s[1], s[2], s[3]};
  }

  RunConfig cfg_;
  DefenseModel model_;
  Adam<float> opt_gen_, opt_dsc_, opt_det_, opt_pur_;
  Rng latent_rng_, data_rng_;
  std::vector<std::uint64_t> perm_;
  std::uint64_t cursor_ = 0;
  std::uint64_t iteration_ = 0;
  TrainLogRecord pending_abort_record_{};
};

}  // namespace faceguard
