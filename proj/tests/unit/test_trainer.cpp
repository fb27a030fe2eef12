// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "faceguard/trainer/trainer.hpp"
#include "support/toy_data.hpp"

using namespace faceguard;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kHw = 16;

RunConfig tiny_config(std::uint64_t seed = 7) {
  std::map<std::string, std::string> kv{
      {"data.image_size", std::to_string(kHw)},
      {"net.generator", "c7s1-4,d8,R8,u4,c7s1-3"},
      {"net.discriminator", "d8,d16"},
      {"net.detector", "d8,d16,fc8,fc1"},
      {"net.latent_dim", "8"},
      {"matcher.spec", "d8"},
      {"matcher.embedding_dim", "8"},
      {"train.batch_size", "4"},
      {"train.iterations", "3"},
      {"train.seed", std::to_string(seed)},
      {"train.checkpoint_interval", "1000"},
  };
  return RunConfig::from_map(kv);
}

Matcher tiny_matcher(const RunConfig& cfg) { return Matcher(cfg.matcher, 2); }

Dataset trainer_dataset(const std::string& tag, std::size_t per_subject = 6) {
  const fs::path dir = fs::temp_directory_path() / "faceguard_tests" / ("trainer_" + tag);
  fs::remove_all(dir);
  toy::ToyOptions opt;
  opt.subjects = 2;
  opt.images_per_subject = per_subject;
  opt.hw = kHw;
  opt.seed = 3;
  return load_dataset(dir, toy::write_toy_dataset(dir, opt), kHw);
}

std::vector<float> flatten_params(Network<float>& net) {
  std::vector<float> out;
  for (auto& p : net.params()) {
    out.insert(out.end(), p.value->vec().begin(), p.value->vec().end());
  }
  return out;
}

std::vector<float> losses_of(const std::vector<TrainLogRecord>& recs) {
  std::vector<float> out;
  for (const auto& r : recs) {
    out.insert(out.end(), {r.loss_g, r.loss_gan_g, r.loss_obf, r.loss_pt, r.div_ratio,
                           r.loss_dsc, r.loss_d, r.loss_pur, r.loss_fr, r.loss_perc, r.loss_bf});
  }
  return out;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("sample_latent_pair: reproducible, distinct, near-standard moments") {
  Rng a(12), b(12);
  auto [z1a, z2a] = sample_latent_pair(a, 128);
  auto [z1b, z2b] = sample_latent_pair(b, 128);
  REQUIRE(z1a.vec() == z1b.vec());
  REQUIRE(z2a.vec() == z2b.vec());
  REQUIRE(z1a.vec() != z2a.vec());

  Rng c(99);
  const std::size_t dim = 16, draws = 10000;
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < draws / 2; ++i) {
    auto [z1, z2] = sample_latent_pair(c, dim);
    for (std::size_t d = 0; d < dim; ++d) mean[d] += z1[d] + z2[d];
  }
  for (std::size_t d = 0; d < dim; ++d) {
    CHECK(std::abs(mean[d] / draws) < 0.05);
  }
}

TEST_CASE("zero learning rates leave all weights unchanged but losses are logged") {
  RunConfig cfg = tiny_config();
  cfg.train.learning_rate = 0.0;
  Dataset ds = trainer_dataset("zerolr");
  DefenseTrainer trainer(cfg, tiny_matcher(cfg));
  auto before_g = flatten_params(trainer.model().generator);
  auto before_d = flatten_params(trainer.model().detector);
  auto before_dsc = flatten_params(trainer.model().discriminator);
  auto before_p = flatten_params(trainer.model().purifier);
  const fs::path out = fs::temp_directory_path() / "faceguard_tests" / "trainer_zerolr_out";
  fs::remove_all(out);
  auto recs = trainer.train(ds, out);
  REQUIRE(recs.size() == 3);
  for (const auto& r : recs) CHECK(r.finite());
  CHECK(flatten_params(trainer.model().generator) == before_g);
  CHECK(flatten_params(trainer.model().detector) == before_d);
  CHECK(flatten_params(trainer.model().discriminator) == before_dsc);
  CHECK(flatten_params(trainer.model().purifier) == before_p);
  CHECK(fs::exists(out / "train_log.csv"));
}

TEST_CASE("initial losses reflect the near-identity initialization") {
  // The generator head starts near zero, so x_adv ~ x: the obfuscation loss
  // opens at ~1 and the hinge sits on its floor. The detector head starts at
  // exactly zero, so its scores are exactly 0.5.
  RunConfig cfg = tiny_config();
  Dataset ds = trainer_dataset("initloss");
  DefenseTrainer trainer(cfg, tiny_matcher(cfg));
  Tensor<float> batch = Matcher::make_batch(ds, {0, 1, 2, 3});
  TrainLogRecord rec = trainer.step(batch);
  CHECK(rec.loss_obf == Approx(1.0).margin(0.05));
  CHECK(rec.loss_fr == Approx(-1.0).margin(0.05));
  CHECK(rec.loss_d == Approx(std::log(2.0)).margin(1e-5));
  CHECK(rec.div_ratio >= 0.0f);
  CHECK(rec.div_ratio < 1.0f);
  CHECK(rec.loss_pt == Approx(cfg.loss.epsilon).margin(1e-6));
}

TEST_CASE("same seed and config reproduce identical loss sequences") {
  RunConfig cfg = tiny_config();
  cfg.train.iterations = 5;
  Dataset ds = trainer_dataset("determinism");
  const fs::path out1 = fs::temp_directory_path() / "faceguard_tests" / "trainer_det1";
  const fs::path out2 = fs::temp_directory_path() / "faceguard_tests" / "trainer_det2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  DefenseTrainer t1(cfg, tiny_matcher(cfg));
  DefenseTrainer t2(cfg, tiny_matcher(cfg));
  auto r1 = t1.train(ds, out1);
  auto r2 = t2.train(ds, out2);
  REQUIRE(losses_of(r1) == losses_of(r2));
  REQUIRE(file_bytes(out1 / "defense_final.ckpt") == file_bytes(out2 / "defense_final.ckpt"));
}

TEST_CASE("one iteration yields one record; large interval yields only the final checkpoint") {
  RunConfig cfg = tiny_config();
  cfg.train.iterations = 1;
  cfg.train.checkpoint_interval = 50;
  Dataset ds = trainer_dataset("single");
  const fs::path out = fs::temp_directory_path() / "faceguard_tests" / "trainer_single_out";
  fs::remove_all(out);
  DefenseTrainer trainer(cfg, tiny_matcher(cfg));
  auto recs = trainer.train(ds, out);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].iteration == 1);
  std::size_t ckpts = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().extension() == ".ckpt") ++ckpts;
  }
  CHECK(ckpts == 1);  // defense_final.ckpt only
  std::ifstream log(out / "train_log.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 2);  // header + one record
}

TEST_CASE("matcher weights are bit-identical before and after training") {
  RunConfig cfg = tiny_config();
  Dataset ds = trainer_dataset("frozen");
  Matcher matcher = tiny_matcher(cfg);
  std::vector<float> before;
  for (auto& p : matcher.backbone().params()) {
    before.insert(before.end(), p.value->vec().begin(), p.value->vec().end());
  }
  DefenseTrainer trainer(cfg, std::move(matcher));
  const fs::path out = fs::temp_directory_path() / "faceguard_tests" / "trainer_frozen_out";
  fs::remove_all(out);
  trainer.train(ds, out);
  std::vector<float> after;
  for (auto& p : trainer.model().matcher.backbone().params()) {
    after.insert(after.end(), p.value->vec().begin(), p.value->vec().end());
  }
  REQUIRE(before == after);
}

TEST_CASE("pre-training checkpoint equals a fresh initialization checkpoint") {
  RunConfig cfg = tiny_config();
  const fs::path dir = fs::temp_directory_path() / "faceguard_tests" / "trainer_init";
  fs::remove_all(dir);
  fs::create_directories(dir);
  DefenseTrainer t1(cfg, tiny_matcher(cfg));
  DefenseTrainer t2(cfg, tiny_matcher(cfg));
  t1.save_checkpoint(dir / "a.ckpt");
  t2.save_checkpoint(dir / "b.ckpt");
  REQUIRE(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));
}

TEST_CASE("zeroing one learning rate freezes exactly that network") {
  RunConfig cfg = tiny_config();
  cfg.train.lr_detector = 0.0;
  cfg.train.iterations = 4;
  Dataset ds = trainer_dataset("freezedet");
  DefenseTrainer trainer(cfg, tiny_matcher(cfg));
  auto g_before = flatten_params(trainer.model().generator);
  auto d_before = flatten_params(trainer.model().detector);
  auto dsc_before = flatten_params(trainer.model().discriminator);
  auto p_before = flatten_params(trainer.model().purifier);
  const fs::path out = fs::temp_directory_path() / "faceguard_tests" / "trainer_freeze_out";
  fs::remove_all(out);
  trainer.train(ds, out);
  CHECK(flatten_params(trainer.model().detector) == d_before);
  CHECK(flatten_params(trainer.model().generator) != g_before);
  CHECK(flatten_params(trainer.model().discriminator) != dsc_before);
  CHECK(flatten_params(trainer.model().purifier) != p_before);
}

TEST_CASE("detector parameters do not influence the generator objective") {
  RunConfig cfg = tiny_config();
  Dataset ds = trainer_dataset("isolation");
  Tensor<float> batch = Matcher::make_batch(ds, {0, 1, 2, 3});

  DefenseTrainer a(cfg, tiny_matcher(cfg));
  DefenseTrainer b(cfg, tiny_matcher(cfg));
  // gradient probe: bump the detector's final fc weight in b only (the one
  // whose effect is visible through the zero-initialized head)
  auto params = b.model().detector.params();
  Tensor<float>& fc_w = *params[params.size() - 2].value;
  for (std::size_t i = 0; i < fc_w.size(); ++i) fc_w[i] += 0.05f;
  TrainLogRecord ra = a.step(batch);
  TrainLogRecord rb = b.step(batch);
  CHECK(ra.loss_g == rb.loss_g);
  CHECK(ra.loss_gan_g == rb.loss_gan_g);
  CHECK(ra.loss_obf == rb.loss_obf);
  CHECK(ra.loss_pt == rb.loss_pt);
  CHECK(ra.div_ratio == rb.div_ratio);
  CHECK(ra.loss_dsc == rb.loss_dsc);
  // while the detector-side losses do feel it
  CHECK(ra.loss_d != rb.loss_d);
}

TEST_CASE("resume reproduces the uninterrupted run exactly") {
  RunConfig cfg = tiny_config(21);
  cfg.train.iterations = 10;
  cfg.train.checkpoint_interval = 5;
  Dataset ds = trainer_dataset("resume", 8);

  const fs::path out_full = fs::temp_directory_path() / "faceguard_tests" / "resume_full";
  const fs::path out_split = fs::temp_directory_path() / "faceguard_tests" / "resume_split";
  fs::remove_all(out_full);
  fs::remove_all(out_split);

  DefenseTrainer full(cfg, tiny_matcher(cfg));
  auto full_recs = full.train(ds, out_full);

  RunConfig cfg_half = cfg;
  cfg_half.train.iterations = 5;
  DefenseTrainer half(cfg_half, tiny_matcher(cfg_half));
  half.train(ds, out_split);
  DefenseTrainer resumed = DefenseTrainer::resume(cfg, out_split / "defense_final.ckpt");
  auto tail = resumed.train(ds, out_split);

  REQUIRE(tail.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(tail[i].iteration == full_recs[5 + i].iteration);
    CHECK(tail[i].loss_g == full_recs[5 + i].loss_g);
    CHECK(tail[i].loss_d == full_recs[5 + i].loss_d);
    CHECK(tail[i].loss_pur == full_recs[5 + i].loss_pur);
    CHECK(tail[i].rng_digest == full_recs[5 + i].rng_digest);
  }
  REQUIRE(file_bytes(out_full / "defense_final.ckpt") ==
          file_bytes(out_split / "defense_final.ckpt"));
}

TEST_CASE("checkpoint load-then-save is byte-identical") {
  RunConfig cfg = tiny_config(31);
  cfg.train.iterations = 2;
  Dataset ds = trainer_dataset("roundtrip");
  const fs::path out = fs::temp_directory_path() / "faceguard_tests" / "trainer_rt_out";
  fs::remove_all(out);
  DefenseTrainer trainer(cfg, tiny_matcher(cfg));
  trainer.train(ds, out);
  DefenseTrainer loaded = DefenseTrainer::resume(cfg, out / "defense_final.ckpt");
  loaded.save_checkpoint(out / "resaved.ckpt");
  REQUIRE(file_bytes(out / "defense_final.ckpt") == file_bytes(out / "resaved.ckpt"));
}

TEST_CASE("resume refuses a mismatched config fingerprint") {
  RunConfig cfg = tiny_config(41);
  cfg.train.iterations = 1;
  Dataset ds = trainer_dataset("fpr");
  const fs::path out = fs::temp_directory_path() / "faceguard_tests" / "trainer_fpr_out";
  fs::remove_all(out);
  DefenseTrainer trainer(cfg, tiny_matcher(cfg));
  trainer.train(ds, out);
  RunConfig other = cfg;
  other.loss.lambda_obf = 99.0;
  CHECK_THROWS_AS(DefenseTrainer::resume(other, out / "defense_final.ckpt"), ValidationError);
}

TEST_CASE("non-finite losses abort with a diagnostic record") {
  RunConfig cfg = tiny_config(51);
  Dataset ds = trainer_dataset("nan");
  DefenseTrainer trainer(cfg, tiny_matcher(cfg));
  // poison the detector head bias: scores become NaN, losses go non-finite
  auto params = trainer.model().detector.params();
  (*params.back().value)[0] = std::numeric_limits<float>::quiet_NaN();
  Tensor<float> batch = Matcher::make_batch(ds, {0, 1, 2, 3});
  CHECK_THROWS_AS(trainer.step(batch), NumericError);
  REQUIRE(trainer.pending_abort_record() != nullptr);
  CHECK_FALSE(trainer.pending_abort_record()->finite());
}

TEST_CASE("sequential (non-strict) update order also trains deterministically") {
  RunConfig cfg = tiny_config(61);
  cfg.train.strict_alg1 = false;
  cfg.train.iterations = 3;
  Dataset ds = trainer_dataset("seq");
  const fs::path o1 = fs::temp_directory_path() / "faceguard_tests" / "trainer_seq1";
  const fs::path o2 = fs::temp_directory_path() / "faceguard_tests" / "trainer_seq2";
  fs::remove_all(o1);
  fs::remove_all(o2);
  DefenseTrainer t1(cfg, tiny_matcher(cfg));
  DefenseTrainer t2(cfg, tiny_matcher(cfg));
  auto r1 = t1.train(ds, o1);
  auto r2 = t2.train(ds, o2);
  REQUIRE(losses_of(r1) == losses_of(r2));
  for (const auto& r : r1) CHECK(r.finite());
}

TEST_CASE("training config validation") {
  RunConfig cfg = tiny_config();
  cfg.train.batch_size = 3;
  CHECK_THROWS_AS(cfg.train.validate(), ValidationError);
  cfg = tiny_config();
  cfg.train.iterations = 0;
  CHECK_THROWS_AS(cfg.train.validate(), ValidationError);
  cfg = tiny_config();
  cfg.loss.lambda_div = -1.0;
  CHECK_THROWS_AS(cfg.loss.validate(), ValidationError);

  // dataset smaller than the batch
  RunConfig small = tiny_config();
  small.train.batch_size = 16;
  Dataset ds = trainer_dataset("toosmall", 4);
  DefenseTrainer trainer(small, tiny_matcher(small));
  CHECK_THROWS_AS(trainer.train(ds, fs::temp_directory_path() / "faceguard_tests" / "nope"),
                  ValidationError);
}
