// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "faceguard/common.hpp"
#include "faceguard/core/io.hpp"
#include "faceguard/losses/losses.hpp"
#include "faceguard/matcher/matcher.hpp"
#include "faceguard/networks/models.hpp"

namespace faceguard {

struct LossWeights {
  double lambda_obf = 10.0;
  double lambda_fr = 10.0;
  double lambda_pt = 1.0;
  double lambda_perc = 1.0;
  double lambda_div = 1.0;
  double lambda_bf = 1.0;
  double epsilon = 3.0;
  MaskNorm perc_mask_norm = MaskNorm::L2;

  void validate() const {
    if (lambda_obf < 0 || lambda_fr < 0 || lambda_pt < 0 || lambda_perc < 0 ||
        lambda_div < 0 || lambda_bf < 0) {
      throw ValidationError("loss weights must be nonnegative");
    }
    if (!(epsilon > 0)) throw ValidationError("loss.epsilon must be positive");
  }
};

struct TrainConfig {
  std::uint64_t iterations = 5000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  std::uint64_t seed = 7;
  std::uint64_t checkpoint_interval = 1000;
  bool strict_alg1 = true;
  // Per-network overrides; negative means inherit learning_rate.
  double lr_generator = -1.0;
  double lr_discriminator = -1.0;
  double lr_detector = -1.0;
  double lr_purifier = -1.0;

  double lr_for(double override_value) const {
    return override_value >= 0 ? override_value : learning_rate;
  }

  void validate() const {
    if (iterations < 1) throw ValidationError("train.iterations must be >= 1");
    if (batch_size < 2 || batch_size % 2 != 0) {
      throw ValidationError("train.batch_size must be even and >= 2");
    }
    if (!(learning_rate >= 0)) throw ValidationError("train.learning_rate must be >= 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
      throw ValidationError("adam betas must be in [0,1)");
    }
    if (checkpoint_interval < 1) throw ValidationError("train.checkpoint_interval must be >= 1");
  }
};

struct AttackConfig {
  std::string kind = "fgsm";  // fgsm | pgd
  double eps = 0.0625;        // L-inf bound in normalized units (8/256 pixel units)
  std::size_t steps = 10;
  double step_size = -1.0;  // negative: eps / 4
  std::uint64_t seed = 5;

  double resolved_step_size() const { return step_size > 0 ? step_size : eps / 4.0; }

  void validate() const {
    if (kind != "fgsm" && kind != "pgd") throw ValidationError("attack.kind must be fgsm or pgd");
    if (!(eps > 0)) throw ValidationError("attack.eps must be positive");
    if (steps < 1) throw ValidationError("attack.steps must be >= 1");
    if (step_size != -1.0 && !(step_size > 0)) {
      throw ValidationError("attack.step_size must be positive (or omitted)");
    }
  }
};

struct EvalConfig {
  double far = 0.001;
  double tau = 0.5;
  bool always_purify = false;
  std::size_t impostor_factor = 10;
  std::size_t min_images = 2;

  void validate() const {
    if (!(far > 0 && far < 1)) throw ValidationError("eval.far must be in (0,1)");
    if (!(tau >= 0 && tau <= 1)) throw ValidationError("eval.tau must be in [0,1]");
    if (min_images < 2) throw ValidationError("eval.min_images must be >= 2");
  }
};

// One flat key=value schema shared by every subcommand. Unknown keys are
// rejected; command-line flags override file values.
struct RunConfig {
  std::string data_root;
  std::string data_manifest;
  std::size_t image_size = 160;

  MatcherConfig matcher;

  std::string net_generator = kDefaultGeneratorSpec;
  std::string net_discriminator = kDefaultDiscriminatorSpec;
  std::string net_detector = kDefaultDetectorSpec;
  std::size_t latent_dim = 128;

  LossWeights loss;
  TrainConfig train;
  AttackConfig attack;
  EvalConfig eval;

  std::string out_dir = "out";
  std::string matcher_checkpoint;
  std::string eval_matcher_checkpoint;

  static RunConfig load(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    if (!std::filesystem::exists(path)) {
      throw ValidationError("config file not found: " + path.string());
    }
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ValidationError("config line " + std::to_string(lineno) +
                              " is not key = value: " + path.string());
      }
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    for (const auto& [k, v] : overrides) kv[k] = v;
    return from_map(kv);
  }

  static RunConfig from_map(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    for (const auto& [key, value] : kv) cfg.apply(key, value);
    cfg.validate();
    return cfg;
  }

  void apply(const std::string& key, const std::string& value) {
    auto as_u64 = [&](const std::string& v) -> std::uint64_t {
      try {
        std::size_t used = 0;
        const auto parsed = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return parsed;
      } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': expected an integer, got '" + v + "'");
      }
    };
    auto as_f64 = [&](const std::string& v) -> double {
      try {
        std::size_t used = 0;
        const double parsed = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return parsed;
      } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': expected a number, got '" + v + "'");
      }
    };
    auto as_bool = [&](const std::string& v) -> bool {
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw ValidationError("config key '" + key + "': expected true/false, got '" + v + "'");
    };

    if (key == "data.root") data_root = value;
    else if (key == "data.manifest") data_manifest = value;
    else if (key == "data.image_size") image_size = as_u64(value);
    else if (key == "matcher.spec") matcher.spec = value;
    else if (key == "matcher.backbone_depth") matcher.backbone_depth = as_u64(value);
    else if (key == "matcher.embedding_dim") matcher.embedding_dim = as_u64(value);
    else if (key == "matcher.batch_size") matcher.batch_size = as_u64(value);
    else if (key == "matcher.epochs") matcher.train_epochs = as_u64(value);
    else if (key == "matcher.learning_rate") matcher.learning_rate = as_f64(value);
    else if (key == "matcher.seed") matcher.seed = as_u64(value);
    else if (key == "net.generator") net_generator = value;
    else if (key == "net.discriminator") net_discriminator = value;
    else if (key == "net.detector") net_detector = value;
    else if (key == "net.latent_dim") latent_dim = as_u64(value);
    else if (key == "loss.lambda_obf") loss.lambda_obf = as_f64(value);
    else if (key == "loss.lambda_fr") loss.lambda_fr = as_f64(value);
    else if (key == "loss.lambda_pt") loss.lambda_pt = as_f64(value);
    else if (key == "loss.lambda_perc") loss.lambda_perc = as_f64(value);
    else if (key == "loss.lambda_div") loss.lambda_div = as_f64(value);
    else if (key == "loss.lambda_bf") loss.lambda_bf = as_f64(value);
    else if (key == "loss.epsilon") loss.epsilon = as_f64(value);
    else if (key == "loss.perc_mask_norm") {
      if (value == "l1") loss.perc_mask_norm = MaskNorm::L1;
      else if (value == "l2") loss.perc_mask_norm = MaskNorm::L2;
      else throw ValidationError("loss.perc_mask_norm must be l1 or l2");
    }
    else if (key == "train.iterations") train.iterations = as_u64(value);
    else if (key == "train.batch_size") train.batch_size = as_u64(value);
    else if (key == "train.learning_rate") train.learning_rate = as_f64(value);
    else if (key == "train.adam_beta1") train.adam_beta1 = as_f64(value);
    else if (key == "train.adam_beta2") train.adam_beta2 = as_f64(value);
    else if (key == "train.seed") train.seed = as_u64(value);
    else if (key == "train.checkpoint_interval") train.checkpoint_interval = as_u64(value);
    else if (key == "train.strict_alg1") train.strict_alg1 = as_bool(value);
    else if (key == "train.lr_generator") train.lr_generator = as_f64(value);
    else if (key == "train.lr_discriminator") train.lr_discriminator = as_f64(value);
    else if (key == "train.lr_detector") train.lr_detector = as_f64(value);
    else if (key == "train.lr_purifier") train.lr_purifier = as_f64(value);
    else if (key == "attack.kind") attack.kind = value;
    else if (key == "attack.eps") attack.eps = as_f64(value);
    else if (key == "attack.steps") attack.steps = as_u64(value);
    else if (key == "attack.step_size") attack.step_size = as_f64(value);
    else if (key == "attack.seed") attack.seed = as_u64(value);
    else if (key == "eval.far") eval.far = as_f64(value);
    else if (key == "eval.tau") eval.tau = as_f64(value);
    else if (key == "eval.always_purify") eval.always_purify = as_bool(value);
    else if (key == "eval.impostor_factor") eval.impostor_factor = as_u64(value);
    else if (key == "eval.min_images") eval.min_images = as_u64(value);
    else if (key == "paths.out") out_dir = value;
    else if (key == "paths.matcher_checkpoint") matcher_checkpoint = value;
    else if (key == "paths.eval_matcher_checkpoint") eval_matcher_checkpoint = value;
    else throw ValidationError("unknown config key: '" + key + "'");
  }

  void validate() {
    matcher.image_hw = image_size;
    loss.validate();
    train.validate();
    attack.validate();
    eval.validate();
    matcher.validate();
    if (image_size < 8) throw ValidationError("data.image_size must be >= 8");
    if (latent_dim < 1) throw ValidationError("net.latent_dim must be >= 1");
    parse_net_spec(net_generator);
    parse_net_spec(net_discriminator);
    parse_net_spec(net_detector);
  }

  // Hash of the training-relevant configuration; checkpoints refuse to resume
  // under a different fingerprint.
  std::uint64_t fingerprint() const {
    std::ostringstream os;
    os << "image_size=" << image_size << ";latent=" << latent_dim << ";gen=" << net_generator
       << ";dsc=" << net_discriminator << ";det=" << net_detector
       << ";lobf=" << loss.lambda_obf << ";lfr=" << loss.lambda_fr << ";lpt=" << loss.lambda_pt
       << ";lperc=" << loss.lambda_perc << ";ldiv=" << loss.lambda_div
       << ";lbf=" << loss.lambda_bf << ";eps=" << loss.epsilon
       << ";mnorm=" << (loss.perc_mask_norm == MaskNorm::L2 ? "l2" : "l1")
       << ";bs=" << train.batch_size << ";lr=" << train.learning_rate
       << ";b1=" << train.adam_beta1 << ";b2=" << train.adam_beta2 << ";seed=" << train.seed
       << ";strict=" << train.strict_alg1 << ";lrg=" << train.lr_generator
       << ";lrd=" << train.lr_discriminator << ";lrdet=" << train.lr_detector
       << ";lrp=" << train.lr_purifier;
    return fnv1a(os.str());
  }
};

}  // namespace faceguard
