// SPDX-License-Identifier: Apache-2.0
//
// faceguard: train, attack, and evaluate the adversarial-face defense from
// the command line. Subcommands mirror the pipeline stages; every artifact
// path is printed to stdout. Exit codes: 0 success, 1 runtime failure,
// 2 validation failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "faceguard/attacks/attacks.hpp"
#include "faceguard/dataio/image_io.hpp"
#include "faceguard/metrics/evaluate.hpp"
#include "faceguard/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace faceguard;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

struct CommonArgs {
  std::string config_path;
  Overrides overrides;
};

void add_override(Overrides& ov, const std::string& key, const std::string& value) {
  ov.emplace_back(key, value);
}

RunConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty()) {
    return RunConfig::from_map([&] {
      std::map<std::string, std::string> kv;
      for (const auto& [k, v] : args.overrides) kv[k] = v;
      return kv;
    }());
  }
  return RunConfig::load(args.config_path, args.overrides);
}

Dataset load_run_dataset(const RunConfig& cfg) {
  if (cfg.data_root.empty() || cfg.data_manifest.empty()) {
    throw ValidationError("data.root and data.manifest are required");
  }
  return load_dataset(cfg.data_root, cfg.data_manifest, cfg.image_size);
}

Tensor<float> load_single_image(const std::string& path, std::size_t expected_hw) {
  RawImage raw = read_raw_image(path, /*target_hw=*/0);
  if (raw.height != expected_hw || raw.width != expected_hw) {
    throw ShapeError("image is " + std::to_string(raw.height) + "x" +
                     std::to_string(raw.width) + " but the checkpoint expects " +
                     std::to_string(expected_hw) + "x" + std::to_string(expected_hw));
  }
  return normalize_image(raw).values;
}

int cmd_train_matcher(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  Dataset ds = load_run_dataset(cfg);
  Matcher matcher(cfg.matcher, ds.subjects.size());
  auto result = matcher.train(ds);
  fs::create_directories(cfg.out_dir);
  const fs::path out = fs::path(cfg.out_dir) / "matcher.ckpt";
  matcher.save(out);
  std::printf("train accuracy: %.4f\n", result.train_accuracy);
  std::printf("%s\n", out.string().c_str());
  return 0;
}

int cmd_train_defense(const CommonArgs& args, const std::string& resume_path) {
  RunConfig cfg = load_config(args);
  Dataset ds = load_run_dataset(cfg);
  std::optional<DefenseTrainer> trainer;
  if (!resume_path.empty()) {
    trainer.emplace(DefenseTrainer::resume(cfg, resume_path));
  } else {
    if (cfg.matcher_checkpoint.empty()) {
      throw ValidationError("paths.matcher_checkpoint is required to train the defense");
    }
    if (!fs::exists(cfg.matcher_checkpoint)) {
      throw ValidationError("matcher checkpoint not found: " + cfg.matcher_checkpoint);
    }
    trainer.emplace(cfg, Matcher::load(cfg.matcher_checkpoint));
  }
  trainer->train(ds, cfg.out_dir);
  std::printf("%s\n", (fs::path(cfg.out_dir) / "train_log.csv").string().c_str());
  std::printf("%s\n", (fs::path(cfg.out_dir) / "defense_final.ckpt").string().c_str());
  return 0;
}

int cmd_attack(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  Dataset ds = load_run_dataset(cfg);
  if (cfg.matcher_checkpoint.empty()) {
    throw ValidationError("paths.matcher_checkpoint is required for attacks");
  }
  Matcher matcher = Matcher::load(cfg.matcher_checkpoint);
  if (matcher.image_hw() != ds.image_hw) {
    throw ShapeError("matcher input size does not match the dataset image size");
  }
  fs::create_directories(cfg.out_dir);
  std::ofstream manifest(fs::path(cfg.out_dir) / "manifest.tsv");
  if (!manifest) throw IoError("cannot write attack manifest");
  for (const auto& img : ds.images) {
    Tensor<float> adv = run_attack(img.values, matcher, cfg.attack);
    const fs::path out_path = fs::path(cfg.out_dir) / img.image_id;
    write_face_image(out_path, adv);
    manifest << img.image_id << '\t' << img.subject_id << '\t' << cfg.attack.kind << '\n';
  }
  manifest.close();
  std::printf("%s\n", (fs::path(cfg.out_dir) / "manifest.tsv").string().c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint,
                 const std::vector<std::string>& attack_dirs) {
  RunConfig cfg = load_config(args);
  Dataset ds = load_run_dataset(cfg);
  if (checkpoint.empty()) throw ValidationError("--checkpoint is required");
  DefenseModel model = DefenseModel::load(checkpoint);
  if (model.image_hw != ds.image_hw) {
    throw ShapeError("dataset image size does not match the checkpoint");
  }
  Matcher eval_matcher = cfg.eval_matcher_checkpoint.empty()
                             ? Matcher::load_from_defense(checkpoint)
                             : Matcher::load(cfg.eval_matcher_checkpoint);
  std::map<std::string, Dataset> attacks;
  for (const auto& dir : attack_dirs) {
    auto groups = ingest_external_attacks(dir, fs::path(dir) / "manifest.tsv", ds.image_hw, &ds);
    for (auto& [name, group] : groups) {
      if (attacks.count(name)) {
        throw ValidationError("duplicate attack name across directories: " + name);
      }
      attacks[name] = std::move(group);
    }
  }
  EvalOptions opt;
  opt.far = cfg.eval.far;
  opt.tau = cfg.eval.tau;
  opt.always_purify = cfg.eval.always_purify;
  opt.min_images = cfg.eval.min_images;
  opt.impostor_factor = cfg.eval.impostor_factor;
  opt.seed = cfg.train.seed;
  EvalReport report = evaluate(model, eval_matcher, ds, attacks, opt);
  fs::create_directories(cfg.out_dir);
  const fs::path json_path = fs::path(cfg.out_dir) / "eval_report.json";
  std::ofstream out(json_path);
  out << report.to_json().dump(2) << '\n';
  out.close();
  std::fputs(report.to_text().c_str(), stdout);
  std::printf("%s\n", json_path.string().c_str());
  return 0;
}

int cmd_detect(const std::string& checkpoint, const std::string& image, double tau) {
  DefenseModel model = DefenseModel::load(checkpoint);
  Tensor<float> x = load_single_image(image, model.image_hw);
  const float score = model.detect_score(x);
  std::printf("score %.6f verdict %s (tau %.2f)\n", score,
              score >= tau ? "adversarial" : "real", tau);
  return 0;
}

int cmd_purify(const std::string& checkpoint, const std::string& image,
               const std::string& out_path) {
  DefenseModel model = DefenseModel::load(checkpoint);
  Tensor<float> x = load_single_image(image, model.image_hw);
  auto result = model.purify(x);
  write_face_image(out_path, result.image);
  std::printf("%s\n", out_path.c_str());
  return 0;
}

int cmd_localize(const std::string& checkpoint, const std::string& image,
                 const std::string& out_path) {
  DefenseModel model = DefenseModel::load(checkpoint);
  Tensor<float> x = load_single_image(image, model.image_hw);
  auto result = model.purify(x);
  Tensor<float> heat = localization_heatmap(result.mask);
  write_face_image(out_path, heatmap_overlay(x, heat));
  std::printf("%s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised adversarial-face defense"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string resume_path, checkpoint, image, out_path = "out.png";
  double tau = 0.5;
  std::vector<std::string> attack_dirs;

  auto add_common = [&](CLI::App* sub, const char* seed_key) {
    sub->add_option("--config", common.config_path, "run config file (key = value lines)");
    sub->add_option_function<std::string>(
        "--data-root", [&](const std::string& v) { add_override(common.overrides, "data.root", v); },
        "dataset root directory");
    sub->add_option_function<std::string>(
        "--manifest",
        [&](const std::string& v) { add_override(common.overrides, "data.manifest", v); },
        "dataset manifest (relative_path<TAB>subject_id)");
    sub->add_option_function<std::string>(
        "--image-size",
        [&](const std::string& v) { add_override(common.overrides, "data.image_size", v); },
        "square image size");
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& v) { add_override(common.overrides, "paths.out", v); },
        "output directory");
    sub->add_option_function<std::string>(
        "--seed",
        [&, seed_key](const std::string& v) { add_override(common.overrides, seed_key, v); },
        "seed for this command");
    sub->add_option_function<std::string>(
        "--matcher",
        [&](const std::string& v) {
          add_override(common.overrides, "paths.matcher_checkpoint", v);
        },
        "matcher checkpoint path");
  };

  auto* tm = app.add_subcommand("train-matcher", "train the embedding matcher");
  add_common(tm, "matcher.seed");

  auto* td = app.add_subcommand("train-defense", "jointly train generator/detector/purifier");
  add_common(td, "train.seed");
  td->add_option("--resume", resume_path, "defense checkpoint to resume from");
  td->add_option_function<std::string>(
      "--iterations",
      [&](const std::string& v) { add_override(common.overrides, "train.iterations", v); },
      "total training iterations");

  auto* at = app.add_subcommand("attack", "run a gradient attack against a matcher");
  add_common(at, "attack.seed");
  at->add_option_function<std::string>(
      "--kind", [&](const std::string& v) { add_override(common.overrides, "attack.kind", v); },
      "fgsm or pgd");
  at->add_option_function<std::string>(
      "--eps", [&](const std::string& v) { add_override(common.overrides, "attack.eps", v); },
      "L-inf bound in normalized units");
  at->add_option_function<std::string>(
      "--steps", [&](const std::string& v) { add_override(common.overrides, "attack.steps", v); },
      "pgd steps");
  at->add_option_function<std::string>(
      "--step-size",
      [&](const std::string& v) { add_override(common.overrides, "attack.step_size", v); },
      "pgd step size");

  auto* ev = app.add_subcommand("evaluate", "evaluate a defense checkpoint");
  add_common(ev, "train.seed");
  ev->add_option("--checkpoint", checkpoint, "defense checkpoint")->required();
  ev->add_option("--attack-dir", attack_dirs, "directory with attacked images + manifest.tsv");
  ev->add_option_function<std::string>(
      "--eval-matcher",
      [&](const std::string& v) {
        add_override(common.overrides, "paths.eval_matcher_checkpoint", v);
      },
      "matcher checkpoint used for verification scores");
  ev->add_option_function<std::string>(
      "--far", [&](const std::string& v) { add_override(common.overrides, "eval.far", v); },
      "false accept rate target");
  ev->add_option_function<std::string>(
      "--tau", [&](const std::string& v) { add_override(common.overrides, "eval.tau", v); },
      "detector threshold");
  ev->add_flag_function(
      "--always-purify",
      [&](std::int64_t) { add_override(common.overrides, "eval.always_purify", "true"); },
      "purify every probe regardless of the detector");

  auto* de = app.add_subcommand("detect", "score one image as real/adversarial");
  de->add_option("--checkpoint", checkpoint, "defense checkpoint")->required();
  de->add_option("--image", image, "input image")->required();
  de->add_option("--tau", tau, "detector threshold");

  auto* pu = app.add_subcommand("purify", "remove adversarial perturbations from one image");
  pu->add_option("--checkpoint", checkpoint, "defense checkpoint")->required();
  pu->add_option("--image", image, "input image")->required();
  pu->add_option("--out", out_path, "output image path");

  auto* lo = app.add_subcommand("localize", "write a perturbation-localization heatmap overlay");
  lo->add_option("--checkpoint", checkpoint, "defense checkpoint")->required();
  lo->add_option("--image", image, "input image")->required();
  lo->add_option("--out", out_path, "output image path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (tm->parsed()) return cmd_train_matcher(common);
    if (td->parsed()) return cmd_train_defense(common, resume_path);
    if (at->parsed()) return cmd_attack(common);
    if (ev->parsed()) return cmd_evaluate(common, checkpoint, attack_dirs);
    if (de->parsed()) return cmd_detect(checkpoint, image, tau);
    if (pu->parsed()) return cmd_purify(checkpoint, image, out_path);
    if (lo->parsed()) return cmd_localize(checkpoint, image, out_path);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
