// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "faceguard/dataio/pairs.hpp"
#include "faceguard/metrics/metrics.hpp"
#include "faceguard/trainer/checkpoint.hpp"

namespace faceguard {

struct EvalOptions {
  double far = 0.001;
  double tau = 0.5;
  bool always_purify = false;
  std::size_t min_images = 2;
  std::size_t impostor_factor = 10;
  std::uint64_t seed = 0;
};

struct AttackEval {
  std::size_t n_images = 0;
  double detection_accuracy = 0;
  double tar_no_defense = 0;
  double tar_with_defense = 0;
  double ssim_mean = 0;
  double ssim_std = 0;
};

struct EvalReport {
  double far = 0;
  double tau = 0;
  double threshold = 0;  // match threshold at the requested FAR
  std::size_t genuine_pairs = 0;
  std::size_t impostor_pairs = 0;
  double real_tar_no_defense = 0;
  double real_tar_with_defense = 0;
  std::map<std::string, AttackEval> attacks;
  double detection_mean = 0;
  double detection_std = 0;
  double mask_cos_mean = 0;
  double mask_cos_std = 0;
  std::size_t mask_cos_n = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["verification"]["far"] = far;
    j["verification"]["threshold"] = threshold;
    j["verification"]["genuine_pairs"] = genuine_pairs;
    j["verification"]["impostor_pairs"] = impostor_pairs;
    j["verification"]["real"]["tar_no_defense"] = real_tar_no_defense;
    j["verification"]["real"]["tar_with_defense"] = real_tar_with_defense;
    j["detection"]["tau"] = tau;
    for (const auto& [name, a] : attacks) {
      nlohmann::json ja;
      ja["n_images"] = a.n_images;
      ja["detection_accuracy"] = a.detection_accuracy;
      ja["tar_no_defense"] = a.tar_no_defense;
      ja["tar_with_defense"] = a.tar_with_defense;
      ja["ssim_mean"] = a.ssim_mean;
      ja["ssim_std"] = a.ssim_std;
      j["attacks"][name] = ja;
    }
    if (!attacks.empty()) {
      j["detection"]["mean"] = detection_mean;
      j["detection"]["std"] = detection_std;
    }
    if (mask_cos_n > 0) {
      j["mask_cosine"]["mean"] = mask_cos_mean;
      j["mask_cosine"]["std"] = mask_cos_std;
      j["mask_cosine"]["n"] = mask_cos_n;
    }
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "Verification TAR (%%) @ %.3g%% FAR (threshold %.4f)\n",
                  far * 100.0, threshold);
    os << buf;
    std::snprintf(buf, sizeof(buf), "  %-14s %10s %12s\n", "pairs", "no-defense", "with-defense");
    os << buf;
    std::snprintf(buf, sizeof(buf), "  %-14s %10.2f %12.2f\n", "real", real_tar_no_defense,
                  real_tar_with_defense);
    os << buf;
    for (const auto& [name, a] : attacks) {
      std::snprintf(buf, sizeof(buf), "  %-14s %10.2f %12.2f\n", name.c_str(),
                    a.tar_no_defense, a.tar_with_defense);
      os << buf;
    }
    if (!attacks.empty()) {
      std::snprintf(buf, sizeof(buf), "Detection accuracy (%%) at threshold %.2f\n", tau);
      os << buf;
      for (const auto& [name, a] : attacks) {
        std::snprintf(buf, sizeof(buf), "  %-14s %10.2f\n", name.c_str(),
                      a.detection_accuracy);
        os << buf;
      }
      std::snprintf(buf, sizeof(buf), "  %-14s %7.2f +- %.2f\n", "mean", detection_mean,
                    detection_std);
      os << buf;
      os << "SSIM vs source (mean +- std)\n";
      for (const auto& [name, a] : attacks) {
        std::snprintf(buf, sizeof(buf), "  %-14s %10.3f +- %.3f\n", name.c_str(), a.ssim_mean,
                      a.ssim_std);
        os << buf;
      }
    }
    if (mask_cos_n > 0) {
      std::snprintf(buf, sizeof(buf),
                    "Perturbation/purification mask cosine: %.3f +- %.3f (n=%zu)\n",
                    mask_cos_mean, mask_cos_std, mask_cos_n);
      os << buf;
    }
    return os.str();
  }
};

namespace evaldetail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace evaldetail

// Full evaluation protocol: verification TAR at a fixed FAR threshold from
// real impostor pairs, conditional detect-then-purify pipeline on the probe
// side, per-attack detection accuracy on balanced real/attacked sets, SSIM
// against sources, and the perturbation/purification mask correlation.
inline EvalReport evaluate(DefenseModel& model, Matcher& eval_matcher, const Dataset& real_ds,
                           const std::map<std::string, Dataset>& attacks_by_name,
                           const EvalOptions& opt) {
  EvalReport report;
  report.far = opt.far;
  report.tau = opt.tau;

  PairSet pairs = make_pairs(real_ds, opt.min_images, opt.seed, opt.impostor_factor);
  report.genuine_pairs = pairs.genuine.size();
  report.impostor_pairs = pairs.impostor.size();

  // Real-image embeddings (evaluation matcher), detector scores, purified
  // embeddings under the pipeline.
  const std::size_t n = real_ds.images.size();
  std::vector<Tensor<float>> emb(n);
  std::vector<float> det_score(n);
  std::vector<Tensor<float>> emb_defended(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<float>& img = real_ds.images[i].values;
    emb[i] = eval_matcher.embed_one(img);
    det_score[i] = model.detect_score(img);
    if (opt.always_purify || det_score[i] >= opt.tau) {
      emb_defended[i] = eval_matcher.embed_one(model.purify(img).image);
    } else {
      emb_defended[i] = emb[i];
    }
  }

  std::vector<double> impostor_scores;
  impostor_scores.reserve(pairs.impostor.size());
  for (const auto& [a, b] : pairs.impostor) {
    impostor_scores.push_back(cosine_similarity(emb[a], emb[b]));
  }
  if (impostor_scores.empty()) {
    throw ValidationError("evaluate: no impostor pairs (need >= 2 subjects)");
  }
  report.threshold = threshold_at_far(impostor_scores, opt.far);

  auto tar_against = [&](auto&& probe_embedding) {
    std::size_t accepted = 0, considered = 0;
    for (const auto& [a, b] : pairs.genuine) {
      const std::optional<double> s = probe_embedding(a, b);
      if (!s.has_value()) continue;  // probe has no attacked version
      ++considered;
      if (*s >= report.threshold) ++accepted;
    }
    return considered == 0
               ? 0.0
               : 100.0 * static_cast<double>(accepted) / static_cast<double>(considered);
  };

  report.real_tar_no_defense = tar_against([&](std::size_t a, std::size_t b) {
    return std::optional<double>(cosine_similarity(emb[a], emb[b]));
  });
  report.real_tar_with_defense = tar_against([&](std::size_t a, std::size_t b) {
    return std::optional<double>(cosine_similarity(emb[a], emb_defended[b]));
  });

  // Per-attack evaluation. Attacked images map to sources by image_id.
  std::vector<double> det_accs;
  for (const auto& [attack_name, attack_ds] : attacks_by_name) {
    AttackEval ae;
    ae.n_images = attack_ds.images.size();
    std::map<std::string, std::size_t> source_index;
    for (std::size_t i = 0; i < n; ++i) source_index[real_ds.images[i].image_id] = i;

    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<double> ssims;
    std::map<std::size_t, Tensor<float>> adv_emb;           // source idx -> embedding
    std::map<std::size_t, Tensor<float>> adv_emb_defended;  // under the pipeline
    for (const auto& img : attack_ds.images) {
      auto it = source_index.find(img.image_id);
      if (it == source_index.end()) {
        throw ValidationError("attack '" + attack_name + "' image '" + img.image_id +
                              "' has no matching source image");
      }
      const std::size_t src = it->second;
      const float s = model.detect_score(img.values);
      scores.push_back(s);
      labels.push_back(1);
      ssims.push_back(ssim(real_ds.images[src].values, img.values));
      adv_emb[src] = eval_matcher.embed_one(img.values);
      if (opt.always_purify || s >= opt.tau) {
        adv_emb_defended[src] = eval_matcher.embed_one(model.purify(img.values).image);
      } else {
        adv_emb_defended[src] = adv_emb[src];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      scores.push_back(det_score[i]);
      labels.push_back(0);
    }
    ae.detection_accuracy = detection_accuracy(scores, labels, opt.tau);

    ae.tar_no_defense = tar_against([&](std::size_t a, std::size_t b) -> std::optional<double> {
      auto it = adv_emb.find(b);
      if (it == adv_emb.end()) return std::nullopt;
      return cosine_similarity(emb[a], it->second);
    });
    ae.tar_with_defense =
        tar_against([&](std::size_t a, std::size_t b) -> std::optional<double> {
          auto it = adv_emb_defended.find(b);
          if (it == adv_emb_defended.end()) return std::nullopt;
          return cosine_similarity(emb[a], it->second);
        });
    auto [sm, ss] = evaldetail::mean_std(ssims);
    ae.ssim_mean = sm;
    ae.ssim_std = ss;
    det_accs.push_back(ae.detection_accuracy);
    report.attacks[attack_name] = ae;
  }
  if (!det_accs.empty()) {
    auto [dm, dstd] = evaldetail::mean_std(det_accs);
    report.detection_mean = dm;
    report.detection_std = dstd;
  }

  // Perturbation vs purification mask correlation on generator outputs.
  {
    Rng rng = derive_rng(opt.seed, 0x77u);
    std::vector<double> cosines;
    for (std::size_t i = 0; i < n; ++i) {
      auto gen = model.generate(real_ds.images[i].values, rng);
      auto pur = model.purify(gen.image);
      if (max_abs(gen.mask) == 0.0f || max_abs(pur.mask) == 0.0f) continue;
      cosines.push_back(mask_cosine(gen.mask, pur.mask));
    }
    auto [cm, cs] = evaldetail::mean_std(cosines);
    report.mask_cos_mean = cm;
    report.mask_cos_std = cs;
    report.mask_cos_n = cosines.size();
  }
  return report;
}

}  // namespace faceguard
