// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "faceguard/metrics/evaluate.hpp"
#include "faceguard/metrics/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace faceguard;
using Catch::Approx;

TEST_CASE("detection accuracy") {
  CHECK(detection_accuracy({0.0, 0.0, 1.0, 1.0}, {0, 0, 1, 1}) == 100.0);
  CHECK(detection_accuracy({0.0, 0.0, 0.0, 0.0}, {0, 0, 1, 1}) == 50.0);
  CHECK(detection_accuracy({0.4, 0.6, 0.7}, {0, 0, 1}) == Approx(100.0 * 2.0 / 3.0));
  // a score exactly at the threshold classifies as adversarial
  CHECK(detection_accuracy({0.5}, {1}) == 100.0);
  CHECK(detection_accuracy({0.5}, {0}) == 0.0);
  // constant-0.5 detector on a balanced set
  CHECK(detection_accuracy({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 50.0);
  CHECK_THROWS_AS(detection_accuracy({}, {}), ValidationError);
  CHECK_THROWS_AS(detection_accuracy({0.5}, {0, 1}), ValidationError);
}

TEST_CASE("detection accuracy is invariant under joint permutation") {
  Rng rng(3);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    scores.push_back(rng.uniform());
    labels.push_back(static_cast<int>(rng.index(2)));
  }
  const double base = detection_accuracy(scores, labels);
  std::vector<std::size_t> perm(scores.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<double> s2(scores.size());
  std::vector<int> l2(labels.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    s2[i] = scores[perm[i]];
    l2[i] = labels[perm[i]];
  }
  CHECK(detection_accuracy(s2, l2) == base);
}

TEST_CASE("tar_at_far: separable and identical-distribution cases") {
  std::vector<double> genuine{0.9, 0.95, 0.8, 0.85};
  std::vector<double> impostor{0.1, 0.2, 0.3, 0.15};
  auto [tar, thr] = tar_at_far(genuine, impostor, 0.2);  // no impostor may pass
  CHECK(tar == 100.0);
  CHECK(thr > 0.3);

  // genuine drawn from the impostor distribution: TAR tracks far
  Rng rng(5);
  std::vector<double> same(400);
  for (auto& s : same) s = rng.uniform(-1.0, 1.0);
  for (double far : {0.1, 0.25, 0.5}) {
    auto [t2, thr2] = tar_at_far(same, same, far);
    std::size_t passing = 0;
    for (double s : same) {
      if (s >= thr2) ++passing;
    }
    CHECK(t2 == Approx(100.0 * passing / same.size()));
    CHECK(t2 <= far * 100.0 + 1e-9);
    CHECK(t2 == Approx(far * 100.0).margin(100.0 / same.size() + 1e-9));
  }
  CHECK_THROWS_AS(tar_at_far({}, impostor, 0.1), NumericError);
  CHECK_THROWS_AS(tar_at_far(genuine, {}, 0.1), NumericError);
}

TEST_CASE("tar_at_far agrees with the exhaustive sweep oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t ng = 1 + rng.index(100);
    const std::size_t ni = 1 + rng.index(100);
    std::vector<double> genuine(ng), impostor(ni);
    for (auto& s : genuine) s = rng.uniform(-1.0, 1.0);
    for (auto& s : impostor) s = rng.uniform(-1.0, 1.0);
    const double far = rng.uniform(0.01, 0.99);

    auto [tar, thr] = tar_at_far(genuine, impostor, far);

    double best = std::numeric_limits<double>::infinity();
    for (double s : impostor) {
      for (double c : {s, std::nextafter(s, std::numeric_limits<double>::infinity())}) {
        std::size_t passing = 0;
        for (double x : impostor) {
          if (x >= c) ++passing;
        }
        if (static_cast<double>(passing) / static_cast<double>(ni) <= far) {
          best = std::min(best, c);
        }
      }
    }
    REQUIRE(thr == best);
    std::size_t accepted = 0;
    for (double s : genuine) {
      if (s >= best) ++accepted;
    }
    REQUIRE(tar == 100.0 * static_cast<double>(accepted) / static_cast<double>(ng));
  }
}

TEST_CASE("ssim: identity, symmetry, anticorrelation") {
  Rng rng(9);
  Tensor<float> x = testsupport::random_tensor<float>({3, 16, 16}, rng);
  CHECK(ssim(x, x) == 1.0);

  Tensor<float> y = testsupport::random_tensor<float>({3, 16, 16}, rng);
  CHECK(ssim(x, y) == ssim(y, x));
  CHECK(ssim(x, y) < 1.0);
  CHECK(ssim(x, y) >= -1.0);

  // Anticorrelation sign: a zero-mean texture against its negation. (Windows
  // with strong nonzero means flip both SSIM factors at once, so the sign
  // statement applies to the centered-texture regime.)
  Tensor<float> tex({3, 16, 16});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t yy = 0; yy < 16; ++yy) {
      for (std::size_t xx = 0; xx < 16; ++xx) {
        tex[c * 256 + yy * 16 + xx] = ((xx + yy) % 2 == 0) ? 0.5f : -0.5f;
      }
    }
  }
  Tensor<float> neg = tex;
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  CHECK(ssim(tex, neg) < 0.0);

  Tensor<float> small({3, 8, 8});
  CHECK_THROWS_AS(ssim(small, small), ShapeError);
}

TEST_CASE("ssim on constant patches matches the closed form") {
  // For constant images the structure/contrast term is C2/C2 = 1 and only the
  // luminance term remains: (2 m1 m2 + C1) / (m1^2 + m2^2 + C1).
  const double c1 = 0.0004;  // (0.01 * 2)^2
  for (auto [m1, m2] : std::vector<std::pair<double, double>>{
           {0.2, 0.6}, {-0.5, 0.5}, {0.0, 0.9}, {0.3, 0.3}}) {
    Tensor<float> a({3, 12, 12});
    Tensor<float> b({3, 12, 12});
    a.fill(static_cast<float>(m1));
    b.fill(static_cast<float>(m2));
    const double am = a[0], bm = b[0];  // float-rounded means
    const double expected = (2.0 * am * bm + c1) / (am * am + bm * bm + c1);
    CHECK(ssim(a, b) == Approx(expected).margin(1e-6));
  }
}

TEST_CASE("mask cosine") {
  Rng rng(11);
  Tensor<float> m = testsupport::random_tensor<float>({3, 4, 4}, rng);
  CHECK(mask_cosine(m, m) == Approx(1.0));
  Tensor<float> neg = m;
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  CHECK(mask_cosine(m, neg) == Approx(-1.0));

  // disjoint supports -> orthogonal
  Tensor<float> a({1, 2, 2}, {1.0f, 0.0f, 0.5f, 0.0f});
  Tensor<float> b({1, 2, 2}, {0.0f, 2.0f, 0.0f, -1.0f});
  CHECK(mask_cosine(a, b) == 0.0);

  Tensor<float> zero({3, 4, 4});
  CHECK_THROWS_AS(mask_cosine(m, zero), NumericError);
}

TEST_CASE("localization heatmap") {
  SECTION("zero mask gives a zero heatmap") {
    Tensor<float> mask({3, 4, 4});
    Tensor<float> heat = localization_heatmap(mask);
    CHECK(max_abs(heat) == 0.0f);
  }
  SECTION("single nonzero pixel maps to a single 1.0") {
    Tensor<float> mask({3, 4, 4});
    mask[1 * 16 + 5] = -0.7f;  // channel 1, pixel 5
    Tensor<float> heat = localization_heatmap(mask);
    std::size_t ones = 0, zeros = 0;
    for (std::size_t i = 0; i < heat.size(); ++i) {
      if (heat[i] == 1.0f) ++ones;
      if (heat[i] == 0.0f) ++zeros;
    }
    CHECK(ones == 1);
    CHECK(zeros == heat.size() - 1);
    CHECK(heat[5] == 1.0f);
  }
  SECTION("uniform magnitude degenerates to zeros") {
    Tensor<float> mask({3, 4, 4});
    mask.fill(0.25f);
    Tensor<float> heat = localization_heatmap(mask);
    CHECK(max_abs(heat) == 0.0f);
  }
  SECTION("range and argmax") {
    Rng rng(13);
    Tensor<float> mask = testsupport::random_tensor<float>({3, 6, 6}, rng);
    Tensor<float> heat = localization_heatmap(mask);
    std::size_t argmax_heat = 0, argmax_mag = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < heat.size(); ++i) {
      CHECK(heat[i] >= 0.0f);
      CHECK(heat[i] <= 1.0f);
      if (heat[i] > heat[argmax_heat]) argmax_heat = i;
      double mag = 0;
      for (std::size_t c = 0; c < 3; ++c) mag += std::abs(mask[c * 36 + i]);
      if (mag > best) {
        best = mag;
        argmax_mag = i;
      }
    }
    CHECK(argmax_heat == argmax_mag);
  }
}

TEST_CASE("heatmap overlay keeps shape and range") {
  Rng rng(15);
  Tensor<float> img = testsupport::random_tensor<float>({3, 6, 6}, rng);
  Tensor<float> mask = testsupport::random_tensor<float>({3, 6, 6}, rng);
  Tensor<float> heat = localization_heatmap(mask);
  Tensor<float> overlay = heatmap_overlay(img, heat);
  REQUIRE(overlay.same_shape(img));
  CHECK(max_abs(overlay) <= 1.0f);
}
