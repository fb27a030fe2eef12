// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "faceguard/core/rng.hpp"
#include "faceguard/dataio/dataset.hpp"

namespace faceguard {

struct PairSet {
  // Pairs of indices into Dataset::images.
  std::vector<std::pair<std::size_t, std::size_t>> genuine;   // same subject
  std::vector<std::pair<std::size_t, std::size_t>> impostor;  // different subjects
};

// Genuine pairs are exhaustive over subjects with at least filter_min_images
// images. Impostor pairs are a seeded sample over the retained images; the
// full cross product is quadratic, so the sample size defaults to
// impostor_factor x genuine count.
inline PairSet make_pairs(const Dataset& ds, std::size_t filter_min_images,
                          std::uint64_t seed = 0, std::size_t impostor_factor = 10) {
  if (filter_min_images < 2) {
    throw ValidationError("make_pairs: filter_min_images must be >= 2");
  }
  std::vector<std::vector<std::size_t>> retained;
  for (const auto& [subject, indices] : ds.subjects) {
    if (indices.size() >= filter_min_images) retained.push_back(indices);
  }
  if (retained.empty()) {
    throw ValidationError("make_pairs: no subject has at least " +
                          std::to_string(filter_min_images) + " images");
  }

  PairSet pairs;
  for (const auto& indices : retained) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      for (std::size_t j = i + 1; j < indices.size(); ++j) {
        pairs.genuine.emplace_back(indices[i], indices[j]);
      }
    }
  }

  std::vector<std::size_t> pool;
  std::vector<std::size_t> subject_of;  // parallel to pool, retained-subject order
  for (std::size_t s = 0; s < retained.size(); ++s) {
    for (std::size_t idx : retained[s]) {
      pool.push_back(idx);
      subject_of.push_back(s);
    }
  }

  std::size_t cross_total = 0;
  {
    std::size_t same = 0;
    for (const auto& indices : retained) same += indices.size() * indices.size();
    cross_total = (pool.size() * pool.size() - same) / 2;
  }
  const std::size_t want = std::min(impostor_factor * pairs.genuine.size(), cross_total);

  Rng rng = derive_rng(seed, /*stream_id=*/0x1296u);
  if (retained.size() < 2 || want == 0) {
    return pairs;
  }
  if (cross_total <= 4 * want) {
    // Small enough to enumerate, shuffle, and truncate.
    std::vector<std::pair<std::size_t, std::size_t>> all;
    all.reserve(cross_total);
    for (std::size_t a = 0; a < pool.size(); ++a) {
      for (std::size_t b = a + 1; b < pool.size(); ++b) {
        if (subject_of[a] != subject_of[b]) all.emplace_back(pool[a], pool[b]);
      }
    }
    rng.shuffle(all);
    all.resize(want);
    pairs.impostor = std::move(all);
  } else {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (pairs.impostor.size() < want) {
      const std::size_t a = rng.index(pool.size());
      const std::size_t b = rng.index(pool.size());
      if (subject_of[a] == subject_of[b]) continue;
      auto p = std::minmax(pool[a], pool[b]);
      if (!seen.insert({p.first, p.second}).second) continue;
      pairs.impostor.emplace_back(p.first, p.second);
    }
  }
  return pairs;
}

}  // namespace faceguard
